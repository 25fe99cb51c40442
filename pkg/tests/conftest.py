import numpy as np
import pytest

from asrfuse import models


@pytest.fixture
def tiny_rnnt_cfg():
    return models.RnntConfig(vocab_size=4, d_in=3, enc_layers=1, enc_hidden=5,
                             pred_layers=1, pred_hidden=5, embed_dim=4,
                             joint_dim=6)


@pytest.fixture
def tiny_aed_cfg():
    return models.AedConfig(vocab_size=4, d_in=3, enc_layers=1, enc_hidden=4,
                            dec_layers=1, dec_hidden=5, attn_dim=4,
                            attn_filters=3, attn_kernel=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
