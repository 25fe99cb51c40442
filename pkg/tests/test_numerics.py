"""log_softmax contracts and the finite-difference harness."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asrfuse.numerics import (GradCheckReport, LogProbVector,
                              NonDeterministicFunction, grad_check,
                              log_softmax, logsumexp)
from asrfuse.params import ParamStore


def two_pass_reference(x):
    """Shifted two-pass log-softmax with exact (fsum) accumulation."""
    m = max(x)
    z = math.fsum(math.exp(v - m) for v in x)
    return [v - m - math.log(z) for v in x]


class TestLogSoftmax:
    def test_uniform_logits(self):
        out = log_softmax(np.zeros(4))
        np.testing.assert_allclose(out, np.full(4, -math.log(4)), atol=1e-15)

    def test_shift_invariance(self):
        c, delta = 13.7, 0.9
        a = log_softmax(np.array([c, c + delta]))
        b = log_softmax(np.array([0.0, delta]))
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_matches_exact_summation_reference(self):
        rng = np.random.default_rng(42)
        x = rng.normal(0, 5, size=5)
        np.testing.assert_allclose(log_softmax(x), two_pass_reference(list(x)),
                                   atol=1e-14)

    def test_normalized_and_argmax_preserved(self):
        rng = np.random.default_rng(43)
        for _ in range(50):
            x = rng.normal(0, 10, size=int(rng.integers(1, 12)))
            out = log_softmax(x)
            assert abs(logsumexp(out)) < 1e-9
            assert np.argmax(out) == np.argmax(x)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=16),
           st.floats(-30, 30))
    @settings(max_examples=100, deadline=None)
    def test_shift_invariance_property(self, vals, shift):
        x = np.asarray(vals)
        np.testing.assert_allclose(log_softmax(x + shift), log_softmax(x),
                                   atol=1e-9)

    def test_rejects_non_finite_with_index(self):
        x = np.array([0.0, np.nan, 1.0])
        with pytest.raises(ValueError, match=r"index \(1,\)"):
            log_softmax(x)
        with pytest.raises(ValueError, match="non-finite"):
            log_softmax(np.array([np.inf, 0.0]))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            log_softmax(np.zeros(0))

    def test_logprobvector_validate(self):
        LogProbVector(log_softmax(np.array([1.0, 2.0]))).validate()
        with pytest.raises(ValueError):
            LogProbVector(np.array([-1.0, -1.0])).validate()


def quadratic_store(rng):
    store = ParamStore()
    store.create("a", rng.uniform(0.5, 1.5, size=(3, 4)))
    store.create("b", rng.uniform(0.5, 1.5, size=7))
    return store


def sum_of_squares(params):
    total = 0.0
    for name in params.names():
        arr = params[name]
        total += float(np.sum(arr * arr))
        params.add_grad(name, 2.0 * arr)
    return total


class TestGradCheck:
    def test_quadratic_is_nearly_exact(self, rng):
        store = quadratic_store(rng)
        report = grad_check(sum_of_squares, store, eps=1e-5, tol=1e-8)
        assert isinstance(report, GradCheckReport)
        assert report.passed
        assert report.max_rel_err < 1e-8
        assert report.n_checked == store.n_elements()

    def test_wrong_gradient_detected(self, rng):
        store = quadratic_store(rng)

        def bad(params):
            total = 0.0
            for name in params.names():
                arr = params[name]
                total += float(np.sum(arr * arr))
                params.add_grad(name, 3.0 * arr)  # wrong slope
            return total

        report = grad_check(bad, store, eps=1e-5, tol=1e-4)
        assert not report.passed

    def test_nondeterministic_function_hard_failure(self, rng):
        store = quadratic_store(rng)
        calls = []

        def flaky(params):
            calls.append(None)
            return float(len(calls))

        with pytest.raises(NonDeterministicFunction):
            grad_check(flaky, store, eps=1e-5, tol=1e-4)

    def test_subsample_is_seeded_and_bounded(self, rng):
        store = ParamStore()
        store.create("w", rng.normal(size=500))

        def f(params):
            arr = params["w"]
            params.add_grad("w", 2.0 * arr)
            return float(np.sum(arr * arr))

        r1 = grad_check(f, store, eps=1e-5, tol=1e-6, n_sample=120, seed=3)
        r2 = grad_check(f, store, eps=1e-5, tol=1e-6, n_sample=120, seed=3)
        assert r1.n_checked == 120
        assert r1.n_checked >= 100
        assert r1.max_rel_err == r2.max_rel_err

    def test_eps_bounds_enforced(self, rng):
        store = quadratic_store(rng)
        with pytest.raises(ValueError):
            grad_check(sum_of_squares, store, eps=1e-8, tol=1e-4)
