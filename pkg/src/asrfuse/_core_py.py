"""Pure-python fallback for the compiled kernels in ``asrfuse._core``.

Same contracts, same numerics (both sides use log1p/exp two-term log-add),
just plain loops.  Used automatically when the extension is not built, or
when ASRFUSE_PURE_PYTHON=1.
"""

import math

NEG_INF = float("-inf")

BACKEND = "python"


def _logadd(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def lattice_alpha(blank_lp, label_lp, alpha):
    """Forward scores over the (T+1) x (U+1) emission lattice.

    blank_lp[t, u] / label_lp[t, u] hold the blank / next-label log-prob at
    0-based frame t after u emitted labels.  alpha uses 1-based frame rows
    (row 0 is -inf padding, alpha[1, 0] = 0).  Returns the sequence
    log-likelihood alpha[T, U] + blank_lp[T-1, U].
    """
    T = blank_lp.shape[0]
    U = blank_lp.shape[1] - 1
    alpha[0, :] = NEG_INF
    alpha[1, 0] = 0.0
    for t in range(1, T + 1):
        for u in range(U + 1):
            if t == 1 and u == 0:
                continue
            via_blank = alpha[t - 1, u] + blank_lp[t - 2, u] if t >= 2 else NEG_INF
            via_label = alpha[t, u - 1] + label_lp[t - 1, u - 1] if u >= 1 else NEG_INF
            alpha[t, u] = _logadd(via_blank, via_label)
    return alpha[T, U] + blank_lp[T - 1, U]


def lattice_beta(blank_lp, label_lp, beta):
    """Backward scores over the lattice; same indexing as lattice_alpha.

    beta[t, u] is the log-probability of completing the sequence from
    1-based frame t with u labels already out.  Returns beta[1, 0], which
    equals the lattice_alpha log-likelihood.
    """
    T = blank_lp.shape[0]
    U = blank_lp.shape[1] - 1
    beta[0, :] = NEG_INF
    for t in range(T, 0, -1):
        for u in range(U, -1, -1):
            if t == T and u == U:
                beta[t, u] = blank_lp[t - 1, u]
                continue
            via_blank = blank_lp[t - 1, u] + beta[t + 1, u] if t < T else NEG_INF
            via_label = label_lp[t - 1, u] + beta[t, u + 1] if u < U else NEG_INF
            beta[t, u] = _logadd(via_blank, via_label)
    return beta[1, 0]


def edit_counts(ref, hyp):
    """Token-level Levenshtein counts (substitutions, insertions, deletions).

    Among minimum-cost alignments the one with the most exact matches is
    taken, which makes the (S, I, D) decomposition unique and mirror
    symmetric: edit_counts(b, a) swaps I and D and preserves S.
    """
    n = len(ref)
    m = len(hyp)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    match = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = i
    for j in range(1, m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        ri = ref[i - 1]
        for j in range(1, m + 1):
            hit = ri == hyp[j - 1]
            best_c = cost[i - 1][j - 1] + (0 if hit else 1)
            best_m = match[i - 1][j - 1] + (1 if hit else 0)
            c_up = cost[i - 1][j] + 1
            if c_up < best_c or (c_up == best_c and match[i - 1][j] > best_m):
                best_c = c_up
                best_m = match[i - 1][j]
            c_left = cost[i][j - 1] + 1
            if c_left < best_c or (c_left == best_c and match[i][j - 1] > best_m):
                best_c = c_left
                best_m = match[i][j - 1]
            cost[i][j] = best_c
            match[i][j] = best_m
    total = cost[n][m]
    matches = match[n][m]
    diag = n + m - total - matches
    return diag - matches, m - diag, n - diag
