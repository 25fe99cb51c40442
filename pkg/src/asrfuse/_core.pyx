# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the sequential dynamic programs.

Hot loops only: the blank-augmented alignment lattice recursions and the
token-level edit-distance table.  Everything else in the package is plain
numpy.  `asrfuse._core_py` provides drop-in pure-python equivalents.
"""

from libc.math cimport exp, log1p

cdef double NEG_INF = float("-inf")

BACKEND = "compiled"


cdef inline double logadd(double a, double b) nogil:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def lattice_alpha(double[:, ::1] blank_lp, double[:, ::1] label_lp,
                  double[:, ::1] alpha):
    """Forward scores over the (T+1) x (U+1) emission lattice.

    blank_lp[t, u] / label_lp[t, u] hold the blank / next-label log-prob at
    0-based frame t after u emitted labels.  alpha uses 1-based frame rows
    (row 0 is -inf padding, alpha[1, 0] = 0).  Returns the sequence
    log-likelihood alpha[T, U] + blank_lp[T-1, U].
    """
    cdef Py_ssize_t T = blank_lp.shape[0]
    cdef Py_ssize_t U = blank_lp.shape[1] - 1
    cdef Py_ssize_t t, u
    cdef double via_blank, via_label

    for u in range(U + 1):
        alpha[0, u] = NEG_INF
    alpha[1, 0] = 0.0
    with nogil:
        for t in range(1, T + 1):
            for u in range(U + 1):
                if t == 1 and u == 0:
                    continue
                via_blank = NEG_INF
                if t >= 2:
                    via_blank = alpha[t - 1, u] + blank_lp[t - 2, u]
                via_label = NEG_INF
                if u >= 1:
                    via_label = alpha[t, u - 1] + label_lp[t - 1, u - 1]
                alpha[t, u] = logadd(via_blank, via_label)
    return alpha[T, U] + blank_lp[T - 1, U]


def lattice_beta(double[:, ::1] blank_lp, double[:, ::1] label_lp,
                 double[:, ::1] beta):
    """Backward scores over the lattice; same indexing as lattice_alpha.

    beta[t, u] is the log-probability of completing the sequence from
    1-based frame t with u labels already out.  Returns beta[1, 0], which
    equals the lattice_alpha log-likelihood.
    """
    cdef Py_ssize_t T = blank_lp.shape[0]
    cdef Py_ssize_t U = blank_lp.shape[1] - 1
    cdef Py_ssize_t t, u
    cdef double via_blank, via_label

    for u in range(U + 1):
        beta[0, u] = NEG_INF
    with nogil:
        for t in range(T, 0, -1):
            for u in range(U, -1, -1):
                if t == T and u == U:
                    beta[t, u] = blank_lp[t - 1, u]
                    continue
                via_blank = NEG_INF
                if t < T:
                    via_blank = blank_lp[t - 1, u] + beta[t + 1, u]
                via_label = NEG_INF
                if u < U:
                    via_label = label_lp[t - 1, u] + beta[t, u + 1]
                beta[t, u] = logadd(via_blank, via_label)
    return beta[1, 0]


def edit_counts(long[::1] ref, long[::1] hyp):
    """Token-level Levenshtein counts (substitutions, insertions, deletions).

    Among minimum-cost alignments the one with the most exact matches is
    taken, which makes the (S, I, D) decomposition unique and mirror
    symmetric: edit_counts(b, a) swaps I and D and preserves S.
    """
    cdef Py_ssize_t n = ref.shape[0]
    cdef Py_ssize_t m = hyp.shape[0]
    cdef Py_ssize_t i, j
    cdef long c_diag, c_up, c_left, best_c
    cdef long m_diag, m_up, m_left, best_m
    cdef long[:, ::1] cost
    cdef long[:, ::1] match

    import numpy as np
    cost_arr = np.zeros((n + 1, m + 1), dtype=np.int64)
    match_arr = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost = cost_arr
    match = match_arr

    for i in range(1, n + 1):
        cost[i, 0] = i
    for j in range(1, m + 1):
        cost[0, j] = j
    with nogil:
        for i in range(1, n + 1):
            for j in range(1, m + 1):
                c_diag = cost[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
                m_diag = match[i - 1, j - 1] + (1 if ref[i - 1] == hyp[j - 1] else 0)
                c_up = cost[i - 1, j] + 1
                m_up = match[i - 1, j]
                c_left = cost[i, j - 1] + 1
                m_left = match[i, j - 1]
                best_c = c_diag
                best_m = m_diag
                if c_up < best_c or (c_up == best_c and m_up > best_m):
                    best_c = c_up
                    best_m = m_up
                if c_left < best_c or (c_left == best_c and m_left > best_m):
                    best_c = c_left
                    best_m = m_left
                cost[i, j] = best_c
                match[i, j] = best_m

    cdef long total = cost[n, m]
    cdef long matches = match[n, m]
    # diagonal moves + matches = n + m - cost, so all counts are determined
    cdef long diag = n + m - total - matches
    cdef long subs = diag - matches
    return subs, m - diag, n - diag
