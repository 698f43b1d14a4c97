# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the decode hot path.

Three primitives: fused page scoring (single pass over the page stats),
two-round radix top-k over uint16 keys, and streaming block softmax
attention. The python fallback in ``_kernels_py`` mirrors the contracts.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport expf, log, INFINITY

cnp.import_array()

NAME = "cython"


def fused_scores(float[:, ::1] queries, float[::1] norms,
                 float[:, ::1] means, float[::1] stds, float lam):
    """Group-max criticality scores, one f32 score per page.

    Reads each page's stats exactly once and writes one scalar per page;
    no group-by-page intermediate is materialized.
    """
    cdef Py_ssize_t n_groups = queries.shape[0]
    cdef Py_ssize_t dim = queries.shape[1]
    cdef Py_ssize_t n_pages = means.shape[0]
    out_arr = np.empty(n_pages, dtype=np.float32)
    cdef float[::1] out = out_arr
    cdef Py_ssize_t p, g, d
    cdef float acc, best
    for p in range(n_pages):
        best = -INFINITY
        for g in range(n_groups):
            acc = 0.0
            for d in range(dim):
                acc = acc + queries[g, d] * means[p, d]
            acc = acc + lam * norms[g] * stds[p]
            if acc > best:
                best = acc
        out[p] = best
    return out_arr


def radix_select_desc(unsigned short[::1] keys, Py_ssize_t k):
    """Pick the k largest of P uint16 keys, lowest index winning ties.

    Pass 1 histograms high bytes, pass 2 partitions against the boundary
    bucket and histograms its low bytes, pass 3 resolves ties inside that
    single bucket. Caller guarantees 1 <= k < len(keys).
    """
    cdef Py_ssize_t n = keys.shape[0]
    cdef long long hist_hi[256]
    cdef long long hist_lo[256]
    cdef Py_ssize_t i, j
    cdef int b, hi, lo, lb
    cdef long long above, above2, need, tie_budget, leftover

    for b in range(256):
        hist_hi[b] = 0
        hist_lo[b] = 0
    for i in range(n):  # pass 1
        hist_hi[keys[i] >> 8] += 1

    above = 0
    hi = 0
    for b in range(255, -1, -1):
        if above + hist_hi[b] >= k:
            hi = b
            break
        above += hist_hi[b]
    need = k - above

    sel_arr = np.empty(k, dtype=np.int64)
    bucket_arr = np.empty(hist_hi[hi], dtype=np.int64)
    cdef long long[::1] sel = sel_arr
    cdef long long[::1] bucket = bucket_arr
    cdef Py_ssize_t nsel = 0, nb = 0
    cdef int max_below_hi = -1
    cdef unsigned short kk
    for i in range(n):  # pass 2
        kk = keys[i]
        b = kk >> 8
        if b > hi:
            sel[nsel] = i
            nsel += 1
        elif b == hi:
            bucket[nb] = i
            nb += 1
            hist_lo[kk & 0xFF] += 1
        elif <int> kk > max_below_hi:
            max_below_hi = <int> kk

    above2 = 0
    lo = 0
    for b in range(255, -1, -1):
        if above2 + hist_lo[b] >= need:
            lo = b
            break
        above2 += hist_lo[b]
    tie_budget = need - above2
    leftover = hist_lo[lo] - tie_budget
    cdef int threshold = (hi << 8) | lo

    cdef int max_below_thr = max_below_hi
    for j in range(nb):  # pass 3: only the boundary bucket
        i = bucket[j]
        lb = keys[i] & 0xFF
        if lb > lo:
            sel[nsel] = i
            nsel += 1
        elif lb == lo:
            if tie_budget > 0:
                sel[nsel] = i
                nsel += 1
                tie_budget -= 1
        elif <int> keys[i] > max_below_thr:
            max_below_thr = <int> keys[i]

    cdef int kplus1
    if leftover > 0:
        kplus1 = threshold
    else:
        kplus1 = max_below_thr
    return sel_arr, threshold, kplus1, 3


def stream_attention(float[::1] q, float[:, ::1] keys, float[:, ::1] values,
                     float scale, Py_ssize_t block, float[::1] block_bias):
    """Streaming softmax attention with running-max rescaling.

    block_bias holds one additive logit bias per block of ``block`` rows.
    Accumulation is f32; the log-sum-exp is returned as a double.
    """
    cdef Py_ssize_t n = keys.shape[0]
    cdef Py_ssize_t dim = keys.shape[1]
    out_arr = np.zeros(dim, dtype=np.float32)
    buf_arr = np.empty(block, dtype=np.float32)
    cdef float[::1] acc = out_arr
    cdef float[::1] buf = buf_arr
    cdef float m = -INFINITY
    cdef float l = 0.0
    cdef float m_new, carry, w, s, bias
    cdef Py_ssize_t start, rows, i, d, bi
    bi = 0
    for start in range(0, n, block):
        rows = block if start + block <= n else n - start
        bias = block_bias[bi]
        bi += 1
        m_new = m
        for i in range(rows):
            s = 0.0
            for d in range(dim):
                s = s + keys[start + i, d] * q[d]
            s = s * scale + bias
            buf[i] = s
            if s > m_new:
                m_new = s
        carry = expf(m - m_new)
        l = l * carry
        for d in range(dim):
            acc[d] = acc[d] * carry
        for i in range(rows):
            w = expf(buf[i] - m_new)
            l = l + w
            for d in range(dim):
                acc[d] = acc[d] + w * values[start + i, d]
        m = m_new
    for d in range(dim):
        acc[d] = acc[d] / l
    return out_arr, <double> m + log(<double> l)
