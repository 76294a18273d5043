# cython: language_level=3
"""Compiled integer kernels; same contracts as ``_pykernels``."""
import numpy as np
cimport numpy as cnp

ctypedef cnp.int64_t i64


def conv_accumulate(const i64[:, :, :] fi, const i64[:, :, :, :] w, int stride,
                    int out_h, int out_w):
    cdef Py_ssize_t M = w.shape[0], N = w.shape[1], K = w.shape[2]
    out = np.zeros((M, out_h, out_w), dtype=np.int64)
    cdef i64[:, :, :] acc = out
    cdef Py_ssize_t m, n, i, j, y, x, r
    cdef i64 wv
    for m in range(M):
        for n in range(N):
            for i in range(K):
                for j in range(K):
                    wv = w[m, n, i, j]
                    if wv == 0:
                        continue
                    for y in range(out_h):
                        r = y * stride + i
                        for x in range(out_w):
                            acc[m, y, x] += wv * fi[n, r, x * stride + j]
    return out


def depthwise_accumulate(const i64[:, :, :] fi, const i64[:, :, :] w, int stride,
                         int out_h, int out_w):
    cdef Py_ssize_t N = w.shape[0], K = w.shape[1]
    out = np.zeros((N, out_h, out_w), dtype=np.int64)
    cdef i64[:, :, :] acc = out
    cdef Py_ssize_t n, i, j, y, x, r
    cdef i64 wv
    for n in range(N):
        for i in range(K):
            for j in range(K):
                wv = w[n, i, j]
                if wv == 0:
                    continue
                for y in range(out_h):
                    r = y * stride + i
                    for x in range(out_w):
                        acc[n, y, x] += wv * fi[n, r, x * stride + j]
    return out


def window_conv(const i64[:, :, :, :] wg, const i64[:, :, :] window, i64[:] acc):
    cdef Py_ssize_t M = wg.shape[0], N = wg.shape[1], K = wg.shape[2]
    cdef Py_ssize_t m, n, i, j
    cdef i64 s, wv
    for m in range(M):
        s = 0
        for n in range(N):
            for i in range(K):
                for j in range(K):
                    wv = wg[m, n, i, j]
                    if wv != 0:
                        s += wv * window[n, i, j]
        acc[m] += s


def window_depthwise(const i64[:, :, :] wg, const i64[:, :, :] window):
    cdef Py_ssize_t N = wg.shape[0], K = wg.shape[1]
    out = np.zeros(N, dtype=np.int64)
    cdef i64[:] o = out
    cdef Py_ssize_t n, i, j
    cdef i64 s
    for n in range(N):
        s = 0
        for i in range(K):
            for j in range(K):
                s += wg[n, i, j] * window[n, i, j]
        o[n] = s
    return out


def window_max(const i64[:, :, :] window, valid):
    cdef const cnp.uint8_t[:, :] v = np.ascontiguousarray(valid, dtype=np.uint8)
    cdef Py_ssize_t N = window.shape[0], K = window.shape[1], L = window.shape[2]
    out = np.empty(N, dtype=np.int64)
    cdef i64[:] o = out
    cdef Py_ssize_t n, i, j
    cdef i64 best
    cdef bint seen
    for n in range(N):
        seen = False
        best = 0
        for i in range(K):
            for j in range(L):
                if v[i, j] and (not seen or window[n, i, j] > best):
                    best = window[n, i, j]
                    seen = True
        o[n] = best if seen else -9223372036854775807 - 1
    return out


def window_sum(const i64[:, :, :] window, valid):
    cdef const cnp.uint8_t[:, :] v = np.ascontiguousarray(valid, dtype=np.uint8)
    cdef Py_ssize_t N = window.shape[0], K = window.shape[1], L = window.shape[2]
    out = np.zeros(N, dtype=np.int64)
    cdef i64[:] o = out
    cdef Py_ssize_t n, i, j
    for n in range(N):
        for i in range(K):
            for j in range(L):
                if v[i, j]:
                    o[n] += window[n, i, j]
    return out
