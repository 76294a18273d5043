"""Numpy implementations of the integer kernels (the fallback backend).

All arrays are int64.  Feature maps are (channels, rows, cols) and already
zero-padded; weights are (M, N, K, K) or (N, K, K) for depthwise.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(fi_padded, k, stride, out_h, out_w):
    win = sliding_window_view(fi_padded, (k, k), axis=(1, 2))
    return win[:, : (out_h - 1) * stride + 1 : stride, : (out_w - 1) * stride + 1 : stride]


def conv_accumulate(fi_padded, w, stride, out_h, out_w):
    """Raw accumulators (M, out_h, out_w) of a standard convolution."""
    k = w.shape[2]
    win = _windows(fi_padded, k, stride, out_h, out_w)  # (N, oh, ow, K, K)
    return np.einsum("nyxij,mnij->myx", win, w, optimize=True).astype(np.int64)


def depthwise_accumulate(fi_padded, w, stride, out_h, out_w):
    k = w.shape[1]
    win = _windows(fi_padded, k, stride, out_h, out_w)
    return np.einsum("nyxij,nij->nyx", win, w).astype(np.int64)


def window_conv(wg, window, acc):
    """acc[m] += sum_{n,i,j} wg[m,n,i,j] * window[n,i,j]  (in place)."""
    acc += np.tensordot(wg, window, axes=3)


def window_depthwise(wg, window):
    return np.einsum("nij,nij->n", wg, window)


def window_max(window, valid):
    """Per-channel max over the valid (non-padding) window positions."""
    return np.where(valid, window, np.iinfo(np.int64).min).reshape(window.shape[0], -1).max(axis=1)


def window_sum(window, valid):
    return np.where(valid, window, 0).reshape(window.shape[0], -1).sum(axis=1)
