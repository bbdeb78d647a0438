"""Numba JIT convolution primitives.

Same contracts as ``numpy_backend``.  Loops are tap-outer / pixel-inner
(shift-and-accumulate) with precomputed valid index ranges, so interiors
run branch-free and the inner loops stay contiguous.  prange parallelism
only ever spans disjoint output slices (batch index or weight channel),
and for any single output element the taps accumulate in a fixed
(channel, ky, kx) order, so results are bit-deterministic across runs.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _ceil_div(a, b):
    return -((-a) // b)


@njit(parallel=True, cache=True)
def conv2d_fwd(x, w, stride, pad, dil, groups):
    n, cin, h, wid = x.shape
    cout, cing, kh, kw = w.shape
    oh = (h + 2 * pad - dil * (kh - 1) - 1) // stride + 1
    ow = (wid + 2 * pad - dil * (kw - 1) - 1) // stride + 1
    ocg = cout // groups
    out = np.zeros((n, cout, oh, ow), dtype=x.dtype)
    for ni in prange(n):
        for oc in range(cout):
            ic0 = (oc // ocg) * cing
            for c in range(cing):
                for ky in range(kh):
                    off_y = ky * dil - pad
                    oy_lo = max(0, _ceil_div(-off_y, stride))
                    oy_hi = min(oh, (h - 1 - off_y) // stride + 1)
                    for kx in range(kw):
                        wv = w[oc, c, ky, kx]
                        off_x = kx * dil - pad
                        ox_lo = max(0, _ceil_div(-off_x, stride))
                        ox_hi = min(ow, (wid - 1 - off_x) // stride + 1)
                        for oy in range(oy_lo, oy_hi):
                            orow = out[ni, oc, oy]
                            xrow = x[ni, ic0 + c, oy * stride + off_y]
                            if stride == 1:
                                for ox in range(ox_lo, ox_hi):
                                    orow[ox] += wv * xrow[ox + off_x]
                            else:
                                for ox in range(ox_lo, ox_hi):
                                    orow[ox] += wv * xrow[ox * stride + off_x]
    return out


@njit(parallel=True, cache=True)
def conv2d_bwd_w(x, gy, stride, pad, dil, groups, kh, kw):
    n, cin, h, wid = x.shape
    cout = gy.shape[1]
    oh = gy.shape[2]
    ow = gy.shape[3]
    cing = cin // groups
    ocg = cout // groups
    gw = np.zeros((cout, cing, kh, kw), dtype=x.dtype)
    for oc in prange(cout):
        ic0 = (oc // ocg) * cing
        for c in range(cing):
            for ky in range(kh):
                off_y = ky * dil - pad
                oy_lo = max(0, _ceil_div(-off_y, stride))
                oy_hi = min(oh, (h - 1 - off_y) // stride + 1)
                for kx in range(kw):
                    off_x = kx * dil - pad
                    ox_lo = max(0, _ceil_div(-off_x, stride))
                    ox_hi = min(ow, (wid - 1 - off_x) // stride + 1)
                    acc = 0.0
                    for ni in range(n):
                        for oy in range(oy_lo, oy_hi):
                            iy = oy * stride + off_y
                            for ox in range(ox_lo, ox_hi):
                                acc += gy[ni, oc, oy, ox] * x[ni, ic0 + c, iy, ox * stride + off_x]
                    gw[oc, c, ky, kx] = acc
    return gw


@njit(parallel=True, cache=True)
def tconv2d_fwd(x, wt, stride, pad, dil, out_h, out_w, groups):
    n, cin, h, wid = x.shape
    ocg = wt.shape[1]
    kh = wt.shape[2]
    kw = wt.shape[3]
    cing = cin // groups
    cout = ocg * groups
    out = np.zeros((n, cout, out_h, out_w), dtype=x.dtype)
    for ni in prange(n):
        for ic in range(cin):
            oc0 = (ic // cing) * ocg
            for o in range(ocg):
                for ky in range(kh):
                    off_y = ky * dil - pad
                    iy_lo = max(0, _ceil_div(-off_y, stride))
                    iy_hi = min(h, (out_h - 1 - off_y) // stride + 1)
                    for kx in range(kw):
                        wv = wt[ic, o, ky, kx]
                        off_x = kx * dil - pad
                        ix_lo = max(0, _ceil_div(-off_x, stride))
                        ix_hi = min(wid, (out_w - 1 - off_x) // stride + 1)
                        for iy in range(iy_lo, iy_hi):
                            oy = iy * stride + off_y
                            for ix in range(ix_lo, ix_hi):
                                out[ni, oc0 + o, oy, ix * stride + off_x] += wv * x[ni, ic, iy, ix]
    return out


@njit(parallel=True, cache=True)
def tconv2d_bwd_w(x, gy, stride, pad, dil, groups, kh, kw):
    n, cin, h, wid = x.shape
    cout = gy.shape[1]
    oh = gy.shape[2]
    ow = gy.shape[3]
    cing = cin // groups
    ocg = cout // groups
    gwt = np.zeros((cin, ocg, kh, kw), dtype=x.dtype)
    for ic in prange(cin):
        oc0 = (ic // cing) * ocg
        for o in range(ocg):
            for ky in range(kh):
                off_y = ky * dil - pad
                iy_lo = max(0, _ceil_div(-off_y, stride))
                iy_hi = min(h, (oh - 1 - off_y) // stride + 1)
                for kx in range(kw):
                    off_x = kx * dil - pad
                    ix_lo = max(0, _ceil_div(-off_x, stride))
                    ix_hi = min(wid, (ow - 1 - off_x) // stride + 1)
                    acc = 0.0
                    for ni in range(n):
                        for iy in range(iy_lo, iy_hi):
                            oy = iy * stride + off_y
                            for ix in range(ix_lo, ix_hi):
                                acc += x[ni, ic, iy, ix] * gy[ni, oc0 + o, oy, ix * stride + off_x]
                    gwt[ic, o, ky, kx] = acc
    return gwt
