"""Pure-numpy convolution primitives (patch-matrix lowering).

Fallback path for environments without numba; see ``kernels.__init__``
for backend selection.  All four primitives share index conventions:

* ``conv2d_fwd``  gather:  y[n,oc,o,p] = sum x[n,ic,o*s-pad+d*k, p*s-pad+d*l] * w[oc,icg,k,l]
* ``tconv2d_fwd`` scatter: y[n,oc,i*s-pad+d*k, j*s-pad+d*l] += x[n,ic,i,j] * wt[ic,ocg,k,l]

Weights are grouped: conv weights are (cout, cin/g, kh, kw), transposed
weights are (cin, cout/g, kh, kw).
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _out_extent(n: int, stride: int, pad: int, dil: int, k: int) -> int:
    return (n + 2 * pad - dil * (k - 1) - 1) // stride + 1


def _patch_view(xp: np.ndarray, oh: int, ow: int, stride: int, dil: int, kh: int, kw: int):
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp, (n, c, oh, ow, kh, kw),
        (sn, sc, sh * stride, sw * stride, sh * dil, sw * dil),
        writeable=False)


def conv2d_fwd(x, w, stride, pad, dil, groups):
    n, cin, h, wid = x.shape
    cout, cing, kh, kw = w.shape
    oh = _out_extent(h, stride, pad, dil, kh)
    ow = _out_extent(wid, stride, pad, dil, kw)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    view = _patch_view(xp, oh, ow, stride, dil, kh, kw)
    out = np.empty((n, cout, oh, ow), dtype=x.dtype)
    ocg = cout // groups
    for gi in range(groups):
        vg = view[:, gi * cing:(gi + 1) * cing]
        cols = np.ascontiguousarray(vg.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, cing * kh * kw)
        wg = w[gi * ocg:(gi + 1) * ocg].reshape(ocg, -1)
        out[:, gi * ocg:(gi + 1) * ocg] = (cols @ wg.T).reshape(n, oh, ow, ocg).transpose(0, 3, 1, 2)
    return out


def conv2d_bwd_w(x, gy, stride, pad, dil, groups, kh, kw):
    n, cin, h, wid = x.shape
    cout, oh, ow = gy.shape[1:]
    cing = cin // groups
    ocg = cout // groups
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    view = _patch_view(xp, oh, ow, stride, dil, kh, kw)
    gw = np.empty((cout, cing, kh, kw), dtype=x.dtype)
    for gi in range(groups):
        vg = view[:, gi * cing:(gi + 1) * cing]
        cols = np.ascontiguousarray(vg.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, cing * kh * kw)
        gg = gy[:, gi * ocg:(gi + 1) * ocg].transpose(0, 2, 3, 1).reshape(n * oh * ow, ocg)
        gw[gi * ocg:(gi + 1) * ocg] = (gg.T @ cols).reshape(ocg, cing, kh, kw)
    return gw


def _zero_insert(x, stride):
    if stride == 1:
        return x
    n, c, h, w = x.shape
    z = np.zeros((n, c, (h - 1) * stride + 1, (w - 1) * stride + 1), dtype=x.dtype)
    z[:, :, ::stride, ::stride] = x
    return z


def tconv2d_fwd(x, wt, stride, pad, dil, out_h, out_w, groups):
    n, cin, h, wid = x.shape
    _, ocg, kh, kw = wt.shape
    cing = cin // groups
    cout = ocg * groups
    # scatter realized as a stride-1 gather over zero-inserted input with
    # the kernel flipped; left pad q = d*(k-1) - pad, right pad to out size
    qh = dil * (kh - 1) - pad
    qw = dil * (kw - 1) - pad
    if qh < 0 or qw < 0:
        raise ValueError(f"padding {pad} exceeds dilated kernel span")
    z = _zero_insert(x, stride)
    rh = out_h + dil * (kh - 1) - qh - z.shape[2]
    rw = out_w + dil * (kw - 1) - qw - z.shape[3]
    if rh < 0 or rw < 0:
        raise ValueError("requested output smaller than scatter support")
    zp = np.pad(z, ((0, 0), (0, 0), (qh, rh), (qw, rw)))
    view = _patch_view(zp, out_h, out_w, 1, dil, kh, kw)
    wf = wt[:, :, ::-1, ::-1]
    out = np.empty((n, cout, out_h, out_w), dtype=x.dtype)
    for gi in range(groups):
        vg = view[:, gi * cing:(gi + 1) * cing]
        cols = np.ascontiguousarray(vg.transpose(0, 2, 3, 1, 4, 5)).reshape(n * out_h * out_w, cing * kh * kw)
        wg = np.ascontiguousarray(wf[gi * cing:(gi + 1) * cing].transpose(1, 0, 2, 3)).reshape(ocg, -1)
        out[:, gi * ocg:(gi + 1) * ocg] = (cols @ wg.T).reshape(n, out_h, out_w, ocg).transpose(0, 3, 1, 2)
    return out


def tconv2d_bwd_w(x, gy, stride, pad, dil, groups, kh, kw):
    n, cin, h, wid = x.shape
    cout, oh, ow = gy.shape[1:]
    cing = cin // groups
    ocg = cout // groups
    rh = max(0, (h - 1) * stride + dil * (kh - 1) - pad - oh + 1)
    rw = max(0, (wid - 1) * stride + dil * (kw - 1) - pad - ow + 1)
    gp = np.pad(gy, ((0, 0), (0, 0), (pad, rh), (pad, rw)))
    view = _patch_view(gp, h, wid, stride, dil, kh, kw)
    gwt = np.empty((cin, ocg, kh, kw), dtype=x.dtype)
    for gi in range(groups):
        vg = view[:, gi * ocg:(gi + 1) * ocg]
        cols = np.ascontiguousarray(vg.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * wid, ocg * kh * kw)
        xg = x[:, gi * cing:(gi + 1) * cing].transpose(0, 2, 3, 1).reshape(n * h * wid, cing)
        gwt[gi * cing:(gi + 1) * cing] = (xg.T @ cols).reshape(cing, ocg, kh, kw)
    return gwt
