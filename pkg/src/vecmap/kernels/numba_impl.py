"""Numba twins of the kernels in ``numpy_impl``.

Loops are laid out so every float accumulation happens in the same order
as the numpy path: interpolation arithmetic is widened to float64 (the
widening is exact), tap loops sit outermost in the bilinear backward to
mirror the vectorized per-tap updates, and within a tap each accumulator
cell only ever receives contributions in ascending query order under
either loop nesting.  The equivalence tests hold both backends to zero
tolerance.
"""
from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True)
def _bilinear_forward(x, ph, pw):
    c, h, w = x.shape
    oh_n, ow_n = ph.shape
    y = np.zeros((c, oh_n, ow_n), dtype=x.dtype)
    for oh in range(oh_n):
        for ow in range(ow_n):
            p = np.float64(ph[oh, ow])
            q = np.float64(pw[oh, ow])
            h0 = int(np.floor(p))
            w0 = int(np.floor(q))
            fh = p - np.floor(p)
            fw = q - np.floor(q)
            for cc in range(c):
                acc = 0.0
                for dh in range(2):
                    wh = fh if dh == 1 else 1.0 - fh
                    hi = h0 + dh
                    hc = min(max(hi, 0), h - 1)
                    for dw in range(2):
                        wt = fw if dw == 1 else 1.0 - fw
                        wi = w0 + dw
                        wc = min(max(wi, 0), w - 1)
                        valid = (hi >= 0) and (hi < h) and (wi >= 0) and (wi < w)
                        weight = (wh * wt) if valid else 0.0
                        acc += weight * np.float64(x[cc, hc, wc])
                y[cc, oh, ow] = acc
    return y


@nb.njit(cache=True)
def _bilinear_backward(x, ph, pw, gy):
    c, h, w = x.shape
    oh_n, ow_n = ph.shape
    gx = np.zeros((c, h, w), dtype=np.float64)
    gph = np.zeros((oh_n, ow_n), dtype=np.float64)
    gpw = np.zeros((oh_n, ow_n), dtype=np.float64)
    for dh in range(2):
        sh = 1.0 if dh == 1 else -1.0
        for dw in range(2):
            sw = 1.0 if dw == 1 else -1.0
            for oh in range(oh_n):
                for ow in range(ow_n):
                    p = np.float64(ph[oh, ow])
                    q = np.float64(pw[oh, ow])
                    h0 = int(np.floor(p))
                    w0 = int(np.floor(q))
                    fh = p - np.floor(p)
                    fw = q - np.floor(q)
                    wh = fh if dh == 1 else 1.0 - fh
                    wt = fw if dw == 1 else 1.0 - fw
                    hi = h0 + dh
                    wi = w0 + dw
                    if hi < 0 or hi >= h or wi < 0 or wi >= w:
                        continue
                    weight = wh * wt
                    dot = 0.0
                    for cc in range(c):
                        g = np.float64(gy[cc, oh, ow])
                        dot += np.float64(x[cc, hi, wi]) * g
                        gx[cc, hi, wi] += weight * g
                    gph[oh, ow] += sh * wt * dot
                    gpw[oh, ow] += sw * wh * dot
    gxo = np.zeros_like(x)
    gpho = np.zeros_like(ph)
    gpwo = np.zeros_like(pw)
    gxo[:] = gx
    gpho[:] = gph
    gpwo[:] = gpw
    return gxo, gpho, gpwo


@nb.njit(cache=True)
def _nearest_d2(segs, h, w):
    out = np.full((h, w), np.inf, dtype=np.float64)
    for s in range(segs.shape[0]):
        ah = segs[s, 0]
        aw = segs[s, 1]
        bh = segs[s, 2]
        bw = segs[s, 3]
        dh = bh - ah
        dw = bw - aw
        den = dh * dh + dw * dw
        for gh in range(h):
            for gw in range(w):
                if den > 0.0:
                    t = ((gh - ah) * dh + (gw - aw) * dw) / den
                    t = min(max(t, 0.0), 1.0)
                else:
                    t = 0.0
                eh = gh - (ah + t * dh)
                ew = gw - (aw + t * dw)
                d2 = eh * eh + ew * ew
                if d2 < out[gh, gw]:
                    out[gh, gw] = d2
    return out


@nb.njit(cache=True)
def _rasterize_mask(segs, h, w):
    out = np.zeros((h, w), dtype=np.uint8)
    for s in range(segs.shape[0]):
        ah = segs[s, 0]
        aw = segs[s, 1]
        bh = segs[s, 2]
        bw = segs[s, 3]
        length = np.hypot(bh - ah, bw - aw)
        n = int(np.ceil(length / 0.25)) + 1
        for i in range(n):
            t = i / (n - 1) if n > 1 else 0.0
            hh = int(np.floor(ah + t * (bh - ah) + 0.5))
            ww = int(np.floor(aw + t * (bw - aw) + 0.5))
            if 0 <= hh < h and 0 <= ww < w:
                out[hh, ww] = 1
    return out


@nb.njit(cache=True)
def _dp_match(match_cost, cum_pen, weight):
    n, k = match_cost.shape
    dp = np.empty((k, n), dtype=np.float64)
    arg = np.zeros((k, n), dtype=np.int64)
    for i in range(n):
        dp[0, i] = match_cost[i, 0] + weight * cum_pen[0, i]
    for kk in range(1, k):
        best = np.inf
        best_i = 0
        for i in range(n):
            if i >= 1:
                a = dp[kk - 1, i - 1] - weight * cum_pen[kk, i]
                if a < best:
                    best = a
                    best_i = i - 1
            dp[kk, i] = match_cost[i, kk] + weight * cum_pen[kk, i] + best
            arg[kk, i] = best_i
    total = np.inf
    last = 0
    for i in range(n):
        v = dp[k - 1, i] + weight * (cum_pen[k, n] - cum_pen[k, i + 1])
        if v < total:
            total = v
            last = i
    choice = np.zeros(k, dtype=np.int64)
    choice[k - 1] = last
    for kk in range(k - 1, 0, -1):
        choice[kk - 1] = arg[kk, choice[kk]]
    return total, choice


def bilinear_forward(x, ph, pw):
    return _bilinear_forward(x, ph, pw)


def bilinear_backward(x, ph, pw, gy):
    return _bilinear_backward(x, ph, pw, gy)


def rasterize_soft(segs, h, w, sigma):
    # exp applied here, not in the jit: both backends must round it with
    # the same implementation
    inv = 1.0 / (2.0 * float(sigma) * float(sigma))
    return np.exp(_nearest_d2(segs, int(h), int(w)) * (-inv))


def rasterize_mask(segs, h, w):
    return _rasterize_mask(segs, int(h), int(w))


def dp_match(match_cost, cum_pen, weight):
    total, choice = _dp_match(match_cost, cum_pen, float(weight))
    return float(total), choice
