"""Pure-numpy reference implementations of the hot kernels.

Every function here has a numba twin in ``numba_impl`` with the same
signature and bit-compatible output; ``vecmap.kernels`` picks one at import
time.  Keep the arithmetic order identical between the two files when
editing -- the equivalence tests compare them at zero tolerance.
"""
from __future__ import annotations

import numpy as np


def bilinear_forward(x: np.ndarray, ph: np.ndarray, pw: np.ndarray) -> np.ndarray:
    """Sample x[C,H,W] at fractional positions (ph, pw), zero outside.

    Output cell (h, w) reads x at row ph[h,w], column pw[h,w] with the
    standard four-tap bilinear kernel.  Taps that fall outside the grid
    contribute zero, so integer in-bounds positions reproduce x exactly.
    Arithmetic runs in float64 regardless of input dtype (the widening is
    exact, so both backends round identically on the final cast).
    """
    c, hh, ww = x.shape
    x64 = x.astype(np.float64, copy=False)
    ph64 = ph.astype(np.float64, copy=False)
    pw64 = pw.astype(np.float64, copy=False)
    h0 = np.floor(ph64)
    w0 = np.floor(pw64)
    fh = ph64 - h0
    fw = pw64 - w0
    h0i = h0.astype(np.int64)
    w0i = w0.astype(np.int64)
    # query planes set the output size; they need not match x's grid
    y = np.zeros((c,) + ph.shape, dtype=np.float64)
    for dh, wh in ((0, 1.0 - fh), (1, fh)):
        for dw, wt in ((0, 1.0 - fw), (1, fw)):
            hi = h0i + dh
            wi = w0i + dw
            valid = (hi >= 0) & (hi < hh) & (wi >= 0) & (wi < ww)
            hc = np.clip(hi, 0, hh - 1)
            wc = np.clip(wi, 0, ww - 1)
            weight = (wh * wt) * valid
            y += weight[None, :, :] * x64[:, hc, wc]
    return y.astype(x.dtype, copy=False)


def bilinear_backward(
    x: np.ndarray, ph: np.ndarray, pw: np.ndarray, gy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of bilinear_forward w.r.t. x and both coordinate planes.

    Like the forward pass this accumulates in float64 and casts at the
    end; the channel reduction is an explicit loop so the summation order
    is pinned (numpy reductions are free to reassociate).
    """
    c, hh, ww = x.shape
    x64 = x.astype(np.float64, copy=False)
    gy64 = gy.astype(np.float64, copy=False)
    ph64 = ph.astype(np.float64, copy=False)
    pw64 = pw.astype(np.float64, copy=False)
    h0 = np.floor(ph64)
    w0 = np.floor(pw64)
    fh = ph64 - h0
    fw = pw64 - w0
    h0i = h0.astype(np.int64)
    w0i = w0.astype(np.int64)
    gx = np.zeros((c, hh, ww), dtype=np.float64)
    gph = np.zeros(ph.shape, dtype=np.float64)
    gpw = np.zeros(pw.shape, dtype=np.float64)
    gx2 = gx.reshape(c, hh * ww)
    # (dh, dw, spatial weight, d weight/d fh, d weight/d fw)
    taps = (
        (0, 0, (1.0 - fh) * (1.0 - fw), -(1.0 - fw), -(1.0 - fh)),
        (0, 1, (1.0 - fh) * fw, -fw, (1.0 - fh)),
        (1, 0, fh * (1.0 - fw), (1.0 - fw), -fh),
        (1, 1, fh * fw, fw, fh),
    )
    for dh, dw, wgt, dwh, dww in taps:
        hi = h0i + dh
        wi = w0i + dw
        valid = (hi >= 0) & (hi < hh) & (wi >= 0) & (wi < ww)
        hc = np.clip(hi, 0, hh - 1)
        wc = np.clip(wi, 0, ww - 1)
        xv = x64[:, hc, wc] * valid[None, :, :]
        dot = np.zeros(ph.shape, dtype=np.float64)
        for cc in range(c):
            dot += xv[cc] * gy64[cc]
        gph += dwh * dot
        gpw += dww * dot
        flat = (hc * ww + wc)[valid]
        vals = (wgt[None, :, :] * gy64)[:, valid]
        np.add.at(gx2, (slice(None), flat), vals)
    return (
        gx.astype(x.dtype, copy=False),
        gph.astype(ph.dtype, copy=False),
        gpw.astype(pw.dtype, copy=False),
    )


def _nearest_d2(segs: np.ndarray, h: int, w: int) -> np.ndarray:
    """Per-cell squared distance to the nearest segment (inf if none)."""
    gh, gw = np.meshgrid(
        np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij"
    )
    out = np.full((h, w), np.inf, dtype=np.float64)
    for s in range(segs.shape[0]):
        ah, aw, bh, bw = segs[s]
        dh = bh - ah
        dw = bw - aw
        den = dh * dh + dw * dw
        if den > 0.0:
            t = ((gh - ah) * dh + (gw - aw) * dw) / den
            t = np.clip(t, 0.0, 1.0)
        else:
            t = 0.0
        eh = gh - (ah + t * dh)
        ew = gw - (aw + t * dw)
        d2 = eh * eh + ew * ew
        np.minimum(out, d2, out=out)
    return out


def rasterize_soft(segs: np.ndarray, h: int, w: int, sigma: float) -> np.ndarray:
    """Max-blend Gaussian falloff around line segments, in cell units.

    segs is [S,4] rows (h0, w0, h1, w1); output is [h,w] float64 in [0,1].
    The exp is applied outside the distance kernel: min-distance plus a
    monotone map equals the max blend, and keeping the transcendental in
    one place lets both backends share numpy's exp bit for bit.
    """
    inv = 1.0 / (2.0 * sigma * sigma)
    return np.exp(_nearest_d2(segs, h, w) * (-inv))


def rasterize_mask(segs: np.ndarray, h: int, w: int) -> np.ndarray:
    """One-cell-thick binary trace of the segments, [h,w] uint8."""
    out = np.zeros((h, w), dtype=np.uint8)
    for s in range(segs.shape[0]):
        ah, aw, bh, bw = segs[s]
        length = float(np.hypot(bh - ah, bw - aw))
        n = int(np.ceil(length / 0.25)) + 1
        for i in range(n):
            t = i / (n - 1) if n > 1 else 0.0
            hh = int(np.floor(ah + t * (bh - ah) + 0.5))
            ww = int(np.floor(aw + t * (bw - aw) + 0.5))
            if 0 <= hh < h and 0 <= ww < w:
                out[hh, ww] = 1
    return out


def dp_match(match_cost: np.ndarray, cum_pen: np.ndarray, weight: float) -> tuple[float, np.ndarray]:
    """Order-preserving assignment of K targets to N ordered candidates.

    match_cost is [N,K]; cum_pen is [K+1, N+1] where cum_pen[r, j] is the
    summed penalty distance of candidates 0..j-1 under row r (row 0 applies
    before the first target, row k between targets k-1 and k, row K after
    the last).  Minimizes total match cost plus weight * penalties of the
    skipped candidates; returns (cost, chosen candidate index per target).
    Ties break toward the earliest candidate.
    """
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
    return float(total), choice
