"""Quadrature building blocks for singular integrals of signed indicators.

The key primitive integrates a weight ``w(theta)`` over the arcs of a circle
where a level function is negative or positive.  Boundary crossings are
bracketed by sampling and then located by vectorized bisection, so the
integral is exact up to the weight quadrature.
"""

from __future__ import annotations

import numpy as np

_GL16 = np.polynomial.legendre.leggauss(16)
_GL8 = np.polynomial.legendre.leggauss(8)


def gauss_nodes(a, b, order=8):
    """Gauss-Legendre nodes and weights on each interval ``[a_i, b_i]`` (flattened)."""
    x, w = _GL8 if order == 8 else np.polynomial.legendre.leggauss(order)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


def graded_pieces(a, b, breakpoints, levels=24):
    """Split ``[a, b]`` into pieces graded geometrically towards interior or end breakpoints."""
    cuts = {a, b}
    for p in breakpoints:
        if a - 1e-15 <= p <= b + 1e-15:
            p = min(max(p, a), b)
            cuts.add(p)
            for k in range(1, levels + 1):
                for q in (p - (p - a) * 2.0 ** -k, p + (b - p) * 2.0 ** -k):
                    if a < q < b:
                        cuts.add(q)
    c = np.array(sorted(cuts))
    c = c[np.concatenate([[True], np.diff(c) > 1e-15 * max(abs(b), 1.0)])]
    return c[:-1], c[1:]


def log_radial_nodes(a, b, order=8, breakpoints=()):
    """Nodes/weights for ``int_a^b F(rho) d rho`` written as ``int F(rho) rho d(log rho)``."""
    lo, hi = graded_pieces(a, b, breakpoints)
    u, wu = gauss_nodes(np.log(lo), np.log(hi), order)
    rho = np.exp(u)
    return rho, wu * rho


def _bisect(level, y, rho, lo, hi, iters=52):
    """Refine brackets ``[lo, hi]`` of angles with a sign change of ``level`` on circles."""
    def val(phi):
        pts = y + rho[:, None] * np.stack([np.cos(phi), np.sin(phi)], axis=1)
        return level(pts)

    s_lo = val(lo) < 0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        v = val(mid)
        # an exact zero is the crossing; this keeps E and its complement identical
        same = ((v < 0) == s_lo) & (v != 0)
        lo = np.where(same, mid, np.where(v == 0, mid, lo))
        hi = np.where(same, hi, mid)
        if np.all(hi - lo < 1e-15):
            break
    return 0.5 * (lo + hi)


def circle_arcs(level, y, radii, samples=1024, offset=0.0):
    """Arcs of the circles ``|x - y| = rho`` split at sign changes of ``level``.

    Returns ``(index, start, end, inside)`` flat arrays: for circle
    ``index`` the arc ``[start, end]`` (angles, ``end`` may exceed 2 pi)
    lies in ``{level < 0}`` when ``inside`` is true.
    """
    y = np.asarray(y, dtype=float).reshape(2)
    radii = np.asarray(radii, dtype=float)
    m = len(radii)
    phi = offset + 2 * np.pi * np.arange(samples) / samples
    e = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    pts = y + radii[:, None, None] * e[None]
    ins = level(pts.reshape(-1, 2)).reshape(m, samples) < 0
    nxt = np.roll(ins, -1, axis=1)
    ci, ck = np.nonzero(ins != nxt)
    lo = phi[ck]
    hi = np.where(ck == samples - 1, phi[0] + 2 * np.pi, phi[np.minimum(ck + 1, samples - 1)])
    cross = _bisect(level, y, radii[ci], lo.copy(), hi.copy()) if len(ci) else np.empty(0)
    # assemble arcs per circle
    idx, start, end = [], [], []
    counts = np.bincount(ci, minlength=m)
    order = np.lexsort((cross, ci))
    ci, cross = ci[order], cross[order]
    pos = np.concatenate([[0], np.cumsum(counts)])
    none = np.flatnonzero(counts == 0)
    idx.append(none)
    start.append(np.full(len(none), offset))
    end.append(np.full(len(none), offset + 2 * np.pi))
    some = np.flatnonzero(counts > 0)
    if len(some):
        c_idx = ci
        c_next = np.empty_like(cross)
        # successor crossing within the same circle (wrapping around once)
        first = pos[c_idx]
        last = pos[c_idx + 1] - 1
        k = np.arange(len(cross))
        succ = np.where(k == last, first, k + 1)
        c_next = cross[succ] + np.where(k == last, 2 * np.pi, 0.0)
        idx.append(c_idx)
        start.append(cross)
        end.append(c_next)
    idx = np.concatenate(idx)
    start = np.concatenate(start)
    end = np.concatenate(end)
    mid = 0.5 * (start + end)
    mpts = y + radii[idx][:, None] * np.stack([np.cos(mid), np.sin(mid)], axis=1)
    inside = level(mpts) < 0 if len(idx) else np.zeros(0, bool)
    return idx, start, end, inside


def arc_weights(start, end, weight=None, max_chunk=np.pi / 4):
    """``int_start^end weight(phi) d phi`` for arrays of arcs (``weight=None`` means 1)."""
    length = end - start
    if weight is None:
        return length
    nchunk = np.maximum(1, np.ceil(length / max_chunk).astype(int))
    total = np.zeros(len(start))
    x, w = _GL16
    for k in range(int(nchunk.max()) if len(nchunk) else 0):
        active = nchunk > k
        a = start + length * k / nchunk
        b = start + length * (k + 1) / nchunk
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        nodes = mid[:, None] + half[:, None] * x
        vals = weight(nodes.ravel()).reshape(nodes.shape)
        total += np.where(active, half * (vals @ w), 0.0)
    return total


def signed_circle_measure(level, y, radii, weight=None, samples=1024, offset=0.0, split=False):
    """Weighted measure of ``{level < 0}`` minus ``{level > 0}`` on each circle about ``y``.

    With ``split`` the two parts are returned separately as ``(plus, minus)``.
    """
    m = len(radii)
    idx, a, b, inside = circle_arcs(level, y, radii, samples, offset)
    wts = arc_weights(a, b, weight)
    plus = np.bincount(idx[inside], wts[inside], minlength=m)
    minus = np.bincount(idx[~inside], wts[~inside], minlength=m)
    return (plus, minus) if split else plus - minus


def paired_circle_measure(level, y, radii, weight=None, samples=1024):
    """``int_0^pi (sigma(y + rho e) + sigma(y - rho e)) weight d phi`` with ``sigma = -sign(level)``.

    Arcs of both half circles are merged on ``[0, pi)`` so that opposite
    signs cancel pointwise rather than after integration.
    """
    m = len(radii)
    idx, a, b, _ = circle_arcs(level, y, radii, samples, 0.0)
    # crossing angles folded into [0, pi)
    brk = np.mod(a, np.pi)
    y = np.asarray(y, dtype=float).reshape(2)
    radii = np.asarray(radii, dtype=float)
    out = np.zeros(m)
    order = np.lexsort((brk, idx))
    idx, brk = idx[order], brk[order]
    counts = np.bincount(idx, minlength=m)
    pos = np.concatenate([[0], np.cumsum(counts)])
    seg_i, seg_a, seg_b = [], [], []
    for i in range(m):
        c = brk[pos[i]:pos[i + 1]]
        edges = np.unique(np.concatenate([[0.0], c, [np.pi]]))
        seg_i.append(np.full(len(edges) - 1, i))
        seg_a.append(edges[:-1])
        seg_b.append(edges[1:])
    seg_i = np.concatenate(seg_i)
    seg_a = np.concatenate(seg_a)
    seg_b = np.concatenate(seg_b)
    keep = seg_b - seg_a > 0
    seg_i, seg_a, seg_b = seg_i[keep], seg_a[keep], seg_b[keep]
    mid = 0.5 * (seg_a + seg_b)
    e = np.stack([np.cos(mid), np.sin(mid)], axis=1)
    r = radii[seg_i][:, None]
    s_sum = -np.sign(level(y + r * e)) - np.sign(level(y - r * e))
    nz = s_sum != 0
    wts = arc_weights(seg_a[nz], seg_b[nz], weight)
    np.add.at(out, seg_i[nz], s_sum[nz] * wts)
    return out


def ray_crossings(level, y, direction, rho_lo, rho_hi, samples=4096):
    """Radii in ``[rho_lo, rho_hi]`` where ``level`` changes sign along ``y + rho d``."""
    y = np.asarray(y, dtype=float).reshape(-1)
    d = np.asarray(direction, dtype=float).reshape(-1)
    rho = np.geomspace(rho_lo, rho_hi, samples)
    ins = level(y + rho[:, None] * d) < 0
    k = np.flatnonzero(ins[:-1] != ins[1:])
    lo, hi = rho[k], rho[k + 1]
    s_lo = ins[k]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        s_mid = level(y + mid[:, None] * d) < 0
        same = s_mid == s_lo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)
