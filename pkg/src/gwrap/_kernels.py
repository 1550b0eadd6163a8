"""Optional numba-compiled hot loops.

The angular-index transmittance evaluation dominates every meshing run; the
numpy implementation in fields.py stays as the reference and fallback, and
this module provides a fused per-ray loop when numba is importable.  Both
paths visit candidates in the same order so results match bit for bit.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised on minimal installs
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn
        if args and callable(args[0]):
            return args[0]
        return deco


@njit(cache=True)
def log_transmittance_binned(bins, ptr, items, rel, d2, bound2, whit, opac,
                             dirs, t_end, s2):
    """Sum of log(1 - G_i(min(t, t_i*))) per ray over binned candidates.

    bins: (R,) bin id per ray; ptr/items: CSR of Gaussian ids per bin;
    rel: means - origin; d2 = |rel|^2; bound2: squared support radii;
    whit: (N, 3, 3) whiteners; dirs: (R, 3); t_end: (R,).
    """
    r_count = dirs.shape[0]
    out = np.zeros(r_count)
    for r in range(r_count):
        b = bins[r]
        acc = 0.0
        dx = dirs[r, 0]
        dy = dirs[r, 1]
        dz = dirs[r, 2]
        te_r = t_end[r]
        for e in range(ptr[b], ptr[b + 1]):
            g = items[e]
            rx = rel[g, 0]
            ry = rel[g, 1]
            rz = rel[g, 2]
            b0 = dx * rx + dy * ry + dz * rz
            tcl = b0
            if tcl < 0.0:
                tcl = 0.0
            elif tcl > te_r:
                tcl = te_r
            if d2[g] + tcl * (tcl - 2.0 * b0) > bound2[g]:
                continue
            w = whit[g]
            uwx = w[0, 0] * dx + w[0, 1] * dy + w[0, 2] * dz
            uwy = w[1, 0] * dx + w[1, 1] * dy + w[1, 2] * dz
            uwz = w[2, 0] * dx + w[2, 1] * dy + w[2, 2] * dz
            udx = w[0, 0] * rx + w[0, 1] * ry + w[0, 2] * rz
            udy = w[1, 0] * rx + w[1, 1] * ry + w[1, 2] * rz
            udz = w[2, 0] * rx + w[2, 1] * ry + w[2, 2] * rz
            a = uwx * uwx + uwy * uwy + uwz * uwz
            bb = uwx * udx + uwy * udy + uwz * udz
            c = udx * udx + udy * udy + udz * udz
            ts = bb / a
            if ts < 0.0:
                ts = 0.0
            tev = ts if ts < te_r else te_r
            m2 = a * tev * tev - 2.0 * bb * tev + c
            if m2 <= s2:
                acc += np.log1p(-opac[g] * np.exp(-0.5 * m2))
        out[r] = acc
    return out
