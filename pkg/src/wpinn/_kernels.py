"""Fused tanh-layer kernels acting on stacked jet channels.

A layer's pre-activation channels ``Z`` have shape ``(width, C, n)`` with
``C = 1 + d + P``: channel 0 is the pre-activation value, channels
``1..d`` its input gradient and the last ``P`` channels its Hessian entries
for the unordered index pairs ``(pi[p], pj[p])``.

``activate`` maps ``Z`` to the post-activation channels and ``activate_vjp``
pulls an adjoint of those back to ``Z``. The numpy versions are the
reference; the numba versions are used when numba is importable.
"""

from __future__ import annotations

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None


def activate_numpy(Z, d, order, pi, pj):
    t = np.tanh(Z[:, 0])
    out = np.empty_like(Z)
    out[:, 0] = t
    if order >= 1:
        s1 = 1.0 - t * t
        out[:, 1 : 1 + d] = s1[:, None] * Z[:, 1 : 1 + d]
    if order >= 2:
        s2 = -2.0 * t * s1
        Jz = Z[:, 1 : 1 + d]
        out[:, 1 + d :] = s1[:, None] * Z[:, 1 + d :] + s2[:, None] * Jz[:, pi] * Jz[:, pj]
    return out


def activate_vjp_numpy(Z, G, d, order, pi, pj):
    t = np.tanh(Z[:, 0])
    s1 = 1.0 - t * t
    Zbar = np.zeros_like(Z)
    Zbar[:, 0] = G[:, 0] * s1
    if order >= 1:
        Jz = Z[:, 1 : 1 + d]
        GJ = G[:, 1 : 1 + d]
        Zbar[:, 1 : 1 + d] = s1[:, None] * GJ
        s1bar = np.einsum("mkn,mkn->mn", GJ, Jz)
        s2 = -2.0 * t * s1
        if order >= 2:
            Hz = Z[:, 1 + d :]
            GH = G[:, 1 + d :]
            Zbar[:, 1 + d :] = s1[:, None] * GH
            weighted = s2[:, None] * GH
            for p in range(len(pi)):
                Zbar[:, 1 + pi[p]] += weighted[:, p] * Jz[:, pj[p]]
                Zbar[:, 1 + pj[p]] += weighted[:, p] * Jz[:, pi[p]]
            s1bar = s1bar + np.einsum("mpn,mpn->mn", GH, Hz)
            s2bar = np.einsum("mpn,mpn->mn", GH, Jz[:, pi] * Jz[:, pj])
            Zbar[:, 0] += s2bar * (4.0 * t * t * s1 - 2.0 * s1 * s1)
        # d s1 / dz = s2
        Zbar[:, 0] += s1bar * s2
    return Zbar


if numba is not None:

    @numba.njit(cache=True)
    def _activate_nb(Z, T, d, order, pi, pj, out):
        m, C, n = Z.shape
        P = pi.shape[0]
        s1 = np.empty(n)
        s2 = np.empty(n)
        for r in range(m):
            t = T[r]
            o0 = out[r, 0]
            for c in range(n):
                o0[c] = t[c]
                s1[c] = 1.0 - t[c] * t[c]
                s2[c] = -2.0 * t[c] * s1[c]
            if order >= 1:
                for i in range(d):
                    zi = Z[r, 1 + i]
                    oi = out[r, 1 + i]
                    for c in range(n):
                        oi[c] = s1[c] * zi[c]
            if order >= 2:
                for p in range(P):
                    zp = Z[r, 1 + d + p]
                    za = Z[r, 1 + pi[p]]
                    zb = Z[r, 1 + pj[p]]
                    op = out[r, 1 + d + p]
                    for c in range(n):
                        op[c] = s1[c] * zp[c] + s2[c] * za[c] * zb[c]

    @numba.njit(cache=True)
    def _activate_vjp_nb(Z, T, G, d, order, pi, pj, Zbar):
        m, C, n = Z.shape
        P = pi.shape[0]
        s1 = np.empty(n)
        s2 = np.empty(n)
        s1bar = np.empty(n)
        s2bar = np.empty(n)
        for r in range(m):
            t = T[r]
            g0 = G[r, 0]
            zb0 = Zbar[r, 0]
            for c in range(n):
                s1[c] = 1.0 - t[c] * t[c]
                s2[c] = -2.0 * t[c] * s1[c]
                zb0[c] = g0[c] * s1[c]
                s1bar[c] = 0.0
                s2bar[c] = 0.0
            if order >= 1:
                for i in range(d):
                    gi = G[r, 1 + i]
                    zi = Z[r, 1 + i]
                    zbi = Zbar[r, 1 + i]
                    for c in range(n):
                        zbi[c] = s1[c] * gi[c]
                        s1bar[c] += gi[c] * zi[c]
            if order >= 2:
                for p in range(P):
                    gp = G[r, 1 + d + p]
                    zp = Z[r, 1 + d + p]
                    za = Z[r, 1 + pi[p]]
                    zb = Z[r, 1 + pj[p]]
                    zbp = Zbar[r, 1 + d + p]
                    zba = Zbar[r, 1 + pi[p]]
                    zbb = Zbar[r, 1 + pj[p]]
                    for c in range(n):
                        g = gp[c]
                        zbp[c] = s1[c] * g
                        s1bar[c] += g * zp[c]
                        s2bar[c] += g * za[c] * zb[c]
                        w = s2[c] * g
                        zba[c] += w * zb[c]
                        zbb[c] += w * za[c]
                for c in range(n):
                    zb0[c] += s2bar[c] * (4.0 * t[c] * t[c] * s1[c] - 2.0 * s1[c] * s1[c])
            if order >= 1:
                for c in range(n):
                    zb0[c] += s1bar[c] * s2[c]

    def activate(Z, T, d, order, pi, pj):
        """``T`` is ``tanh(Z[:, 0])``, computed once by the caller."""
        out = np.empty_like(Z)
        _activate_nb(Z, T, d, order, pi, pj, out)
        return out

    def activate_vjp(Z, T, G, d, order, pi, pj):
        Zbar = np.empty_like(Z)
        _activate_vjp_nb(Z, T, np.ascontiguousarray(G), d, order, pi, pj, Zbar)
        return Zbar

else:  # pragma: no cover

    def activate(Z, T, d, order, pi, pj):
        return activate_numpy(Z, d, order, pi, pj)

    def activate_vjp(Z, T, G, d, order, pi, pj):
        return activate_vjp_numpy(Z, G, d, order, pi, pj)
