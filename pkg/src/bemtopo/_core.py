"""Numba loops shared by the kernel and fast-summation modules.

Kinds: 0 = U (displacement), 1 = P (traction), 2 = D (stress from force),
3 = S (stress from displacement jump). Displacement kinds produce 3 outputs,
stress kinds 6 outputs in Voigt order xx, yy, zz, yz, xz, xy.
"""
import math

import numpy as np
from numba import njit

KIND_U, KIND_P, KIND_D, KIND_S = 0, 1, 2, 3
VOIGT_I = (0, 1, 2, 1, 0, 0)
VOIGT_J = (0, 1, 2, 2, 2, 1)


def out_dim(kind):
    return 3 if kind < 2 else 6


@njit(cache=True, inline="always")
def _contract(kind, rx, ry, rz, nx, ny, nz, sx, sy, sz, nu, G, res):
    """Add K(r, n) s to res (length 3 or 6)."""
    r2 = rx * rx + ry * ry + rz * rz
    r = math.sqrt(r2)
    hx = rx / r
    hy = ry / r
    hz = rz / r
    hs = hx * sx + hy * sy + hz * sz
    if kind == 0:
        c = 1.0 / (16.0 * math.pi * (1.0 - nu) * G * r)
        a = 3.0 - 4.0 * nu
        res[0] += c * (a * sx + hx * hs)
        res[1] += c * (a * sy + hy * hs)
        res[2] += c * (a * sz + hz * hs)
    elif kind == 1:
        c = 1.0 / (8.0 * math.pi * (1.0 - nu) * r2)
        b = 1.0 - 2.0 * nu
        dn = hx * nx + hy * ny + hz * nz
        ns = nx * sx + ny * sy + nz * sz
        res[0] += c * (dn * (b * sx + 3.0 * hx * hs) - b * (hx * ns - nx * hs))
        res[1] += c * (dn * (b * sy + 3.0 * hy * hs) - b * (hy * ns - ny * hs))
        res[2] += c * (dn * (b * sz + 3.0 * hz * hs) - b * (hz * ns - nz * hs))
    elif kind == 2:
        c = -1.0 / (8.0 * math.pi * (1.0 - nu) * r2)
        b = 1.0 - 2.0 * nu
        t = 3.0 * hs
        res[0] += c * (b * (2.0 * sx * hx - hs) + t * hx * hx)
        res[1] += c * (b * (2.0 * sy * hy - hs) + t * hy * hy)
        res[2] += c * (b * (2.0 * sz * hz - hs) + t * hz * hz)
        res[3] += c * (b * (sy * hz + sz * hy) + t * hy * hz)
        res[4] += c * (b * (sx * hz + sz * hx) + t * hx * hz)
        res[5] += c * (b * (sx * hy + sy * hx) + t * hx * hy)
    else:
        c = G / (4.0 * math.pi * (1.0 - nu) * r2 * r)
        b = 1.0 - 2.0 * nu
        dn = hx * nx + hy * ny + hz * nz
        ns = nx * sx + ny * sy + nz * sz
        d3 = 3.0 * dn
        a1 = d3 * b * hs - (1.0 - 4.0 * nu) * ns
        h3 = -5.0 * d3 * hs + 3.0 * b * ns
        v3 = 3.0 * nu * hs
        # sigma_ij = a1 d_ij + h3 h_i h_j + d3 nu (s_i h_j + s_j h_i)
        #          + v3 (n_i h_j + n_j h_i) + b (n_j s_i + n_i s_j)
        hh = (hx, hy, hz)
        nn = (nx, ny, nz)
        ss = (sx, sy, sz)
        for v in range(6):
            i = (0, 1, 2, 1, 0, 0)[v]
            j = (0, 1, 2, 2, 2, 1)[v]
            val = h3 * hh[i] * hh[j] + d3 * nu * (ss[i] * hh[j] + ss[j] * hh[i])
            val += v3 * (nn[i] * hh[j] + nn[j] * hh[i]) + b * (nn[j] * ss[i] + nn[i] * ss[j])
            if i == j:
                val += a1
            res[v] += c * val


@njit(cache=True)
def apply_kernel(kind, src, nrm, strength, trg, nu, G, eps, out):
    """out[t] += sum_s K(trg[t] - src[s], nrm[s]) strength[s], skipping r < eps."""
    nt = trg.shape[0]
    ns = src.shape[0]
    nd = out.shape[1]
    eps2 = eps * eps
    res = np.zeros(6)
    for t in range(nt):
        for d in range(nd):
            res[d] = 0.0
        tx = trg[t, 0]
        ty = trg[t, 1]
        tz = trg[t, 2]
        for s in range(ns):
            rx = tx - src[s, 0]
            ry = ty - src[s, 1]
            rz = tz - src[s, 2]
            if rx * rx + ry * ry + rz * rz < eps2:
                continue
            _contract(kind, rx, ry, rz, nrm[s, 0], nrm[s, 1], nrm[s, 2],
                      strength[s, 0], strength[s, 1], strength[s, 2], nu, G, res)
        for d in range(nd):
            out[t, d] += res[d]


@njit(cache=True)
def kernel_blocks(kind, src, nrm, trg, nu, G, eps):
    """Dense blocks K[t, s] of shape (nt, ns, nd, 3); coincident pairs are zero."""
    nt = trg.shape[0]
    ns = src.shape[0]
    nd = 3 if kind < 2 else 6
    out = np.zeros((nt, ns, nd, 3))
    eps2 = eps * eps
    res = np.zeros(6)
    for t in range(nt):
        for s in range(ns):
            rx = trg[t, 0] - src[s, 0]
            ry = trg[t, 1] - src[s, 1]
            rz = trg[t, 2] - src[s, 2]
            if rx * rx + ry * ry + rz * rz < eps2:
                continue
            for k in range(3):
                for d in range(nd):
                    res[d] = 0.0
                sx = 1.0 if k == 0 else 0.0
                sy = 1.0 if k == 1 else 0.0
                sz = 1.0 if k == 2 else 0.0
                _contract(kind, rx, ry, rz, nrm[s, 0], nrm[s, 1], nrm[s, 2],
                          sx, sy, sz, nu, G, res)
                for d in range(nd):
                    out[t, s, d, k] = res[d]
    return out


@njit(cache=True)
def folded_blocks(kind, trg, tptr, tidx, src, nrm, wts, grp, sptr, sidx,
                  ngroups, nu, G, eps, tshift):
    """Group-folded kernel blocks for a list of (target set, source set) tasks.

    Task m pairs targets tidx[tptr[m]:tptr[m+1]] with sources
    sidx[sptr[m]:sptr[m+1]]; the block for target t and group g is
    sum over sources q of group g of wts[q] K(trg[t] - src[q] - tshift[m]).
    Returns COO arrays (rows, cols, blocks).
    """
    nd = 3 if kind < 2 else 6
    ntask = tptr.shape[0] - 1
    eps2 = eps * eps
    # count output pairs
    mark = np.full(ngroups, -1, np.int64)
    total = 0
    for m in range(ntask):
        ng = 0
        for a in range(sptr[m], sptr[m + 1]):
            g = grp[sidx[a]]
            if mark[g] != m:
                mark[g] = m
                ng += 1
        total += ng * (tptr[m + 1] - tptr[m])
    rows = np.empty(total, np.int64)
    cols = np.empty(total, np.int64)
    blocks = np.zeros((total, nd, 3))
    mark[:] = -1
    slot = np.empty(ngroups, np.int64)
    res = np.zeros(6)
    pos = 0
    for m in range(ntask):
        ulist = []
        for a in range(sptr[m], sptr[m + 1]):
            g = grp[sidx[a]]
            if mark[g] != m:
                mark[g] = m
                slot[g] = len(ulist)
                ulist.append(g)
        ng = len(ulist)
        for ti in range(tptr[m], tptr[m + 1]):
            t = tidx[ti]
            base = pos
            for u in range(ng):
                rows[pos] = t
                cols[pos] = ulist[u]
                pos += 1
            for a in range(sptr[m], sptr[m + 1]):
                q = sidx[a]
                rx = trg[t, 0] - src[q, 0] - tshift[m, 0]
                ry = trg[t, 1] - src[q, 1] - tshift[m, 1]
                rz = trg[t, 2] - src[q, 2] - tshift[m, 2]
                if rx * rx + ry * ry + rz * rz < eps2:
                    continue
                b = base + slot[grp[q]]
                w = wts[q]
                for k in range(3):
                    for d in range(nd):
                        res[d] = 0.0
                    _contract(kind, rx, ry, rz, nrm[q, 0], nrm[q, 1], nrm[q, 2],
                              w if k == 0 else 0.0, w if k == 1 else 0.0,
                              w if k == 2 else 0.0, nu, G, res)
                    for d in range(nd):
                        blocks[b, d, k] += res[d]
    return rows, cols, blocks


@njit(cache=True)
def apply_tasks(kind, trg, tptr, tidx, src, nrm, strength, sptr, sidx, nu, G, eps, tshift, out):
    """On-the-fly version of folded_blocks applied to point strengths."""
    ntask = tptr.shape[0] - 1
    nd = out.shape[1]
    eps2 = eps * eps
    res = np.zeros(6)
    for m in range(ntask):
        for ti in range(tptr[m], tptr[m + 1]):
            t = tidx[ti]
            for d in range(nd):
                res[d] = 0.0
            for a in range(sptr[m], sptr[m + 1]):
                q = sidx[a]
                rx = trg[t, 0] - src[q, 0] - tshift[m, 0]
                ry = trg[t, 1] - src[q, 1] - tshift[m, 1]
                rz = trg[t, 2] - src[q, 2] - tshift[m, 2]
                if rx * rx + ry * ry + rz * rz < eps2:
                    continue
                _contract(kind, rx, ry, rz, nrm[q, 0], nrm[q, 1], nrm[q, 2],
                          strength[q, 0], strength[q, 1], strength[q, 2], nu, G, res)
            for d in range(nd):
                out[t, d] += res[d]
