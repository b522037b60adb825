"""Adaptive octree with the U, V, W and X interaction lists.

Every list entry carries an integer image shift (in units of the root width)
so periodic cells reuse the same traversal; non-periodic trees only ever see
zero shifts.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEPTH = 20  # bits per coordinate for Morton keys


def _spread(v):
    v = v.astype(np.uint64) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def morton(ijk):
    ijk = np.asarray(ijk)
    return _spread(ijk[..., 0]) | (_spread(ijk[..., 1]) << np.uint64(1)) | (_spread(ijk[..., 2]) << np.uint64(2))


@dataclass
class Octree:
    lo: np.ndarray  # root corner
    width: float  # root edge length
    periodic: bool
    level: np.ndarray
    coords: np.ndarray  # integer box coordinates at its level
    parent: np.ndarray
    children: np.ndarray  # (nb, 8), -1 where absent
    src_perm: np.ndarray
    trg_perm: np.ndarray
    src_range: np.ndarray  # (nb, 2) into sorted sources
    trg_range: np.ndarray
    lists: dict = field(default_factory=dict)

    @property
    def n_boxes(self):
        return len(self.level)

    @property
    def n_levels(self):
        return int(self.level.max()) + 1

    def is_leaf(self, b):
        return bool((self.children[b] < 0).all())

    @property
    def leaves(self):
        return np.flatnonzero((self.children < 0).all(axis=1))

    def center(self, b):
        w = self.width / 2.0 ** self.level[b]
        return self.lo + (self.coords[b] + 0.5) * w

    def centers(self):
        w = self.width / 2.0 ** self.level
        return self.lo + (self.coords + 0.5) * w[:, None]

    def half_width(self, b=None):
        lev = self.level if b is None else self.level[b]
        return self.width / 2.0 ** (lev + 1)


def _quantize(points, lo, width, periodic):
    scale = 2**DEPTH / width
    q = np.floor((points - lo) * scale).astype(np.int64)
    if periodic:
        q %= 2**DEPTH
    return np.clip(q, 0, 2**DEPTH - 1)


def build_tree(sources, targets, leaf_size=64, lo=None, width=None, periodic=False, max_level=16):
    """Adaptive octree over the union of sources and targets.

    A box is split while it holds more than leaf_size points (sources plus
    targets) and its level is below max_level.
    """
    sources = np.asarray(sources, float).reshape(-1, 3)
    targets = np.asarray(targets, float).reshape(-1, 3)
    if lo is None or width is None:
        allp = np.concatenate([sources, targets])
        pmin, pmax = allp.min(axis=0), allp.max(axis=0)
        width = float((pmax - pmin).max()) * (1 + 1e-6) or 1.0
        lo = (pmin + pmax) / 2 - width / 2
    lo = np.asarray(lo, float)
    skey = morton(_quantize(sources, lo, width, periodic))
    tkey = morton(_quantize(targets, lo, width, periodic))
    sp = np.argsort(skey, kind="stable")
    tp = np.argsort(tkey, kind="stable")
    skey, tkey = skey[sp], tkey[tp]

    level, coords, parent, srng, trng = [0], [np.zeros(3, np.int64)], [-1], [(0, len(skey))], [(0, len(tkey))]
    children = [[-1] * 8]
    stack = [0]
    while stack:
        b = stack.pop()
        ns = srng[b][1] - srng[b][0]
        nt = trng[b][1] - trng[b][0]
        if ns + nt <= leaf_size or level[b] >= max_level:
            continue
        lev = level[b] + 1
        shift = np.uint64(3 * (DEPTH - lev))
        for c in range(8):
            cc = coords[b] * 2 + np.array([c & 1, (c >> 1) & 1, (c >> 2) & 1])
            k0 = morton(cc) << shift
            k1 = (morton(cc) + np.uint64(1)) << shift
            s0 = srng[b][0] + np.searchsorted(skey[srng[b][0]:srng[b][1]], k0)
            s1 = srng[b][0] + np.searchsorted(skey[srng[b][0]:srng[b][1]], k1)
            t0 = trng[b][0] + np.searchsorted(tkey[trng[b][0]:trng[b][1]], k0)
            t1 = trng[b][0] + np.searchsorted(tkey[trng[b][0]:trng[b][1]], k1)
            if s1 == s0 and t1 == t0:
                continue
            nb = len(level)
            level.append(lev)
            coords.append(cc)
            parent.append(b)
            srng.append((s0, s1))
            trng.append((t0, t1))
            children.append([-1] * 8)
            children[b][c] = nb
            stack.append(nb)
    # breadth-first renumbering for level-ordered processing
    level = np.array(level)
    order = np.lexsort((np.arange(len(level)), level))
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    children = np.array(children)
    ch = np.where(children >= 0, inv[np.maximum(children, 0)], -1)[order]
    par = np.array(parent)[order]
    par = np.where(par >= 0, inv[np.maximum(par, 0)], -1)
    tree = Octree(
        lo=lo, width=float(width), periodic=periodic, level=level[order],
        coords=np.array(coords)[order], parent=par, children=ch,
        src_perm=sp, trg_perm=tp,
        src_range=np.array(srng)[order], trg_range=np.array(trng)[order],
    )
    tree.lists = build_lists(tree)
    return tree


def build_lists(tree: Octree):
    """Interaction lists as arrays of (target box, source box, shift_x, shift_y, shift_z)."""
    lev, crd = tree.level, tree.coords
    index = {(int(l), *map(int, c)): b for b, (l, c) in enumerate(zip(lev, crd))}
    periodic = tree.periodic
    span = lambda b: (crd[b] << (DEPTH - lev[b]), (crd[b] + 1) << (DEPTH - lev[b]))  # noqa: E731

    def adjacent(b, a, shift):
        b0, b1 = span(b)
        a0, a1 = span(a)
        off = np.asarray(shift) << DEPTH
        a0, a1 = a0 + off, a1 + off
        return bool(np.all(a0 <= b1) and np.all(b0 <= a1))

    def colleagues(b):
        out = []
        l = int(lev[b])
        n = 1 << l
        for d in np.ndindex(3, 3, 3):
            c = crd[b] + np.array(d) - 1
            if periodic:
                s = np.floor_divide(c, n)
                c = c - s * n
            else:
                if (c < 0).any() or (c >= n).any():
                    continue
                s = np.zeros(3, np.int64)
            a = index.get((l, *map(int, c)))
            if a is not None:
                out.append((a, tuple(int(x) for x in s)))
        return out

    leaf = (tree.children < 0).all(axis=1)
    coll = [colleagues(b) for b in range(tree.n_boxes)]
    U, V, W = [], [], []
    for b in range(tree.n_boxes):
        p = tree.parent[b]
        if p >= 0:
            for (a, s) in coll[p]:
                for c in tree.children[a]:
                    if c >= 0 and not adjacent(b, c, s):
                        V.append((b, c, *s))
        if not leaf[b]:
            continue
        for (a, s) in coll[b]:
            if leaf[a]:
                U.append((b, a, *s))
                continue
            stack = [c for c in tree.children[a] if c >= 0]
            while stack:
                c = stack.pop()
                if adjacent(b, c, s):
                    if leaf[c]:
                        U.append((b, c, *s))
                    else:
                        stack.extend(x for x in tree.children[c] if x >= 0)
                else:
                    W.append((b, c, *s))
    U = np.array(U, np.int64).reshape(-1, 5)
    # symmetrize U: coarser adjacent leaves reached only from the finer side
    rev = U.copy()
    rev[:, 0], rev[:, 1] = U[:, 1], U[:, 0]
    rev[:, 2:] = -U[:, 2:]
    U = np.unique(np.concatenate([U, rev]), axis=0)
    W = np.array(W, np.int64).reshape(-1, 5)
    X = W.copy()
    X[:, 0], X[:, 1] = W[:, 1], W[:, 0]
    X[:, 2:] = -W[:, 2:]
    V = np.array(V, np.int64).reshape(-1, 5)
    return {"U": U, "V": V, "W": W, "X": X}
