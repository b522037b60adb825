import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bemtopo.errors import AccuracyUnachievable, NonEquilibratedSources
from bemtopo.fmm import (
    DirectBackend, FmmBackend, PeriodicFmmBackend, SourceSet, direct_sum, fmm_sum, fmm_sum_periodic,
    lattice_direct_sum,
)
from bemtopo.fmm.tree import build_tree
from bemtopo.kernels import Material

MAT = Material(1.0, 0.3)
KINDS = ["U", "P", "D", "S"]


def cloud(n, seed, m=None):
    rng = np.random.default_rng(seed)
    src = rng.random((n, 3))
    trg = rng.random((m or n, 3))
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1)[:, None]
    s = rng.normal(size=(n, 3))
    return src, trg, nrm, s


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.mark.parametrize("kind", KINDS)
def test_fmm_matches_direct(kind):
    src, trg, nrm, s = cloud(3000, 0)
    ref = direct_sum(kind, src, trg, s, MAT, nrm)
    assert rel(fmm_sum(kind, src, trg, s, MAT, nrm, order=8, leaf_size=128), ref) < 1e-5


def test_clustered_cloud_and_lower_order():
    rng = np.random.default_rng(4)
    src = np.concatenate([rng.normal(0, 0.01, (800, 3)), rng.random((800, 3))])
    trg = rng.random((600, 3))
    s = rng.normal(size=(len(src), 3))
    ref = direct_sum("U", src, trg, s, MAT)
    assert rel(fmm_sum("U", src, trg, s, MAT, order=8, leaf_size=32), ref) < 1e-5
    assert rel(fmm_sum("U", src, trg, s, MAT, order=6, leaf_size=32), ref) < 2e-4


def test_grouped_sources_and_mixed_kinds():
    src, trg, nrm, _ = cloud(1200, 1, 400)
    rng = np.random.default_rng(5)
    group = rng.integers(0, 100, len(src))
    w = rng.random(len(src))
    ss = SourceSet(src, nrm, w, group, 100)
    vals = {"U": rng.normal(size=(100, 3)), "P": rng.normal(size=(100, 3))}
    ref = DirectBackend(MAT).plan(trg, ss, "disp").apply(vals)
    got = FmmBackend(MAT, order=8, leaf_size=64).plan(trg, ss, "disp").apply(vals)
    assert rel(got, ref) < 1e-5
    with pytest.raises(ValueError):
        FmmBackend(MAT).plan(trg, ss, "disp").apply({"D": vals["U"]})


def test_fmm_linearity():
    src, trg, nrm, s1 = cloud(1500, 2)
    s2 = np.random.default_rng(9).normal(size=s1.shape)
    plan = FmmBackend(MAT, order=6, leaf_size=64).plan(trg, SourceSet(src, nrm), "stress")
    a = plan.apply({"S": 2 * s1 - 3 * s2})
    b = 2 * plan.apply({"S": s1}) - 3 * plan.apply({"S": s2})
    assert rel(a, b) < 1e-10


def test_accuracy_unachievable():
    with pytest.raises(AccuracyUnachievable):
        FmmBackend(MAT, order=2)
    with pytest.raises(AccuracyUnachievable):
        FmmBackend(MAT, order=6, tol=1e-9)
    FmmBackend(MAT, order=8, tol=1e-5)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 400), st.integers(0, 400), st.integers(0, 10_000), st.integers(2, 40))
def test_tree_invariants(ns, nt, seed, leaf):
    rng = np.random.default_rng(seed)
    src = rng.random((ns, 3)) ** 3  # graded, to force adaptivity
    trg = rng.random((nt, 3))
    tree = build_tree(src, trg, leaf_size=leaf)
    leaves = tree.leaves
    # every point sits in exactly one leaf
    for rng_, n in ((tree.src_range, ns), (tree.trg_range, nt)):
        cover = np.zeros(n, int)
        for b in leaves:
            cover[rng_[b, 0]:rng_[b, 1]] += 1
        assert np.all(cover == 1)
    lev, crd = tree.level, tree.coords
    par = tree.parent
    # V pairs: same level, not adjacent, parents adjacent
    for t, s, *_ in tree.lists["V"]:
        assert lev[t] == lev[s]
        assert np.abs(crd[t] - crd[s]).max() >= 2
        assert np.abs(crd[par[t]] - crd[par[s]]).max() <= 1
    # U pairs are leaves that touch
    for t, s, *_ in tree.lists["U"]:
        lt, ls = lev[t], lev[s]
        L = max(lt, ls)
        a0, a1 = crd[t] << (L - lt), (crd[t] + 1) << (L - lt)
        b0, b1 = crd[s] << (L - ls), (crd[s] + 1) << (L - ls)
        assert np.all(a0 <= b1) and np.all(b0 <= a1)


@pytest.mark.parametrize("kind", KINDS)
def test_periodic_matches_lattice_oracle(kind):
    src, trg, nrm, s = cloud(20, 3, 10)
    s -= s.mean(axis=0)
    ref = lattice_direct_sum(kind, src, trg, s, MAT, 1.0, nrm)
    got = fmm_sum_periodic(kind, src, trg, s, MAT, 1.0, nrm, order=8, leaf_size=8)
    assert rel(got, ref) < 1e-5


def test_periodic_translation_invariance():
    src, trg, nrm, s = cloud(300, 6, 100)
    s -= s.mean(axis=0)
    a = fmm_sum_periodic("D", src, trg, s, MAT, 1.0, nrm, order=6, leaf_size=32)
    b = fmm_sum_periodic("D", src + [1.0, -2.0, 3.0], trg - [0.0, 1.0, 0.0], s, MAT, 1.0, nrm,
                         order=6, leaf_size=32)
    assert np.abs(a - b).max() <= 1e-8 * np.abs(a).max()


def test_periodic_requires_equilibrated_forces():
    src, trg, nrm, s = cloud(50, 7, 5)
    with pytest.raises(NonEquilibratedSources):
        fmm_sum_periodic("U", src, trg, s, MAT, 1.0, order=6, leaf_size=16)
    # double-layer strengths carry no net force and are accepted
    fmm_sum_periodic("P", src, trg, s, MAT, 1.0, nrm, order=6, leaf_size=16)


def test_periodic_backend_period():
    b = PeriodicFmmBackend(MAT, period=2.0, order=6)
    assert b.period == 2.0 and b.periodic
    with pytest.raises(ValueError):
        PeriodicFmmBackend(MAT, period=0.0)
