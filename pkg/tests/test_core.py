"""Anchored storage and pair reconstruction against literal double sums."""

import numpy as np
import pytest

from parpath.core import (Grid, PartialRoughPath, level1_pairs, level2_pairs,
                          lift_sampled_paths, reconstruct_level1,
                          reconstruct_level2)
from parpath.exceptions import DomainError, IndexSetError

from conftest import oracle_level1, oracle_level2, random_walk_paths


def _pairs_to_check(N, count=12, seed=3):
    gen = np.random.default_rng(seed)
    pairs = {(0, N), (0, 1), (N - 1, N), (N // 2, N // 2)}
    while len(pairs) < count:
        s, t = sorted(gen.integers(0, N + 1, size=2))
        pairs.add((int(s), int(t)))
    return sorted(pairs)


@pytest.mark.parametrize("cell_correction", [False, True])
def test_reconstruction_matches_double_sums(small_cfg, cell_correction):
    N = 64
    grid = Grid(T=1.0, N=N)
    xhat, x = random_walk_paths(11, N)
    prp = lift_sampled_paths(xhat, x, small_cfg, grid,
                             cell_correction=cell_correction)
    delta = grid.delta if cell_correction else None
    xh = prp.xhat  # anchored copy the lift actually stored
    for s, t in _pairs_to_check(N):
        for i in small_cfg.I:
            got = reconstruct_level1(prp, i, s, t)
            want = oracle_level1(xh, x - x[0], i, s, t)
            assert np.max(np.abs(got - want)) <= 1e-13 * (1 + np.max(np.abs(want)))
        for jk in small_cfg.J:
            got = reconstruct_level2(prp, jk, s, t)
            want = oracle_level2(xh, x - x[0], jk, s, t, delta=delta)
            assert np.max(np.abs(got - want)) <= 1e-13 * (1 + np.max(np.abs(want)))


def test_reconstruction_deep_index_set(default_cfg):
    # High-degree indices stress the graded recursion; a short path keeps
    # the double sums cheap.
    N = 16
    grid = Grid(T=1.0, N=N)
    xhat, x = random_walk_paths(23, N, scale=0.3)
    prp = lift_sampled_paths(xhat, x, default_cfg, grid)
    for s, t in [(0, N), (3, 11), (5, 6), (0, 9)]:
        for i in default_cfg.I:
            got = reconstruct_level1(prp, i, s, t)
            want = oracle_level1(prp.xhat, x - x[0], i, s, t)
            assert np.max(np.abs(got - want)) <= 1e-12 * (1 + np.max(np.abs(want)))
        for jk in default_cfg.J:
            got = reconstruct_level2(prp, jk, s, t)
            want = oracle_level2(prp.xhat, x - x[0], jk, s, t)
            assert np.max(np.abs(got - want)) <= 1e-12 * (1 + np.max(np.abs(want)))


def test_anchored_roundtrip(walk_prp):
    cfg = walk_prp.config
    for t in (1, 17, walk_prp.N):
        for i in cfg.I:
            assert np.array_equal(reconstruct_level1(walk_prp, i, 0, t),
                                  walk_prp.a[i][t])
        for jk in cfg.J:
            assert np.array_equal(reconstruct_level2(walk_prp, jk, 0, t),
                                  walk_prp.b[jk][t])


def test_degenerate_pair_is_zero(walk_prp):
    cfg = walk_prp.config
    for i in cfg.I:
        assert np.all(reconstruct_level1(walk_prp, i, 5, 5) == 0.0)
    for jk in cfg.J:
        assert np.all(reconstruct_level2(walk_prp, jk, 5, 5) == 0.0)


def test_pair_validation(walk_prp):
    with pytest.raises(DomainError):
        reconstruct_level1(walk_prp, (0, 0), 7, 3)
    with pytest.raises(DomainError):
        reconstruct_level1(walk_prp, (0, 0), 0, walk_prp.N + 1)
    with pytest.raises(DomainError):
        reconstruct_level1(walk_prp, (0, 0), -1, 3)
    with pytest.raises(IndexSetError):
        reconstruct_level1(walk_prp, (99, 0), 0, 3)
    with pytest.raises(IndexSetError):
        reconstruct_level2(walk_prp, ((9, 9), (0, 0)), 0, 3)


def test_batched_pairs_match_single(walk_prp):
    cfg = walk_prp.config
    s = np.array([0, 3, 10, 64])
    t = np.array([5, 3, 127, 128])
    v1 = level1_pairs(walk_prp, s, t)
    v2 = level2_pairs(walk_prp, s, t)
    for p in range(s.size):
        for i in cfg.I:
            assert np.array_equal(
                v1[i][p], reconstruct_level1(walk_prp, i, int(s[p]), int(t[p])))
        for jk in cfg.J:
            assert np.array_equal(
                v2[jk][p], reconstruct_level2(walk_prp, jk, int(s[p]), int(t[p])))


def test_subset_queries(walk_prp):
    cfg = walk_prp.config
    s = np.array([2, 9])
    t = np.array([40, 77])
    top = max(cfg.I, key=sum)
    only = level1_pairs(walk_prp, s, t, indices=[top])
    assert set(only) == {top}
    assert np.array_equal(only[top], level1_pairs(walk_prp, s, t)[top])
    jk = cfg.J[-1]
    only2 = level2_pairs(walk_prp, s, t, pairs=[jk])
    assert set(only2) == {jk}
    assert np.array_equal(only2[jk], level2_pairs(walk_prp, s, t)[jk])


def test_lift_anchors_and_shapes(small_cfg):
    N = 32
    grid = Grid(T=2.0, N=N)
    xhat, x = random_walk_paths(5, N)
    xhat = xhat + 3.0  # non-anchored input must be recentered
    prp = lift_sampled_paths(xhat, x[:, 0], small_cfg, grid)  # 1-d x accepted
    assert np.all(prp.xhat[0] == 0.0)
    assert np.allclose(prp.xhat, xhat - xhat[0])
    assert prp.a[(0, 0)].shape == (N + 1, 1)
    # The zero index accumulates the raw driver increments.
    assert np.allclose(prp.a[(0, 0)][:, 0], x[:, 0] - x[0, 0], atol=1e-15)
    assert np.allclose(prp.increments(), np.diff(x, axis=0), atol=1e-15)


def test_container_validation(small_cfg):
    N = 8
    grid = Grid(T=1.0, N=N)
    xhat, x = random_walk_paths(1, N)
    prp = lift_sampled_paths(xhat, x, small_cfg, grid)
    good_a = {i: prp.a[i].copy() for i in small_cfg.I}
    good_b = {jk: prp.b[jk].copy() for jk in small_cfg.J}

    with pytest.raises(DomainError):
        PartialRoughPath(grid, small_cfg, prp.xhat[:-1], good_a, good_b)
    bad = dict(good_a)
    bad[(0, 0)] = bad[(0, 0)] + 1.0  # not anchored at 0
    with pytest.raises(DomainError):
        PartialRoughPath(grid, small_cfg, prp.xhat, bad, good_b)
    missing = dict(good_a)
    del missing[(0, 1)]
    with pytest.raises(DomainError):
        PartialRoughPath(grid, small_cfg, prp.xhat, missing, good_b)
    nonfinite = dict(good_b)
    nonfinite[small_cfg.J[0]] = np.full_like(good_b[small_cfg.J[0]], np.nan)
    with pytest.raises(DomainError):
        PartialRoughPath(grid, small_cfg, prp.xhat, good_a, nonfinite)

    frozen = prp.a[(0, 0)]
    with pytest.raises(ValueError):
        frozen[0, 0] = 1.0


def test_grid_validation():
    with pytest.raises(Exception):
        Grid(T=1.0, N=1)
    with pytest.raises(Exception):
        Grid(T=-1.0, N=8)
    g = Grid(T=2.0, N=4)
    assert g.delta == 0.5
    assert np.allclose(g.nodes, [0.0, 0.5, 1.0, 1.5, 2.0])
