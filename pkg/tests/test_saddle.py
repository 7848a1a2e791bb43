"""Saddle engine: merit, extragradient iterations, order swaps."""

import numpy as np
import pytest

from transeq import (
    BlockSpec,
    Box,
    Orthant,
    SaddleProblem,
    Simplex,
    SolveConfig,
    best_response_gap,
    gravity_sinkhorn,
    mirror_prox,
    order_swap_check,
    solve_constrained,
)
from transeq.saddle import default_point

from conftest import coupling_instance
from transeq.distribution import assemble_constrained


def bilinear_problem():
    """min over x in [-1,1], max over y in [-1,1] of x*y."""
    blocks = [BlockSpec("x", "min", 1, Box(-1.0, 1.0)),
              BlockSpec("y", "max", 1, Box(-1.0, 1.0))]
    return SaddleProblem(blocks=blocks,
                         oracle=lambda z: [z[1].copy(), z[0].copy()],
                         objective=lambda z: float(z[0][0] * z[1][0]),
                         linear_blocks=frozenset({"x", "y"}))


def matrix_game(A):
    A = np.asarray(A, dtype=float)
    blocks = [BlockSpec("p", "min", A.shape[0], Simplex(1.0), geometry="entropy"),
              BlockSpec("q", "max", A.shape[1], Simplex(1.0), geometry="entropy")]
    return SaddleProblem(blocks=blocks,
                         oracle=lambda z: [A @ z[1], A.T @ z[0]],
                         objective=lambda z: float(z[0] @ (A @ z[1])),
                         linear_blocks=frozenset({"p", "q"}))


OFF_CENTER = [np.array([0.7]), np.array([-0.4])]


# -------------------------------------------------------------------- merit

def test_merit_zero_at_bilinear_saddle():
    prob = bilinear_problem()
    z = [np.array([0.0]), np.array([0.0])]
    assert best_response_gap(prob, z) == 0.0


def test_merit_at_corner_point():
    # max side gains 1 by pushing y to sign(x); the min side sees a flat
    # objective at y=0, so the merit is the max-side gain alone.  Each
    # side starts from the queried point: scoring the min side after the
    # max side's move would jump the merit discontinuously near saddles.
    prob = bilinear_problem()
    z = [np.array([1.0]), np.array([0.0])]
    assert best_response_gap(prob, z) == pytest.approx(1.0)


def test_merit_positive_off_saddle():
    prob = bilinear_problem()
    z = [np.array([0.3]), np.array([-0.8])]
    assert best_response_gap(prob, z) > 0.1


def test_merit_zero_at_uniform_identity_game():
    prob = matrix_game(np.eye(2))
    z = [np.full(2, 0.5), np.full(2, 0.5)]
    assert best_response_gap(prob, z) == 0.0


def test_merit_detects_pure_strategy_error():
    prob = matrix_game(np.eye(2))
    z = [np.array([1.0, 0.0]), np.array([1.0, 0.0])]
    # max keeps q on the first good (payoff 1); min escapes to 0
    assert best_response_gap(prob, z) == pytest.approx(1.0)


# --------------------------------------------------------------- mirror_prox

def test_bilinear_converges_to_origin():
    sol = mirror_prox(bilinear_problem(), SolveConfig(tol=1e-8, max_iter=20000),
                      z0=OFF_CENTER, averaging="tail")
    assert sol.converged
    assert abs(sol.z_avg[0][0]) <= 1e-6
    assert abs(sol.z_avg[1][0]) <= 1e-6
    assert sol.gap <= 1e-6


def test_identity_game_uniform_value():
    sol = mirror_prox(matrix_game(np.eye(2)),
                      SolveConfig(tol=1e-7, max_iter=40000), averaging="tail")
    assert sol.converged
    assert np.allclose(sol.z_avg[0], [0.5, 0.5], atol=1e-3)
    assert np.allclose(sol.z_avg[1], [0.5, 0.5], atol=1e-3)
    value = float(sol.z_avg[0] @ sol.z_avg[1])
    assert value == pytest.approx(0.5, abs=1e-3)


def test_antidiagonal_game_uniform_value():
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    sol = mirror_prox(matrix_game(A),
                      SolveConfig(tol=1e-7, max_iter=40000), averaging="tail")
    assert sol.converged
    assert np.allclose(sol.z_avg[0], [0.5, 0.5], atol=1e-3)
    value = float(sol.z_avg[0] @ (A @ sol.z_avg[1]))
    assert value == pytest.approx(0.5, abs=1e-3)


def test_ergodic_gap_follows_inverse_k():
    gaps = {}
    for k in (100, 1000, 10000):
        sol = mirror_prox(bilinear_problem(),
                          SolveConfig(tol=1e-300, max_iter=k),
                          z0=OFF_CENTER, check_every=k)
        gaps[k] = sol.gap
    assert gaps[100] > gaps[1000] > gaps[10000]
    for k1, k2 in ((100, 1000), (1000, 10000)):
        ratio = gaps[k1] / gaps[k2]
        law = k2 / k1
        assert law / 2 <= ratio <= law * 2


def test_trace_gaps_nonnegative():
    sol = mirror_prox(bilinear_problem(), SolveConfig(tol=1e-300, max_iter=2000),
                      z0=OFF_CENTER, check_every=100)
    assert all(g >= 0.0 for g in sol.trace.gaps)


def test_iterates_stay_feasible():
    prob = assemble_constrained(coupling_instance(1.0), SolveConfig())
    seen = []
    inner = prob.oracle

    def spy(z):
        seen.append([np.array(v, copy=True) for v in z])
        return inner(z)

    spied = SaddleProblem(blocks=prob.blocks, oracle=spy,
                          objective=prob.objective,
                          linear_blocks=prob.linear_blocks)
    mirror_prox(spied, SolveConfig(tol=1e-6, max_iter=500), spot_check=False)
    assert seen
    for z in seen:
        d = z[0]
        assert np.all(d >= 0.0)
        assert np.sum(d) == pytest.approx(2.0, abs=1e-9)


def test_mirror_prox_deterministic():
    a = mirror_prox(bilinear_problem(), SolveConfig(tol=1e-300, max_iter=3000),
                    z0=OFF_CENTER, check_every=100)
    b = mirror_prox(bilinear_problem(), SolveConfig(tol=1e-300, max_iter=3000),
                    z0=OFF_CENTER, check_every=100)
    assert a.trace.gaps == b.trace.gaps
    for va, vb in zip(a.z_avg, b.z_avg):
        assert np.array_equal(va, vb)


def test_non_finite_oracle_aborts():
    blocks = [BlockSpec("x", "min", 1, Box(-1.0, 1.0)),
              BlockSpec("y", "max", 1, Box(-1.0, 1.0))]
    prob = SaddleProblem(blocks=blocks,
                         oracle=lambda z: [np.array([np.nan]), z[0].copy()],
                         objective=lambda z: float(z[0][0] * z[1][0]))
    with pytest.raises(RuntimeError, match="non-finite"):
        mirror_prox(prob, SolveConfig(tol=1e-6, max_iter=100), spot_check=False)


def test_block_validation():
    with pytest.raises(ValueError, match="side"):
        BlockSpec("x", "down", 1, Box(0.0, 1.0))
    with pytest.raises(ValueError, match="entropy"):
        BlockSpec("x", "min", 2, Box(0.0, 1.0), geometry="entropy")
    with pytest.raises(ValueError, match="mass"):
        Simplex(0.0)
    with pytest.raises(ValueError, match="cap"):
        Orthant(cap=-1.0)
    with pytest.raises(ValueError, match="duplicate"):
        SaddleProblem(
            blocks=[BlockSpec("x", "min", 1, Box(0.0, 1.0)),
                    BlockSpec("x", "max", 1, Box(0.0, 1.0))],
            oracle=lambda z: [z[1], z[0]],
            objective=lambda z: 0.0)


def test_default_points_feasible():
    for fs, dim in ((Simplex(2.0), 3), (Orthant(), 2), (Orthant(cap=0.5), 2),
                    (Box(-1.0, 3.0), 4)):
        z = default_point(BlockSpec("b", "min", dim, fs))
        assert z.shape == (dim,)
        if isinstance(fs, Simplex):
            assert np.sum(z) == pytest.approx(fs.mass)
        if isinstance(fs, Box):
            assert np.all(z >= fs.lo) and np.all(z <= fs.hi)


# ---------------------------------------------------------------- order swap

def test_swap_check_bilinear():
    res = order_swap_check(bilinear_problem(), SolveConfig(tol=1e-3))
    assert res.inner_converged
    assert res.minmax == pytest.approx(0.0, abs=1e-6)
    assert res.maxmin == pytest.approx(0.0, abs=1e-6)


def test_swap_check_identity_game():
    res = order_swap_check(matrix_game(np.eye(2)), SolveConfig(tol=1e-3))
    assert res.inner_converged
    assert res.minmax == pytest.approx(0.5, abs=1e-3)
    assert res.maxmin == pytest.approx(0.5, abs=1e-3)


def test_swap_check_coupling_matches_direct_objective():
    inst = coupling_instance(1.0)
    cfg = SolveConfig(tol=1e-3)
    res = order_swap_check(assemble_constrained(inst, cfg), cfg)
    assert res.inner_converged
    assert abs(res.minmax - res.maxmin) <= 1e-3
    # the same optimal value through the direct entropic solver
    sk = gravity_sinkhorn(np.array([[1.0, 2.0], [2.0, 1.0]]),
                          np.ones(2), np.ones(2), gamma=1.0)
    T = np.array([[1.0, 2.0], [2.0, 1.0]])
    d = sk.d
    value = float((T * d).sum()) + 1.0 * float((d * np.log(d / 2.0)).sum())
    assert res.minmax == pytest.approx(value, abs=1e-3)
