"""Kernels, the smoothed ascent flow, the node solver, and diagnostics."""

import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cubaflow import engine
from cubaflow.algebraic import build_restricted_space
from cubaflow.engine import (
    FlowConfig,
    SmootherV,
    flow_run,
    kernel_psi,
    kernel_w,
    mz_ratio_algebraic,
    mz_ratio_diffusion,
    residual_vector,
    riesz_coefficients,
    smooth_cutoff,
    solve,
    verify_rule,
)
from cubaflow.geometry import Manifold, reference_integrate
from cubaflow.partition import weighted_partition
from cubaflow.spectra import DiffusionPoly, enumerate_basis
from cubaflow.weights import concentrated_weights, random_band_weights

CIRCLE = Manifold("circle")
TORUS = Manifold("torus2")


# ---------------------------------------------------------------------------
# cutoff and smoother


def test_cutoff_plateaus():
    u = np.array([-3.0, -2.0, -1.0, -0.4, 0.0, 0.7, 1.0])
    h = smooth_cutoff(u)
    assert np.all(h[np.abs(u) <= 1.0] == 1.0)
    assert np.all(h[np.abs(u) >= 2.0] == 0.0)
    assert smooth_cutoff(1.5) == pytest.approx(0.5)  # symmetry midpoint
    mid = smooth_cutoff(np.linspace(1.0, 2.0, 200))
    assert np.all(np.diff(mid) <= 0.0)


@given(st.floats(min_value=1e-6, max_value=10.0))
@settings(max_examples=30)
def test_smoother_invariants(eps):
    v = SmootherV(eps)
    u = np.linspace(0.0, 3.0 * eps, 600)
    vu = v(u)
    assert np.all(vu >= u - 1e-13 * eps)
    assert np.all(vu >= 0.25 * eps - 1e-15)
    assert np.all(np.diff(vu) >= -1e-13 * eps)
    assert np.all(vu[u <= 0.25 * eps] == 0.5 * eps)
    tail = u >= 0.75 * eps
    assert np.array_equal(vu[tail], u[tail])  # exact identity past the ramp


def test_smoother_rejects_bad_scale():
    with pytest.raises(ValueError):
        SmootherV(0.0)
    with pytest.raises(ValueError):
        SmootherV(math.inf)


# ---------------------------------------------------------------------------
# kernels and residuals


def test_kernels_circle_band_one():
    """At cutoff 1 only the first pair survives: both kernels are 2 cos(x-y)."""
    sp = enumerate_basis(CIRCLE, 2.0)
    for x, y in [(0.3, 1.7), (0.0, 0.0), (2.1, 5.9)]:
        expect = 2.0 * math.cos(x - y)
        assert kernel_w(sp, [x], [y], 1.0) == pytest.approx(expect, abs=1e-12)
        assert kernel_psi(sp, [x], [y], 1.0) == pytest.approx(expect, abs=1e-12)


def test_kernel_requires_double_band():
    sp = enumerate_basis(CIRCLE, 2.0)
    with pytest.raises(ValueError):
        kernel_psi(sp, [0.1], [0.2], 1.5)


def test_kernel_rejects_algebraic_basis():
    alg = build_restricted_space(CIRCLE, 4)
    with pytest.raises(ValueError):
        kernel_w(alg, [0.1], [0.2], 2.0)


def test_riesz_circle_band_one():
    sp = enumerate_basis(CIRCLE, 1.0)
    r = riesz_coefficients(sp, [0.0])
    assert np.allclose(r, [math.sqrt(2.0), 0.0], atol=1e-15)


def test_reproducing_identity_circle(rng):
    L = 4.0
    sp = enumerate_basis(CIRCLE, L)
    sp2 = enumerate_basis(CIRCLE, 2.0 * L)
    for _ in range(5):
        c = rng.standard_normal(sp.dim)
        x = float(rng.uniform(0, 2 * math.pi))
        f = lambda ch: np.array(
            [kernel_psi(sp2, [x], row, L) for row in ch]
        ) * (sp.evaluate(ch) @ c)
        ip = reference_integrate(CIRCLE, f, 4.0 * L)
        direct = float((sp.evaluate(np.array([[x]])) @ c)[0])
        assert ip == pytest.approx(direct, abs=1e-10)


def test_residual_trapezoid_rule_exact():
    # equally weighted equal spacing is a classic strength-L rule
    L = 5.0
    n = 12  # > 2L
    sp = enumerate_basis(CIRCLE, L)
    pts = (np.arange(n) * 2.0 * math.pi / n)[:, None]
    r = residual_vector(sp, pts, np.full(n, 1.0 / n))
    assert np.max(np.abs(r)) < 1e-14


def test_residual_input_validation():
    sp = enumerate_basis(CIRCLE, 2.0)
    with pytest.raises(ValueError):
        residual_vector(sp, np.zeros((3, 1)), np.full(4, 0.25))
    with pytest.raises(ValueError):
        residual_vector(sp, np.zeros((3, 2)), np.full(3, 1 / 3))


# ---------------------------------------------------------------------------
# flow integrator


def test_flow_zero_field_is_stationary(rng):
    sp = enumerate_basis(TORUS, 3.0)
    seeds = rng.uniform(0, 2 * math.pi, (6, 2))
    res = flow_run(sp, np.zeros(sp.dim), seeds, FlowConfig(horizon=1.0))
    assert np.allclose(res.endpoints, seeds, atol=1e-12)
    assert np.all(res.functional == res.functional[0])


def test_flow_monotone_and_fourth_order(rng):
    sp = enumerate_basis(TORUS, 3.0)
    c = rng.standard_normal(sp.dim)
    c /= np.linalg.norm(c)
    seeds = rng.uniform(0, 2 * math.pi, (10, 2))
    r1 = flow_run(sp, c, seeds, FlowConfig(eps=2.0, horizon=0.5, steps_per_unit=128))
    assert np.all(np.diff(r1.functional) >= -1e-9)
    r2 = flow_run(sp, c, seeds, FlowConfig(eps=2.0, horizon=0.5, steps_per_unit=256))
    r3 = flow_run(sp, c, seeds, FlowConfig(eps=2.0, horizon=0.5, steps_per_unit=512))
    d12 = np.max(np.abs(r1.endpoints - r2.endpoints))
    d23 = np.max(np.abs(r2.endpoints - r3.endpoints))
    assert d23 < d12 / 8.0  # at least cubic decay per halving


def test_flow_accepts_poly_and_weights(rng):
    sp = enumerate_basis(CIRCLE, 3.0)
    c = rng.standard_normal(sp.dim)
    seeds = rng.uniform(0, 2 * math.pi, (4, 1))
    w = np.array([0.4, 0.3, 0.2, 0.1])
    res = flow_run(sp, DiffusionPoly(sp, c), seeds, FlowConfig(horizon=0.1), weights=w)
    assert res.functional[0] == pytest.approx(float(w @ (sp.evaluate(seeds) @ c)), abs=1e-12)


def test_flow_requires_horizon_or_c4(rng):
    sp = enumerate_basis(CIRCLE, 2.0)
    with pytest.raises(ValueError):
        flow_run(sp, np.zeros(sp.dim), np.zeros((2, 1)), FlowConfig())


def test_flow_config_validation():
    with pytest.raises(ValueError):
        FlowConfig(mode="annealing")
    with pytest.raises(ValueError):
        FlowConfig(restarts=0)
    with pytest.raises(ValueError):
        FlowConfig(tol=-1.0)
    with pytest.raises(ValueError):
        FlowConfig(eps=0.0)


# ---------------------------------------------------------------------------
# solver


def test_solve_small_circle_converges():
    rule = solve(CIRCLE, "diffusion", 2.0, np.full(8, 0.125), FlowConfig(tol=1e-12, seed=0))
    assert rule.converged
    assert rule.residual_linf < 1e-12
    assert rule.n == 8
    assert rule.stats["space_dim"] == 4


def test_solve_three_point_family():
    rule = solve(CIRCLE, "diffusion", 1.0, np.array([0.5, 0.25, 0.25]),
                 FlowConfig(tol=1e-12, seed=1))
    assert rule.converged
    t1, t2, t3 = rule.points[:, 0]
    for t in (t2, t3):
        gap = abs(t - t1 - math.pi) % (2.0 * math.pi)
        assert min(gap, 2.0 * math.pi - gap) < 1e-6


def test_solve_algebraic_circle():
    rule = solve(CIRCLE, "algebraic", 3, np.full(12, 1.0 / 12), FlowConfig(tol=1e-10, seed=2))
    assert rule.converged
    assert rule.space_kind == "algebraic"


def test_solve_warns_below_half_dimension():
    with pytest.warns(UserWarning):
        solve(CIRCLE, "diffusion", 8.0, np.full(4, 0.25),
              FlowConfig(mode="descent", restarts=1, seed=0))


def test_solve_deterministic():
    cfg = FlowConfig(seed=7, restarts=2)
    w = random_band_weights(16, 0.5, 2.0, 5)
    a = solve(CIRCLE, "diffusion", 3.0, w, cfg)
    b = solve(CIRCLE, "diffusion", 3.0, w, cfg)
    assert np.array_equal(a.points, b.points)
    assert engine.rule_to_json(a) == engine.rule_to_json(b)


def test_solve_flow_mode_reduces_residual():
    w = np.full(12, 1.0 / 12)
    part = weighted_partition(CIRCLE, w)
    sp = enumerate_basis(CIRCLE, 2.0)
    seed_res = np.max(np.abs(residual_vector(sp, part.representatives(), w)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rule = solve(CIRCLE, "diffusion", 2.0, w, FlowConfig(mode="flow", restarts=1, seed=0))
    assert rule.residual_linf <= seed_res + 1e-12


def test_solve_reports_obstruction():
    w = concentrated_weights(6)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rule = solve(CIRCLE, "diffusion", 2.0, w, FlowConfig(mode="descent", restarts=5, seed=0))
    assert not rule.converged
    assert rule.residual_linf >= 2.0 * w.values[0] - 1.0 - 1e-9


# ---------------------------------------------------------------------------
# serialization and verification


def test_rule_json_roundtrip():
    rule = solve(CIRCLE, "diffusion", 2.0, np.full(8, 0.125), FlowConfig(seed=3))
    text = engine.rule_to_json(rule)
    doc = json.loads(text)
    for key in ("manifold", "space", "L", "points", "weights",
                "residual_linf", "residual_l2", "converged", "seed"):
        assert key in doc
    back = engine.rule_from_json(text)
    assert np.allclose(back.points, rule.points, atol=0.0)
    assert back.band == rule.band
    with pytest.raises(ValueError):
        engine.rule_from_json(text.replace('"schema_version": 1', '"schema_version": 9'))


def test_rule_csv_shape():
    rule = solve(CIRCLE, "diffusion", 2.0, np.full(8, 0.125), FlowConfig(seed=3))
    lines = engine.rule_to_csv(rule).splitlines()
    assert lines[0] == "x0,x1,weight"
    assert len(lines) == 9


def test_verify_rule_passes_and_detects_corruption():
    rule = solve(CIRCLE, "diffusion", 3.0, np.full(10, 0.1), FlowConfig(tol=1e-10, seed=4))
    rep = verify_rule(rule, 1e-9)
    assert rep.passed
    assert rep.stored_consistent
    shifted = rule.points.copy()
    shifted[0] += 1e-3  # a single node off its orbit, not a rigid rotation
    bad = engine.CubatureRule(
        manifold=rule.manifold, space_kind=rule.space_kind, band=rule.band,
        points=shifted, weights=rule.weights, residual=rule.residual,
        residual_linf=rule.residual_linf, residual_l2=rule.residual_l2,
        converged=True, seed=rule.seed,
    )
    rep_bad = verify_rule(bad, 1e-9)
    assert not rep_bad.passed
    assert rep_bad.residual_linf > 1e-5


def test_lower_band_exactness_inherited():
    rule = solve(CIRCLE, "diffusion", 6.0, np.full(20, 0.05), FlowConfig(tol=1e-11, seed=5))
    assert rule.converged
    sp3 = enumerate_basis(CIRCLE, 3.0)
    r = residual_vector(sp3, rule.points, rule.weights)
    assert np.max(np.abs(r)) < 1e-11


# ---------------------------------------------------------------------------
# sampling ratio diagnostics


def test_mz_two_arc_anchor():
    """Midpoint sampling of |d/dt sqrt2 cos| on two half arcs: pi/2 - 1."""
    sp = enumerate_basis(CIRCLE, 1.0)
    part = weighted_partition(CIRCLE, np.array([0.5, 0.5]))
    c = np.zeros(sp.dim)
    c[sp.labels.index((1, "cos"))] = 1.0
    ratio = mz_ratio_diffusion(sp, part, part.representatives(), c)
    assert ratio == pytest.approx(math.pi / 2.0 - 1.0, abs=2e-3)


def test_mz_finer_partition_smaller_ratio():
    sp = enumerate_basis(CIRCLE, 1.0)
    c = np.zeros(sp.dim); c[0] = 1.0
    part8 = weighted_partition(CIRCLE, np.full(8, 0.125))
    ratio8 = mz_ratio_diffusion(sp, part8, part8.representatives(), c)
    assert ratio8 < 0.03


@given(st.floats(min_value=0.01, max_value=100.0))
@settings(max_examples=20)
def test_mz_scale_invariant(scale):
    sp = enumerate_basis(CIRCLE, 1.0)
    part = weighted_partition(CIRCLE, np.full(4, 0.25))
    c = np.array([0.3, -1.1])
    base = mz_ratio_diffusion(sp, part, part.representatives(), c)
    scaled = mz_ratio_diffusion(sp, part, part.representatives(), scale * c)
    assert scaled == pytest.approx(base, rel=1e-9)


def test_mz_algebraic_value_oracle():
    spa = build_restricted_space(CIRCLE, 1)
    part = weighted_partition(CIRCLE, np.full(3, 1.0 / 3.0))
    reps = part.representatives()
    grid = np.linspace(0, 2 * math.pi, 733)[:, None]
    coef, *_ = np.linalg.lstsq(spa.evaluate(grid), np.cos(grid.ravel()), rcond=None)
    ratio = mz_ratio_algebraic(spa, part, reps, coef, mode="value")
    sampled = float(np.mean(np.abs(np.cos(reps.ravel()))))
    oracle = abs(2.0 / math.pi - sampled) / (2.0 / math.pi)
    assert ratio == pytest.approx(oracle, abs=2e-3)


def test_mz_input_validation():
    sp = enumerate_basis(CIRCLE, 1.0)
    part = weighted_partition(CIRCLE, np.full(4, 0.25))
    with pytest.raises(ValueError):
        mz_ratio_diffusion(sp, part, np.zeros((3, 1)), np.ones(sp.dim))
    spa = build_restricted_space(CIRCLE, 2)
    with pytest.raises(ValueError):
        mz_ratio_algebraic(spa, part, part.representatives(), np.ones(spa.dim), mode="other")
    with pytest.raises(ValueError):
        mz_ratio_algebraic(sp, part, part.representatives(), np.ones(sp.dim))
