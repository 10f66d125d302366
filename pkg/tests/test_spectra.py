"""Diffusion bases: orthonormality, gradients, band bookkeeping."""

import math

import numpy as np
import pytest

from cubaflow.geometry import Manifold, reference_grid, sphere_tangent_frame
from cubaflow.spectra import (
    DiffusionPoly,
    SpectralSpace,
    enumerate_basis,
    eval_poly,
    grad_poly,
)

CASES = [
    ("circle", 8.0, 16),
    ("torus2", 4.0, 48),
    ("sphere2", 3.0, 8),
    ("ellipse", 3.0, 8),
]


def make(kind):
    return Manifold("ellipse", 2.0, 1.0) if kind == "ellipse" else Manifold(kind)


@pytest.mark.parametrize("kind,band,dim", CASES)
def test_dimension_and_band(kind, band, dim):
    sp = enumerate_basis(make(kind), band)
    assert sp.dim == dim
    assert sp.kind == "diffusion"
    assert len(sp.labels) == dim
    assert np.all(sp.freqs > 0.0)  # constants excluded
    assert np.all(sp.freqs <= band + 1e-12)


@pytest.mark.parametrize("kind,band,dim", CASES)
def test_orthonormal_and_centered(kind, band, dim):
    m = make(kind)
    sp = enumerate_basis(m, band)
    grid = reference_grid(m, 2.0 * band + 1.0)
    vals = sp.evaluate(grid.charts)
    gram = vals.T @ (grid.qweights[:, None] * vals)
    tol = 1e-9 if kind == "ellipse" else 1e-12
    assert np.max(np.abs(gram - np.eye(dim))) < tol
    means = grid.qweights @ vals
    assert np.max(np.abs(means)) < tol


def test_frequencies_sorted_ascending():
    for kind, band, _ in CASES:
        sp = enumerate_basis(make(kind), band)
        assert np.all(np.diff(sp.freqs) >= -1e-12)


def test_circle_labels_and_values():
    sp = enumerate_basis(make("circle"), 2.0)
    assert sp.labels == [(1, "cos"), (1, "sin"), (2, "cos"), (2, "sin")]
    t = np.array([[0.4]])
    expect = [math.sqrt(2) * math.cos(0.4), math.sqrt(2) * math.sin(0.4),
              math.sqrt(2) * math.cos(0.8), math.sqrt(2) * math.sin(0.8)]
    assert np.allclose(sp.evaluate(t)[0], expect, atol=1e-15)


@pytest.mark.parametrize("kind,band,dim", CASES)
def test_gradients_match_finite_differences(kind, band, dim, rng):
    m = make(kind)
    sp = enumerate_basis(m, band)
    n = 12
    charts = rng.uniform(0.3, 2.6, (n, m.dim))
    g = sp.gradients(charts)
    h = 1e-6
    if kind == "sphere2":
        # directional derivatives along the tangent frame
        e1, e2 = sphere_tangent_frame(charts)
        for e in (e1, e2):
            analytic = np.einsum("nmt,nt->nm", g, e)
            from cubaflow.geometry import move_points
            fplus = sp.evaluate(move_points(m, charts, h * e))
            fminus = sp.evaluate(move_points(m, charts, -h * e))
            assert np.max(np.abs((fplus - fminus) / (2 * h) - analytic)) < 5e-6
    elif kind == "torus2":
        for axis in range(2):
            step = np.zeros((n, 2)); step[:, axis] = h
            fd = (sp.evaluate(charts + step) - sp.evaluate(charts - step)) / (2 * h)
            assert np.max(np.abs(fd - g[:, :, axis])) < 5e-6
    else:
        # scalar gradients in the arc-length frame
        from cubaflow.geometry import move_points
        fplus = sp.evaluate(move_points(m, charts, np.full(n, h)))
        fminus = sp.evaluate(move_points(m, charts, np.full(n, -h)))
        fd = (fplus - fminus) / (2 * h)
        assert np.max(np.abs(fd - g[:, :, 0])) < 5e-6


def test_gradient_norms_consistent(rng):
    m = make("torus2")
    sp = enumerate_basis(m, 3.0)
    charts = rng.uniform(0, 2 * math.pi, (20, 2))
    c = rng.standard_normal(sp.dim)
    norms = sp.gradient_norms(charts, c)
    manual = np.linalg.norm(np.tensordot(sp.gradients(charts), c, axes=(1, 0)), axis=1)
    assert np.allclose(norms, manual, atol=1e-13)


def test_eigenpair_matches_space():
    from cubaflow.geometry import canonical_point
    sp = enumerate_basis(make("circle"), 3.0)
    p = canonical_point(make("circle"), (1.234,))
    t = np.array([[1.234]])
    for pair in sp.basis():
        assert pair.evaluate(p) == pytest.approx(sp.evaluate(t)[0, pair.index], abs=1e-14)
        assert pair.freq <= 3.0


def test_poly_wrappers(rng):
    sp = enumerate_basis(make("circle"), 4.0)
    c = rng.standard_normal(sp.dim)
    p = DiffusionPoly(sp, c)
    t = rng.uniform(0, 2 * math.pi, (7, 1))
    assert np.allclose(p.values(t), sp.evaluate(t) @ c, atol=1e-14)
    assert np.allclose(
        p.tangent_gradients(t),
        np.tensordot(sp.gradients(t), c, axes=(1, 0)),
        atol=1e-15,
    )
    from cubaflow.geometry import canonical_point
    pt = canonical_point(make("circle"), (float(t[0, 0]),))
    assert eval_poly(p, pt) == pytest.approx(float(p.values(t[:1])[0]), abs=1e-14)
    assert grad_poly(p, pt) == pytest.approx(float(p.tangent_gradients(t[:1])[0, 0]), abs=1e-14)
    with pytest.raises(ValueError):
        DiffusionPoly(sp, c[:-1])


def test_enumerate_basis_cached_and_fresh_agree():
    m = make("circle")
    cached = enumerate_basis(m, 5.0)
    assert enumerate_basis(m, 5.0) is cached
    fresh = SpectralSpace(m, 5.0)
    t = np.array([[0.9]])
    assert np.allclose(fresh.evaluate(t), cached.evaluate(t), atol=0.0)


def test_manifest_fields():
    sp = enumerate_basis(make("sphere2"), 3.0)
    man = sp.manifest()
    assert man["dim"] == sp.dim
    assert man["band"] == 3.0
    assert len(man["modes"]) == sp.dim
