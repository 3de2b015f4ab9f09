"""Ambient geometry: conformal factors, Christoffels, Ricci, FD oracles."""

import numpy as np
import pytest

from ckflow import ambient
from ckflow.errors import DomainExit


def _interior_points(geom, rng, n=100):
    """Random points well inside the domain, biased to the unit shell."""
    pts = []
    while len(pts) < n:
        p = rng.uniform(-1.4, 1.4, size=3)
        r = np.linalg.norm(p)
        if 0.3 < r and geom.in_domain(p[None, :], margin=0.1)[0]:
            pts.append(p)
    return np.array(pts)


def test_metric_euclidean_identity(euclid):
    p = np.array([[0.3, -1.2, 0.7]])
    assert np.allclose(euclid.metric_at(p)[0], np.eye(3))


def test_metric_paper_spot_values(paper):
    # f(1,0,0) = -ln 1 = 0 and f(0,1,0) = -ln 5
    g1 = paper.metric_at(np.array([[1.0, 0.0, 0.0]]))[0]
    g2 = paper.metric_at(np.array([[0.0, 1.0, 0.0]]))[0]
    assert np.allclose(g1, np.eye(3), atol=1e-14)
    assert np.allclose(g2, np.eye(3) / 25.0, atol=1e-14)


def test_metric_positive_multiple_of_identity(euclid, paper, poincare):
    rng = np.random.default_rng(3)
    for geom in (euclid, paper, poincare):
        pts = _interior_points(geom, rng, n=20)
        g = geom.metric_at(pts)
        scale = g[:, 0, 0]
        assert np.all(scale > 0.0)
        assert np.allclose(g, scale[:, None, None] * np.eye(3)[None])


def test_grad_f_closed_forms(euclid, paper):
    p = np.array([[1.0, 0.0, 0.0]])
    assert np.allclose(euclid.grad_f(p), 0.0)
    # grad f = -2 (x-2, y, z)/q; at (1,0,0): q = 1, grad = (2, 0, 0)
    assert np.allclose(paper.grad_f(p)[0], [2.0, 0.0, 0.0], atol=1e-12)


def test_grad_f_matches_fd(paper, poincare):
    rng = np.random.default_rng(5)
    for geom in (paper, poincare):
        for p in _interior_points(geom, rng, n=10):
            fd = ambient.fd_grad_scalar(geom, geom.f, p)
            assert np.allclose(geom.grad_f(p[None])[0], fd, atol=1e-6)


def test_hessian_linear_function_euclidean(euclid):
    # covariant Hessian of a chart-linear function vanishes in flat space
    def lin(p):
        p = np.asarray(p, dtype=float)
        return 0.3 * p[..., 0] - 1.1 * p[..., 1] + 0.25 * p[..., 2]

    # roundoff floor of the central second difference is ~eps/h^2 ~ 1e-8
    h = ambient.hessian_scalar(euclid, lin, np.array([0.4, -0.2, 0.9]))
    assert np.max(np.abs(h)) < 1e-7


def test_christoffel_symmetry_and_fd(euclid, paper, poincare):
    rng = np.random.default_rng(7)
    for geom in (euclid, paper, poincare):
        pts = _interior_points(geom, rng, n=100)
        gam = geom.christoffels_at(pts)
        assert np.allclose(gam, np.swapaxes(gam, 2, 3))
        for p in pts[:12]:
            fd = ambient.christoffels_fd(geom, p)
            ana = geom.christoffels_at(p[None])[0]
            assert np.max(np.abs(ana - fd)) <= 1e-6 * (1.0 + np.max(np.abs(ana)))


def test_christoffels_euclidean_zero(euclid):
    pts = np.array([[0.5, 0.1, -0.3], [1.5, 0.0, 0.2]])
    assert np.allclose(euclid.christoffels_at(pts), 0.0)


def test_ricci_flat_geometries(euclid, paper):
    pts = np.array([[1.0, 0.0, 0.0], [0.4, 0.8, -0.3]])
    assert np.allclose(euclid.ricci_at(pts), 0.0, atol=1e-12)
    assert np.allclose(paper.ricci_at(pts), 0.0, atol=1e-12)


def test_ricci_poincare_einstein(poincare):
    rng = np.random.default_rng(11)
    pts = _interior_points(poincare, rng, n=8)
    ana = poincare.ricci_at(pts)
    for k, p in enumerate(pts):
        # Einstein: Ric = -2 g in ambient dimension 3
        target = -2.0 * poincare.metric_at(p[None])[0]
        assert np.allclose(ana[k], target, atol=1e-12)
        fd = ambient.ricci_fd(poincare, p)
        assert np.max(np.abs(fd - target)) <= 1e-4 * (1.0 + np.max(np.abs(target)))


def test_ricci_fd_matches_closed_form_everywhere(euclid, paper, poincare):
    rng = np.random.default_rng(13)
    for geom in (euclid, paper, poincare):
        for p in _interior_points(geom, rng, n=6):
            fd = ambient.ricci_fd(geom, p)
            ana = geom.ricci_at(p[None])[0]
            assert np.max(np.abs(fd - ana)) <= 1e-4 * (1.0 + np.max(np.abs(ana)))


def test_domain_rejection(paper, poincare):
    outside = np.array([[2.5, 0.0, 0.0]])
    with pytest.raises(DomainExit):
        paper.require_in_domain(outside)
    with pytest.raises(DomainExit):
        paper.metric_at(np.array([[0.0, 0.0, 0.0]]))
    with pytest.raises(DomainExit):
        poincare.require_in_domain(np.array([[1.2, 0.0, 0.0]]))


def test_make_geometry_names():
    assert isinstance(ambient.make_geometry("euclidean"), ambient.Euclidean)
    assert isinstance(ambient.make_geometry("paper_example"), ambient.PaperExample)
    ball = ambient.make_geometry("poincare_ball", radius=2.0)
    assert isinstance(ball, ambient.PoincareBall)
    with pytest.raises(ValueError):
        ambient.make_geometry("torus")
