import numpy as np
import pytest

from dispersivelab.eikonal import (PhaseTable, eikonal_residual,
                                   phase_decay_report, region_probe_points,
                                   solve_eikonal)
from dispersivelab.errors import CausticDetected, ProbeOutsideRegion
from dispersivelab.geometry import (ConicRegion, bump_metric, flat_metric,
                                    long_range_metric)

REGION = ConicRegion(+1, 8.0, (0.5, 2.0), -0.8)


def test_flat_table_exact():
    m = flat_metric(1)
    pt = solve_eikonal(m, REGION)
    px, pxi = region_probe_points(REGION, 1)
    assert eikonal_residual(pt, m, px, pxi) == 0.0
    S, gxi = pt.evaluate(px, pxi, want_grad_xi=True)
    assert np.abs(S - np.sum(px * pxi, axis=-1)).max() == 0.0
    assert np.abs(gxi - px).max() == 0.0
    rep = phase_decay_report(pt, m, refine_check=False)
    assert all(v == 0.0 for v in rep["constants"].values())


def test_bump_table_residual_within_tol():
    m = bump_metric(1, eps=0.1)
    pt = solve_eikonal(m, REGION, tol=1e-8)
    assert pt.node_residual(m) <= 1e-8
    px, pxi = region_probe_points(REGION, 1)
    assert eikonal_residual(pt, m, px, pxi) <= 1e-8
    # offset probe grid stays within the interpolation budget
    px2, pxi2 = region_probe_points(REGION, 1, offset=0.37)
    assert eikonal_residual(pt, m, px2, pxi2) <= 10.0 * 1e-8


def test_long_range_radius_scaling():
    """sup|S - x.xi| scales like R^(1-nu) across region radii."""
    m = long_range_metric(1, eps=0.1, nu=1.5)
    sups = {}
    for R in (8.0, 16.0):
        reg = ConicRegion(+1, R, (0.5, 2.0), -0.8)
        pt = solve_eikonal(m, reg, tol=1e-8)
        xs = np.linspace(R, 6 * R, 200)[:, None]
        xis = np.ones((200, 1))
        S, _ = pt.evaluate(xs, xis)
        sups[R] = np.abs(S - xs[:, 0]).max()
    ratio = sups[8.0] / sups[16.0]
    predicted = 2.0 ** 0.5   # R^(1-nu) with nu = 3/2
    assert abs(ratio / predicted - 1.0) <= 0.5


def test_decay_report_pass_and_stability():
    m = long_range_metric(1, eps=0.1, nu=1.5)
    pt = solve_eikonal(m, REGION, tol=1e-8)
    rep = phase_decay_report(pt, m)
    assert rep["verdict"] == "pass"
    assert rep["refinement_drift"] <= 0.10
    assert all(np.isfinite(v) for v in rep["constants"].values())


def test_gradient_bound_stable_under_radius_doubling():
    """sup|dS/dx - xi| <= C R^-nu with C stable across radii."""
    m = long_range_metric(1, eps=0.1, nu=1.5)
    consts = {}
    for R in (8.0, 16.0):
        reg = ConicRegion(+1, R, (0.5, 2.0), -0.8)
        pt = solve_eikonal(m, reg, tol=1e-8)
        px, pxi = region_probe_points(reg, 1)
        eta = pt.grad_x(px, pxi)
        consts[R] = np.max(np.abs(eta - pxi)) * R ** 1.5
    assert consts[16.0] <= 1.05 * consts[8.0] + 1e-12


def test_reflection_symmetry():
    """Even metric: the reflected outgoing table equals the incoming one."""
    m = bump_metric(1, eps=0.1)
    tol = 1e-8
    pt_out = solve_eikonal(m, REGION, tol=tol)
    reg_in = ConicRegion(-1, 8.0, (0.5, 2.0), -0.8)
    pt_in = solve_eikonal(m, reg_in, tol=tol)
    refl = pt_out.reflected()
    px, pxi = region_probe_points(reg_in, 1)
    S1, _ = pt_in.evaluate(px, pxi)
    S2, _ = refl.evaluate(px, pxi)
    assert np.abs(S1 - S2).max() <= 10.0 * tol


def test_gradient_cross_consistency():
    """FD of the sampled S reproduces stored gradients at O(spacing^2)."""
    m = long_range_metric(1, eps=0.1, nu=1.5)
    pt = solve_eikonal(m, REGION, tol=1e-8)
    xs = np.linspace(9.0, 30.0, 64)[:, None]
    xis = np.full((64, 1), 1.1)
    dx = 1e-4
    S_up, _ = pt.evaluate(xs + dx, xis)
    S_dn, _ = pt.evaluate(xs - dx, xis)
    fd = (S_up - S_dn) / (2 * dx)
    stored = pt.grad_x(xs, xis)[:, 0]
    assert np.abs(fd - stored).max() < 1e-7
    dxi = 1e-4
    S_up, _ = pt.evaluate(xs, xis + dxi)
    S_dn, _ = pt.evaluate(xs, xis - dxi)
    fd_xi = (S_up - S_dn) / (2 * dxi)
    _, gxi = pt.evaluate(xs, xis, want_grad_xi=True)
    assert np.abs(fd_xi - gxi[:, 0]).max() < 1e-7


def test_probe_outside_region_raises():
    m = bump_metric(1, eps=0.1)
    pt = solve_eikonal(m, REGION, tol=1e-8)
    with pytest.raises(ProbeOutsideRegion):
        eikonal_residual(pt, m, np.array([[4.0]]), np.array([[1.0]]))


def test_far_radius_precondition():
    with pytest.raises(ValueError):
        solve_eikonal(bump_metric(1, eps=0.1), REGION, far_radius=20.0)


def test_2d_shooting_table_bump():
    m = bump_metric(2, eps=0.1, width=1.5)
    reg = ConicRegion(+1, 4.0, (0.5, 2.0), -0.6)
    pt = solve_eikonal(m, reg, x_grid=np.linspace(4.0, 20.0, 17),
                       xi_grid=np.linspace(0.62, 1.52, 7), tol=2e-5)
    assert pt.node_residual(m) <= 2e-5
    px, pxi = region_probe_points(reg, 2, n_r=6, n_ang=4, n_xi=3,
                                  r_hi_factor=4.0)
    res = eikonal_residual(pt, m, px, pxi)
    assert res <= 5e-4   # linear interpolation budget between table nodes
    # remainder S - x.xi is small and finite on the region
    S, _ = pt.evaluate(px, pxi)
    rem = np.abs(S - np.sum(px * pxi, axis=-1))
    assert np.isfinite(rem).all() and rem.max() < 0.2


def test_2d_incoming_table():
    m = bump_metric(2, eps=0.1, width=1.5)
    reg = ConicRegion(-1, 4.0, (0.5, 2.0), -0.6)
    pt = solve_eikonal(m, reg, x_grid=np.linspace(4.0, 16.0, 13),
                       xi_grid=np.linspace(0.62, 1.52, 5), tol=2e-5)
    assert pt.node_residual(m) <= 2e-5


def test_2d_caustic_detection():
    # a strong conformal well focuses rays behind it: characteristics fold
    m = bump_metric(2, eps=-0.65, width=1.5)
    reg = ConicRegion(+1, 2.0, (0.5, 2.0), -0.85)
    with pytest.raises(CausticDetected):
        solve_eikonal(m, reg, x_grid=np.linspace(2.0, 12.0, 15),
                      xi_grid=np.linspace(0.62, 1.52, 5), tol=1e-5,
                      far_radius=40.0)
