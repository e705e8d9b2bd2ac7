import numpy as np
import pytest

from dispersivelab.errors import StepFailure
from dispersivelab.geometry import (ConicRegion, CotangentPoint, bump_metric,
                                    circular_orbit_state, flat_metric,
                                    hamiltonian_flow, long_range_metric,
                                    metric_from_table, nontrapping_certificate,
                                    principal_symbol, subprincipal_symbol,
                                    trapping_demo_metric,
                                    validate_symbol_expansion,
                                    verify_long_range)
from dispersivelab.grids import GridSpec


def test_principal_symbol_flat_values():
    m = flat_metric(2)
    assert principal_symbol(m, CotangentPoint([0.3, -1.2], [1.0, 0.0])) == pytest.approx(1.0)
    assert principal_symbol(m, CotangentPoint([5.0, 2.0], [3.0, 4.0])) == pytest.approx(25.0)


def test_principal_symbol_bump_point():
    # independent direct evaluation: ginv(0) = 1 + 0.1 exp(0) = 1.1
    m = bump_metric(1, eps=0.1)
    val = principal_symbol(m, CotangentPoint([0.0], [1.0]))
    assert val == pytest.approx(1.1, abs=1e-12)


def test_metric_positive_definite_and_inverse_consistency():
    for m in (bump_metric(2, eps=0.1), long_range_metric(2, eps=0.1, nu=1.5),
              trapping_demo_metric()):
        assert m.positivity_margin() > 0.0
        x = np.array([0.7, -1.3])
        prod = m.inv_coeff(x) @ m.coeff(x)
        assert np.abs(prod - np.eye(2)).max() < 1e-12


def test_subprincipal_trivial_cases():
    m = flat_metric(2)
    assert subprincipal_symbol(m, CotangentPoint([1.0, 2.0], [3.0, -1.0])) == 0
    mb = bump_metric(1, eps=0.1)
    assert subprincipal_symbol(mb, CotangentPoint([0.5], [0.0])) == 0


def test_subprincipal_against_plane_wave_fit():
    """Oracle: apply the discrete operator to plane waves and fit the O(h) term."""
    mb = bump_metric(1, eps=0.1)
    grid = GridSpec(1, 30.0, 4096)
    from dispersivelab.propagators import discretize
    from dispersivelab.grids import GridFunction

    P = discretize(mb, grid)
    x0 = 0.5
    i0 = int(round((x0 + grid.box_half_width) / grid.dx))
    x0 = grid.axis[i0]

    def order_h_coeff(h, xi_target=1.0):
        # snap the momentum onto an exact grid mode so the plane wave is
        # periodic on the box
        kappa_grid = grid.freq_axis
        k_idx = np.argmin(np.abs(kappa_grid - xi_target / h))
        kappa = kappa_grid[k_idx]
        xi = h * kappa
        pw = GridFunction(grid, np.exp(1j * kappa * grid.axis))
        val = (h * h * P.apply(pw).values[i0]) * np.exp(-1j * kappa * x0)
        p2 = principal_symbol(mb, CotangentPoint([x0], [xi]))
        return (val - p2) / h, xi

    # Richardson in h removes the h^2 symbol's contamination
    r1, xi1 = order_h_coeff(0.05)
    r2, xi2 = order_h_coeff(0.025)
    fitted = 2.0 * r2 - r1
    expected = subprincipal_symbol(mb, CotangentPoint([x0], [0.5 * (xi1 + xi2)]))
    assert abs(fitted - expected) < 1e-6


def test_validate_symbol_expansion_flat_and_rate():
    grid = GridSpec(1, 30.0, 512)
    flat = validate_symbol_expansion(flat_metric(1), 0.2, grid)
    assert flat["defect"] <= 1e-10
    mb = bump_metric(1, eps=0.1)
    d1 = validate_symbol_expansion(mb, 0.2, grid)["defect"]
    d2 = validate_symbol_expansion(mb, 0.1, grid)["defect"]
    assert np.isfinite(d1) and d1 > 0
    assert 2.8 <= d1 / d2 <= 5.2


def test_verify_long_range_families():
    flat_rep = verify_long_range(flat_metric(1))
    assert flat_rep["verdict"] == "pass"
    assert all(v == 0.0 for v in flat_rep["constants"].values())
    assert verify_long_range(bump_metric(1, eps=0.1))["verdict"] == "pass"
    lr = verify_long_range(long_range_metric(1, eps=0.1, nu=1.0))
    assert lr["verdict"] == "pass"
    assert all(np.isfinite(v) for v in lr["constants"].values())
    # negative control: tail decays slower than the declared rate
    assert verify_long_range(trapping_demo_metric())["verdict"] == "fail"


def test_flow_flat_straight_line():
    m = flat_metric(2)
    traj = hamiltonian_flow(m, CotangentPoint([0.0, 0.0], [1.0, 0.0]), 3.0, tol=1e-10)
    t_end, p_end = traj[-1]
    assert t_end == pytest.approx(3.0)
    assert np.allclose(p_end.x, [6.0, 0.0], atol=1e-9)
    assert np.allclose(p_end.xi, [1.0, 0.0], atol=1e-12)
    # energy drift vanishes to roundoff on straight lines
    e0 = principal_symbol(m, traj[0][1])
    drift = max(abs(principal_symbol(m, p) - e0) for _, p in traj)
    assert drift < 1e-13


def test_flow_energy_and_reversibility():
    m = bump_metric(2, eps=0.1)
    p0 = CotangentPoint([0.3, 0.1], [1.0, 0.2])
    tol = 1e-9
    traj = hamiltonian_flow(m, p0, 10.0, tol=tol)
    e0 = principal_symbol(m, p0)
    assert max(abs(principal_symbol(m, p) - e0) for _, p in traj) <= tol * max(1, e0)
    # reverse from the endpoint
    _, p_end = traj[-1]
    back = hamiltonian_flow(m, CotangentPoint(p_end.x, -p_end.xi), 10.0, tol=tol)
    _, p_back = back[-1]
    dist = np.linalg.norm(p_back.x - p0.x) + np.linalg.norm(-p_back.xi - p0.xi)
    assert dist <= 10 * tol * 100  # phase-space return within 10*tol budget


def test_flow_rejects_zero_momentum():
    with pytest.raises(ValueError):
        hamiltonian_flow(flat_metric(1), CotangentPoint([0.0], [0.0]), 1.0)


def test_certificate_flat_escape_bound():
    m = flat_metric(2)
    cert = nontrapping_certificate(m, (0.5, 2.0), seed_ball=2.5,
                                   escape_radius=20.0, horizon=40.0,
                                   n_samples=30, seed=0)
    assert cert["verdict"] == "pass"
    # straight lines at speed 2|xi| with |xi| >= sqrt(0.5)
    bound = (2.5 + 20.0) / (2.0 * np.sqrt(0.5))
    assert cert["worst_escape_time"] <= bound
    assert len(cert["worst_trajectory"]) > 1


def test_certificate_bump_passes_and_is_deterministic():
    m = bump_metric(2, eps=0.1)
    c1 = nontrapping_certificate(m, (0.5, 2.0), n_samples=24, horizon=30.0, seed=5)
    c2 = nontrapping_certificate(m, (0.5, 2.0), n_samples=24, horizon=30.0, seed=5)
    assert c1["verdict"] == "pass"
    assert c1 == c2


def test_trapping_demo_has_exact_circular_orbit():
    m = trapping_demo_metric()
    p0 = circular_orbit_state(m)
    traj = hamiltonian_flow(m, p0, 50.0, tol=1e-6)
    radii = [np.linalg.norm(p.x) for _, p in traj]
    assert max(radii) - min(radii) < 1e-6
    cert = nontrapping_certificate(m, (0.5, 2.0), seed_ball=3.0,
                                   escape_radius=20.0, horizon=40.0,
                                   n_samples=40, seed=0, tol=1e-7)
    assert cert["verdict"] == "fail"
    assert cert["worst_escape_time"] is None


def test_metric_table_plugin_roundtrip():
    src = bump_metric(2, eps=0.1)
    ax = np.linspace(-8.0, 8.0, 161)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    pts = np.stack([X, Y], axis=-1)
    samples = src.inv_coeff_batch(pts)
    m = metric_from_table((ax, ax), samples, nu=4.0, r0=0.0)
    probe = np.array([[0.37, -1.22], [3.1, 2.2], [30.0, 0.0]])
    got = m.inv_coeff_batch(probe)
    want = src.inv_coeff_batch(probe[:2])
    assert np.abs(got[:2] - want).max() < 1e-6
    # identity continuation outside the tabulated box
    assert np.abs(got[2] - np.eye(2)).max() == 0.0


def test_conic_region_membership():
    reg = ConicRegion(+1, 8.0, (0.5, 2.0), -0.5)
    assert reg.contains(np.array([[10.0, 0.0]]), np.array([[1.0, 0.0]]))[0]
    assert not reg.contains(np.array([[5.0, 0.0]]), np.array([[1.0, 0.0]]))[0]
    assert not reg.contains(np.array([[10.0, 0.0]]), np.array([[-1.0, 0.0]]))[0]
    with pytest.raises(ValueError):
        ConicRegion(+1, 8.0, (-0.5, 2.0), -0.5)
