import numpy as np
import pytest

from dispersivelab.errors import GridTooCoarse, WindowOutOfRange
from dispersivelab.eikonal import solve_eikonal
from dispersivelab.geometry import ConicRegion, bump_metric, flat_metric
from dispersivelab.grids import GridFunction, GridSpec, gaussian_state
from dispersivelab.propagators import (chebyshev_function_apply,
                                       chebyshev_propagate, discretize,
                                       fio_apply, free_propagate,
                                       parametrix_apply, parametrix_kernel,
                                       reference_propagate, spectral_cutoff)
from dispersivelab.symbols import (SymbolField, directional_cutoff,
                                   quantize_apply, transport_symbols)
from dispersivelab.windows import SpectralWindow


GRID = GridSpec(1, 30.0, 512)


def band_limited(grid, seed=0, frac=0.35):
    rng = np.random.default_rng(seed)
    coeffs = np.zeros(grid.shape, dtype=complex)
    band = grid.freq_norm2() <= (frac * grid.nyquist) ** 2
    vals = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    coeffs[band] = vals[band]
    u = GridFunction(grid, np.fft.ifftn(coeffs))
    u.values /= u.norm_l2()
    return u


def test_discretize_flat_plane_wave_eigenvector():
    P = discretize(flat_metric(1), GRID)
    k = GRID.freq_axis[5]
    pw = GridFunction(GRID, np.exp(1j * k * GRID.axis))
    out = P.apply(pw)
    assert np.abs(out.values - k ** 2 * pw.values).max() < 1e-12


def test_discretize_self_adjoint_and_positive():
    P = discretize(bump_metric(1, eps=0.1), GRID)
    assert P.self_adjointness_defect() <= 1e-10
    assert P.positivity_floor(100) >= -1e-10


def test_discretize_grid_resolution_guard():
    with pytest.raises(GridTooCoarse):
        discretize(bump_metric(1, eps=0.1, width=0.5),
                   GridSpec(1, 30.0, 256))


def test_free_propagate_exactness():
    u = gaussian_state(GRID, [0.0], [1.0], 2.0, 0.1)
    v0 = free_propagate(u, 0.0, 0.1)
    assert np.abs(v0.values - u.values).max() < 1e-14
    v = free_propagate(u, 3.0, 0.1)
    assert abs(v.norm_l2() - 1.0) < 1e-13


def test_free_propagate_gaussian_spreading_oracle():
    """Closed-form spreading Gaussian as the amplitude oracle."""
    grid = GridSpec(1, 40.0, 1024)
    w = 2.0
    h = 0.1
    vals = np.exp(-grid.axis ** 2 / (2.0 * w ** 2)).astype(complex)
    u = GridFunction(grid, vals)
    for t in (1.0, 5.0, 12.0):
        v = free_propagate(u, t, h)
        # e^{ith Lap} of exp(-x^2/(2w^2)) peaks at (1 + 4t^2h^2/w^4)^(-1/4)
        expected = (1.0 + 4.0 * t * t * h * h / w ** 4) ** (-0.25)
        assert np.abs(v.values).max() == pytest.approx(expected, abs=1e-8)


def test_reference_propagate_flat_matches_free():
    P = discretize(flat_metric(1), GRID)
    u = gaussian_state(GRID, [0.0], [1.0], 2.0, 0.1)
    # oracle path: identical operators, exact exponential
    v = reference_propagate(P, u, 1.0, 0.1, dt=0.01, boundary_check=False,
                            method="eigen")
    ref = free_propagate(u, 1.0, 0.1)
    err = GridFunction(GRID, v.values - ref.values).norm_l2()
    assert err < 1e-8
    # Crank-Nicolson path: second order, Richardson factor in [3, 5]
    dt = 0.4 / (0.1 * P.lambda_max())
    v1 = reference_propagate(P, u, 1.0, 0.1, dt, boundary_check=False)
    v2 = reference_propagate(P, u, 1.0, 0.1, dt / 2, boundary_check=False)
    v4 = reference_propagate(P, u, 1.0, 0.1, dt / 4, boundary_check=False)
    e1 = GridFunction(GRID, v1.values - v4.values).norm_l2()
    e2 = GridFunction(GRID, v2.values - v4.values).norm_l2()
    assert 3.0 <= e1 / e2 <= 5.0


def test_reference_propagate_norm_drift():
    P = discretize(bump_metric(1, eps=0.1), GRID)
    u = gaussian_state(GRID, [0.0], [1.0], 2.0, 0.1)
    dt = 2.0 / 1000.0
    if dt * 0.1 * P.lambda_max() > 0.5:
        dt = 0.4 / (0.1 * P.lambda_max())
    steps = int(round(2.0 / dt))
    v = reference_propagate(P, u, 2.0, 0.1, dt, boundary_check=False)
    assert steps >= 500
    assert abs(v.norm_l2() - 1.0) <= 1e-9


def test_reference_propagate_group_property():
    P = discretize(bump_metric(1, eps=0.1), GRID)
    u = gaussian_state(GRID, [-3.0], [1.0], 2.0, 0.1)
    dt = 0.4 / (0.1 * P.lambda_max())
    v12 = reference_propagate(P, u, 1.5, 0.1, dt, boundary_check=False)
    va = reference_propagate(P, u, 0.9, 0.1, dt, boundary_check=False)
    vb = reference_propagate(P, va, 0.6, 0.1, dt, boundary_check=False)
    err = GridFunction(GRID, v12.values - vb.values).norm_l2()
    assert err < 1e-3   # step tolerance budget, not exact splitting of dt grid


def test_reference_propagate_d2_matches_chebyshev():
    grid = GridSpec(2, 10.0, 64)
    m = bump_metric(2, eps=0.1, width=2.5)
    P = discretize(m, grid)
    u = gaussian_state(grid, [0.0, 0.0], [1.0, 0.0], 1.5, 0.2)
    dt = 0.4 / (0.2 * P.lambda_max())
    (t, v_ch), = chebyshev_propagate(P, u, [0.5], 0.2, boundary_check=False)
    errs = []
    for dd in (dt, dt / 2, dt / 4):
        v_cn = reference_propagate(P, u, 0.5, 0.2, dd, boundary_check=False)
        errs.append(GridFunction(grid, v_cn.values - v_ch.values).norm_l2())
    # CN converges to the Chebyshev march at second order
    assert errs[2] < 1e-4
    assert 3.0 <= errs[0] / errs[1] <= 5.0
    assert 3.0 <= errs[1] / errs[2] <= 5.0


def test_spectral_cutoff_flat_and_dual_path():
    phi = SpectralWindow(0.5, 1.8)
    u = band_limited(GRID, 3, frac=0.5)
    h = 0.1
    Pf = discretize(flat_metric(1), GRID)
    v = spectral_cutoff(Pf, phi, h, u)
    ref = np.fft.ifft(phi((h * GRID.freq_axis) ** 2) * np.fft.fft(u.values))
    assert GridFunction(GRID, v.values - ref).norm_l2() < 1e-8
    # phi == 1 on the covered band acts as the identity
    from dispersivelab.windows import rising_window

    def wide(lam):
        return 1.0 - rising_window(lam, 4.8, 6.4)

    v1 = spectral_cutoff(Pf, wide, h, band_limited(GRID, 3, frac=0.4))
    ref1 = band_limited(GRID, 3, frac=0.4)
    assert GridFunction(GRID, v1.values - ref1.values).norm_l2() < 1e-8
    # dual path: dense eigendecomposition vs Chebyshev
    Pb = discretize(bump_metric(1, eps=0.1), GRID)
    v_eig = spectral_cutoff(Pb, phi, h, u)
    v_cheb = chebyshev_function_apply(Pb, lambda lam: phi(h * h * lam), u, tol=1e-9)
    assert GridFunction(GRID, v_eig.values - v_cheb.values).norm_l2() < 1e-7


def test_spectral_cutoff_window_range_guard():
    P = discretize(flat_metric(1), GRID)
    phi = SpectralWindow(0.5, 1.8)
    with pytest.raises(WindowOutOfRange):
        spectral_cutoff(P, phi, 0.01, band_limited(GRID, 0))


def test_commutation_of_cutoff_and_evolution():
    P = discretize(bump_metric(1, eps=0.1), GRID)
    phi = SpectralWindow(0.5, 1.8)
    u = band_limited(GRID, 5, frac=0.5)
    h = 0.1
    evals, Q = P.eigensystem()
    Ut = (Q * np.exp(-1j * 2.0 * h * evals)) @ Q.conj().T
    x = spectral_cutoff(P, phi, h, GridFunction(GRID, Ut @ u.values))
    y = GridFunction(GRID, Ut @ spectral_cutoff(P, phi, h, u).values)
    assert GridFunction(GRID, x.values - y.values).norm_l2() < 1e-10


FLAT_REGION = ConicRegion(+1, 3.0, (0.65, 1.65), -0.8)


def test_fio_flat_collapse_and_adjoint():
    grid = GridSpec(1, 48.0, 1024)
    mf = flat_metric(1)
    pt = solve_eikonal(mf, FLAT_REGION, x_grid=np.linspace(3.0, 70.0, 30))
    u = gaussian_state(grid, [20.0], [1.0], 3.0, 0.1)
    one = SymbolField.constant(1.0)
    v = fio_apply(pt, one, 0.1, u)
    assert GridFunction(grid, v.values - u.values).norm_l2() < 1e-10
    a = SymbolField(lambda x, xi: (np.exp(-((xi[:, 0] - 1.0) ** 2) / 0.04)
                                   * np.exp(-((x[:, 0] - 15) / 20) ** 2)).astype(complex))
    v1 = fio_apply(pt, a, 0.1, u)
    v2 = quantize_apply(a, 0.1, u)
    assert np.abs(v1.values - v2.values).max() < 1e-12
    w = gaussian_state(grid, [10.0], [0.9], 4.0, 0.1)
    lhs = fio_apply(pt, a, 0.1, u).inner(w)
    rhs = u.inner(fio_apply(pt, a, 0.1, w, mode="adjoint"))
    assert abs(lhs - rhs) <= 1e-9 * u.norm_l2() * w.norm_l2()


def test_parametrix_flat_commuting_factorization():
    """Flat metric with a xi-only cutoff: the factorization is exact."""
    grid = GridSpec(1, 48.0, 1024)
    mf = flat_metric(1)
    pt = solve_eikonal(mf, FLAT_REGION, x_grid=np.linspace(3.0, 70.0, 30))
    from dispersivelab.windows import bump_window
    chi = SymbolField.multiplier(
        lambda xi: bump_window(np.sum(xi * xi, axis=-1), 0.8, 0.9, 1.2, 1.3)
        .astype(complex), label="full_window")
    reg1 = ConicRegion(+1, 2.5, (0.65, 1.65), -0.8)
    reg3 = ConicRegion(+1, 5.0, (0.75, 1.4), -0.6)
    reg4 = ConicRegion(+1, 8.0, (0.8, 1.3), -0.5)
    a0, b0 = transport_symbols(pt, mf, chi, (reg1, reg3, reg4))
    u = gaussian_state(grid, [12.0], [1.0], 2.5, 0.1)
    for t in (0.0, 2.0, 5.0):
        par = parametrix_apply(pt, a0, b0, t, 0.1, u)
        ref = free_propagate(quantize_apply(chi, 0.1, u), t, 0.1)
        assert GridFunction(grid, par.values - ref.values).norm_l2() < 1e-10


def test_parametrix_kernel_values():
    grid_half = 48.0
    mf = flat_metric(1)
    pt = solve_eikonal(mf, FLAT_REGION, x_grid=np.linspace(3.0, 70.0, 30))
    from dispersivelab.windows import bump_window
    win = SymbolField.multiplier(
        lambda xi: bump_window(np.sum(xi * xi, axis=-1), 0.5, 0.7, 1.4, 1.8)
        .astype(complex))
    # t = 0, x = y: positive real value, equal to the window integral
    val = parametrix_kernel(pt, win, win, 0.0, 0.1, [5.0], [5.0])
    assert abs(val.imag) < 1e-10 * abs(val)
    assert val.real > 0
    # independent quadrature of (2 pi h)^-1 int |W|^2 dxi
    xi = np.linspace(-1.65, 1.65, 20001)[:, None]
    wv = win(np.zeros_like(xi), xi)
    ref = np.trapezoid(np.abs(wv) ** 2, xi[:, 0]) / (2.0 * np.pi * 0.1)
    assert val.real == pytest.approx(ref, rel=1e-6)
    # flat free-kernel modulus bound at larger |t|
    one = SymbolField.multiplier(
        lambda xi: bump_window(np.sum(xi * xi, axis=-1), 0.3, 0.5, 2.0, 2.6)
        .astype(complex))
    for t in (4.0, 10.0):
        vals = [abs(parametrix_kernel(pt, one, one, t, 0.1, [x], [y]))
                for x, y in ((4.0, 6.0), (5.0, -3.0), (8.0, 2.0))]
        bound = 1.5 * (4.0 * np.pi * abs(t) * 0.1) ** -0.5
        assert max(vals) <= bound


def test_parametrix_kernel_bump_time_sweep():
    mb = bump_metric(1, eps=0.1)
    reg = ConicRegion(+1, 2.5, (0.65, 1.65), -0.8)
    pt = solve_eikonal(mb, reg, x_grid=np.linspace(2.4, 70.0, 60), tol=1e-8)
    chi = directional_cutoff(+1, 8.0, (0.9, 1.21), (0.95, 1.15), -0.5, -0.4)
    from dispersivelab.symbols import transport_symbols
    reg3 = ConicRegion(+1, 5.0, (0.8, 1.35), -0.6)
    reg4 = ConicRegion(+1, 8.0, (0.9, 1.21), -0.5)
    a0, b0 = transport_symbols(pt, mb, chi, (reg, reg3, reg4))
    h = 0.1
    worst = 0.0
    for t in (1.0, 5.0, 10.0, 20.0):
        val = abs(parametrix_kernel(pt, a0, b0, t, h, [18.0], [20.0]))
        worst = max(worst, val * np.sqrt(abs(t) * h))
    assert np.isfinite(worst) and worst < 1.0
