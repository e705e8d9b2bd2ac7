import numpy as np
import pytest

from dispersivelab.errors import BadParameters, DivisionUnsafe, RegionMismatch
from dispersivelab.eikonal import solve_eikonal
from dispersivelab.estimates import op_matrix
from dispersivelab.geometry import ConicRegion, bump_metric, flat_metric
from dispersivelab.grids import GridFunction, GridSpec, gaussian_state
from dispersivelab.propagators import discretize, fio_apply, spectral_cutoff
from dispersivelab.symbols import (SymbolField, build_cutoff, directional_cutoff,
                                   functional_calculus_symbols, littlewood_paley,
                                   moyal_terms, operator_norm_estimate,
                                   quantize_apply, transport_symbols)
from dispersivelab.windows import SpectralWindow


def band_limited(grid, seed=0, frac=0.35):
    rng = np.random.default_rng(seed)
    coeffs = np.zeros(grid.shape, dtype=complex)
    band = grid.freq_norm2() <= (frac * grid.nyquist) ** 2
    vals = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    coeffs[band] = vals[band]
    u = GridFunction(grid, np.fft.ifftn(coeffs))
    u.values /= u.norm_l2()
    return u


GRID = GridSpec(1, 30.0, 512)


def test_quantize_identity_and_multiplier():
    u = band_limited(GRID)
    out = quantize_apply(SymbolField.constant(1.0), 0.1, u)
    assert np.abs(out.values - u.values).max() < 1e-13
    m = SymbolField.multiplier(lambda xi: np.exp(-xi[:, 0] ** 2))
    out = quantize_apply(m, 0.1, u)
    ref = np.fft.ifft(np.exp(-(0.1 * GRID.freq_axis) ** 2) * np.fft.fft(u.values))
    assert np.abs(out.values - ref).max() < 1e-12


def test_quantize_cutoff_on_coherent_states():
    chi = directional_cutoff(+1, 4.0, (0.5, 2.0), (0.8, 1.6), -0.6, -0.4)
    h = 0.1
    outgoing = gaussian_state(GRID, [12.0], [1.1], 2.0, h)
    incoming = gaussian_state(GRID, [12.0], [-1.1], 2.0, h)
    mass_out = quantize_apply(chi, h, outgoing).norm_l2()
    mass_in = quantize_apply(chi, h, incoming).norm_l2()
    assert mass_out >= 0.99
    assert mass_in <= 1e-6


def test_separable_fast_path_matches_dense():
    grid = GridSpec(2, 8.0, 32)
    u = band_limited(grid, seed=3)
    fx = lambda x: np.exp(-np.sum(x * x, axis=-1) / 9.0).astype(complex)
    gxi = lambda xi: np.exp(-np.sum(xi * xi, axis=-1)).astype(complex)
    a_sep = SymbolField.separable(fx, gxi)
    a_plain = SymbolField(lambda x, xi: fx(x) * gxi(xi))
    v1 = quantize_apply(a_sep, 0.2, u)
    v2 = quantize_apply(a_plain, 0.2, u)
    assert np.abs(v1.values - v2.values).max() < 1e-12


def test_adjoint_consistency():
    a = SymbolField(lambda x, xi: (np.exp(-0.1 * x[:, 0] ** 2)
                                   * np.exp(-(xi[:, 0] - 1.0) ** 2)).astype(complex))
    u, v = band_limited(GRID, 1), band_limited(GRID, 2)
    Au = quantize_apply(a, 0.1, u)
    Asv = quantize_apply(a, 0.1, v, adjoint=True)
    assert abs(Au.inner(v) - u.inner(Asv)) <= 1e-10 * u.norm_l2() * v.norm_l2()


def test_moyal_trivial_terms():
    a = SymbolField(lambda x, xi: xi[:, 0].astype(complex), 0, 1, None, "xi1")
    b = SymbolField(lambda x, xi: x[:, 0].astype(complex), 1, 0, None, "x1")
    prod = moyal_terms(a, b, 0)
    x = np.array([[2.0]])
    xi = np.array([[3.0]])
    assert prod(x, xi)[0] == pytest.approx(6.0)
    t1 = moyal_terms(a, b, 1)
    assert t1(x, xi)[0] == pytest.approx(-1j, abs=1e-8)


def test_moyal_composition_rate():
    # smooth analytic symbols and a smooth-spectrum state so the h^2 term
    # dominates cleanly
    a = SymbolField(lambda x, xi: (np.exp(-(x[:, 0] / 6.0) ** 2)
                                   * np.exp(-2.0 * (xi[:, 0] - 1.0) ** 2)).astype(complex))
    b = SymbolField(lambda x, xi: (np.exp(-((x[:, 0] - 2.0) / 5.0) ** 2)
                                   * np.exp(-1.5 * (xi[:, 0] - 0.9) ** 2)).astype(complex))
    rng = np.random.default_rng(4)
    k = GRID.freq_axis
    coeffs = ((rng.standard_normal(512) + 1j * rng.standard_normal(512))
              * np.exp(-(k / (0.18 * GRID.nyquist)) ** 2))
    u = GridFunction(GRID, np.fft.ifftn(coeffs))
    u.values /= u.norm_l2()
    defects = {}
    for h in (0.2, 0.1):
        Aa = op_matrix(a, h, GRID)
        Ab = op_matrix(b, h, GRID)
        both = Aa @ (Ab @ u.values)
        c0 = quantize_apply(moyal_terms(a, b, 0), h, u).values
        c1 = quantize_apply(moyal_terms(a, b, 1), h, u).values
        defects[h] = GridFunction(GRID, both - c0 - h * c1).norm_l2()
    ratio = defects[0.2] / defects[0.1]
    assert 2.8 <= ratio <= 5.2


def test_build_cutoff_probe_values_and_errors():
    R = 3.0
    I1, I2 = (0.4, 2.2), (0.7, 1.8)
    chi = build_cutoff(+1, R, I1, I2, -0.8, -0.5)
    plateau = chi(np.array([[2 * R ** 2]]), np.array([[np.sqrt(1.25)]]))[0]
    assert plateau == 1.0
    inner = chi(np.array([[R ** 2 / 8.0]]), np.array([[np.sqrt(1.25)]]))[0]
    assert inner == 0.0
    assert chi.support_leak(1) == 0.0
    with pytest.raises(BadParameters):
        build_cutoff(+1, R, I1, (0.3, 1.8), -0.8, -0.5)   # I2 not inside I1
    with pytest.raises(BadParameters):
        build_cutoff(+1, R, I1, I2, -0.5, -0.8)           # sigma order
    with pytest.raises(BadParameters):
        build_cutoff(+1, R, I1, I2, -0.8, -0.5, epsilon=0.29)  # no monotone fit


def test_cutoff_smoothness_probe():
    chi = build_cutoff(+1, 3.0, (0.4, 2.2), (0.7, 1.8), -0.8, -0.5)
    # radial transition of the spatial factor: width R^2/4
    R2 = 9.0
    xs = np.linspace(R2 / 4.0, R2 / 2.0, 200)[:, None]
    xi = np.full((200, 1), np.sqrt(1.25))
    vals = chi(xs, xi).real
    grad = np.abs(np.gradient(vals, xs[:, 0]))
    assert grad.max() * (R2 / 4.0) <= 8.0


def test_cutoff_nesting_probes():
    R = 3.0
    I1, I2 = (0.4, 2.2), (0.7, 1.8)
    chi = build_cutoff(+1, R, I1, I2, -0.8, -0.5)
    rng = np.random.default_rng(0)
    # probes inside the inner cone with margin: radius above R^2/2,
    # energy well inside I2, cosine above sigma2
    n = 400
    r = rng.uniform(R ** 2 / 2 * 1.05, 40.0, n)
    ang = rng.uniform(-np.arccos(-0.4), np.arccos(-0.4), n)
    e = rng.uniform(0.9, 1.6, n)
    x = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)
    xi = np.stack([np.sqrt(e), np.zeros(n)], axis=-1)
    keep = np.cos(ang) > -0.38
    vals = chi(x[keep], xi[keep])
    assert np.abs(vals - 1.0).max() < 1e-12


def test_littlewood_paley_partition():
    part = littlewood_paley(10)
    assert part.sum_all(np.array([7.3]))[0] == pytest.approx(1.0, abs=1e-12)
    low = np.array([0.2])
    assert part.phi0(low)[0] == 1.0
    assert part.phi(low)[0] == 0.0
    rng = np.random.default_rng(1)
    lam = rng.uniform(0.0, 2.0 ** 9, 10000)
    assert np.abs(part.sum_all(lam) - 1.0).max() <= 1e-12
    window = part.phi(np.linspace(0.1, 3.0, 200))
    assert window[np.abs(np.linspace(0.1, 3.0, 200) - 1.0) < 0.01].max() > 0.5


def test_operator_l2_bounds_uniform_in_h():
    chi = directional_cutoff(+1, 4.0, (0.5, 2.0), (0.8, 1.6), -0.6, -0.4)
    norms = []
    for h in (0.05, 0.1, 0.2, 0.4):
        M = op_matrix(chi, h, GRID)
        norms.append(operator_norm_estimate(M))
    assert max(norms) <= 1.5   # Calderon-Vaillancourt-type uniform bound


def test_functional_calculus_flat_and_rates():
    mf = flat_metric(1)
    phi = SpectralWindow(0.5, 1.8)
    [a0, a1] = functional_calculus_symbols(mf, phi, order=1)
    x = np.zeros((5, 1))
    xi = np.linspace(0.6, 1.4, 5)[:, None]
    assert np.abs(a0(x, xi) - phi(xi[:, 0] ** 2)).max() < 1e-14
    assert np.abs(a1(x, xi)).max() == 0.0

    # asymptotic-regime configuration; band-restricted operator-norm defects
    # are deterministic, unlike small random state batches
    from dispersivelab.symbols import pdo_matrix

    mb = bump_metric(1, eps=0.05, width=6.0)
    phi = SpectralWindow(0.3, 2.6, margin_frac=0.4)
    grid = GridSpec(1, 48.0, 2048)
    P = discretize(mb, grid)
    evals, Q = P.eigensystem()
    F = np.fft.fft(np.eye(grid.n_points), axis=0)
    band = grid.freq_norm2() <= (0.3 * grid.nyquist) ** 2
    proj = np.fft.ifft(np.diag(band.astype(complex)) @ F, axis=0)
    a0, a1 = functional_calculus_symbols(mb, phi, order=1)
    d0, d1 = {}, {}
    for h in (0.2, 0.1):
        exact = (Q * phi(h * h * evals)) @ Q.conj().T
        M0 = pdo_matrix(a0, h, grid) @ F
        M1 = pdo_matrix(a1, h, grid) @ F
        d0[h] = np.linalg.norm((exact - M0) @ proj, 2)
        d1[h] = np.linalg.norm((exact - M0 - h * M1) @ proj, 2)
    assert 1.5 <= d0[0.2] / d0[0.1] <= 3.0
    assert 2.8 <= d1[0.2] / d1[0.1] <= 5.2


REG1 = ConicRegion(+1, 2.5, (0.65, 1.65), -0.8)
REG3 = ConicRegion(+1, 5.0, (0.8, 1.35), -0.6)
REG4 = ConicRegion(+1, 8.0, (0.9, 1.21), -0.5)
CHI4 = directional_cutoff(+1, 8.0, (0.9, 1.21), (0.95, 1.15), -0.5, -0.4)


def test_transport_symbols_flat_exact():
    grid = GridSpec(1, 64.0, 1024)
    mf = flat_metric(1)
    pt = solve_eikonal(mf, REG1, x_grid=np.linspace(2.4, 95.0, 30))
    a0, b0 = transport_symbols(pt, mf, CHI4, (REG1, REG3, REG4))
    u = gaussian_state(grid, [20.0], [1.0], 3.0, 0.1)
    lhs = quantize_apply(CHI4, 0.1, u)
    rhs = fio_apply(pt, a0, 0.1, fio_apply(pt, b0, 0.1, u, mode="adjoint"))
    assert GridFunction(grid, lhs.values - rhs.values).norm_l2() < 1e-12


def test_transport_symbols_bump_rate_and_support():
    grid = GridSpec(1, 64.0, 1024)
    mb = bump_metric(1, eps=0.1)
    pt = solve_eikonal(mb, REG1, x_grid=np.linspace(2.4, 95.0, 80), tol=1e-8)
    a0, b0 = transport_symbols(pt, mb, CHI4, (REG1, REG3, REG4))
    assert b0.support_leak(1) <= 1e-12
    defects = {}
    for h in (0.2, 0.1):
        worst = 0.0
        for x0, xi0 in ((20.0, 1.0), (24.0, 1.04)):
            u = gaussian_state(grid, [x0], [xi0], 2.5, h)
            lhs = quantize_apply(CHI4, h, u)
            rhs = fio_apply(pt, a0, h, fio_apply(pt, b0, h, u, mode="adjoint"))
            worst = max(worst, GridFunction(grid, lhs.values - rhs.values).norm_l2())
        defects[h] = worst
    assert 1.5 <= defects[0.2] / defects[0.1] <= 3.0


def test_transport_symbols_region_validation():
    mb = bump_metric(1, eps=0.1)
    pt = solve_eikonal(mb, REG1, x_grid=np.linspace(2.4, 40.0, 30), tol=1e-8)
    bad_mid = ConicRegion(+1, 9.0, (0.8, 1.35), -0.6)  # radius above inner
    with pytest.raises(RegionMismatch):
        transport_symbols(pt, mb, CHI4, (REG1, bad_mid, REG4))
    bad_sigma = ConicRegion(+1, 5.0, (0.8, 1.35), -0.45)
    with pytest.raises(RegionMismatch):
        transport_symbols(pt, mb, CHI4, (REG1, bad_sigma, REG4))
