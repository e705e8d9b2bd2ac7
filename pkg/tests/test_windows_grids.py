import numpy as np
import pytest

from dispersivelab.errors import BoundaryContaminated
from dispersivelab.grids import GridFunction, GridSpec, delta_column, gaussian_state
from dispersivelab.windows import (SpectralWindow, bump_window, rising_window,
                                   smoothstep, smoothstep_d1, smoothstep_d2)


def test_smoothstep_plateaus_and_monotone():
    t = np.linspace(-1.0, 2.0, 4001)
    s = smoothstep(t)
    assert np.all(s[t <= 0.0] == 0.0)
    assert np.all(s[t >= 1.0] == 1.0)
    assert np.all(np.diff(s) >= 0.0)
    assert smoothstep(np.array([0.5]))[0] == pytest.approx(0.5, abs=1e-12)


def test_smoothstep_derivatives_match_fd():
    t = np.linspace(0.05, 0.95, 19)
    fd = (smoothstep(t + 5e-4) - smoothstep(t - 5e-4)) / 1e-3
    assert np.abs(fd - smoothstep_d1(t)).max() < 1e-3
    fd2 = (smoothstep_d1(t + 5e-5) - smoothstep_d1(t - 5e-5)) / 1e-4
    assert np.abs(fd2 - smoothstep_d2(t)).max() < 1e-6


def test_window_plateau_support_and_derivs():
    w = SpectralWindow(0.5, 1.8, margin_frac=0.25)
    assert w(np.array([1.0]))[0] == 1.0
    assert w(np.array([0.49]))[0] == 0.0
    assert w(np.array([1.81]))[0] == 0.0
    lam = np.linspace(0.4, 2.0, 33)
    fd = (w(lam + 1e-6) - w(lam - 1e-6)) / 2e-6
    assert np.abs(fd - w.deriv(lam, 1)).max() < 2e-3
    sq = w.squared()
    assert sq(np.array([1.0]))[0] == 1.0
    fd_sq = (sq(lam + 1e-6) - sq(lam - 1e-6)) / 2e-6
    assert np.abs(fd_sq - sq.deriv(lam, 1)).max() < 4e-3


def test_grid_norms_and_boundary():
    grid = GridSpec(1, 10.0, 256)
    u = gaussian_state(grid, [0.0], [1.0], 1.5, 0.1)
    assert u.norm_l2() == pytest.approx(1.0, abs=1e-12)
    assert u.boundary_mass_fraction() < 1e-12
    edge = GridFunction(grid, np.zeros(256, dtype=complex))
    edge.values[0] = 1.0
    with pytest.raises(BoundaryContaminated):
        edge.check_boundary()


def test_delta_column_l1_normalization():
    grid = GridSpec(2, 8.0, 32)
    u = delta_column(grid, (3, 7))
    assert u.norm_l1() == pytest.approx(1.0)


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(3, 10.0, 64)
    with pytest.raises(ValueError):
        GridSpec(1, 10.0, 60)  # not a power of two
