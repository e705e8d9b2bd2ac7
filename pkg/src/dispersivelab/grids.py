"""Uniform periodic box grids and complex fields on them.

Conventions used across the lab:

* the box is [-L, L)^d sampled at n points per axis (n a power of two),
  x_j = -L + j * dx with dx = 2L/n;
* angular frequencies kappa = 2*pi*fftfreq(n, dx) in numpy fft ordering;
  the semiclassical momentum of mode kappa at parameter h is xi = h*kappa;
* discrete L^2 norm uses the cell measure dx^d.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundaryContaminated

__all__ = ["GridSpec", "GridFunction", "gaussian_state", "delta_column"]


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on [-L, L)^d, d in {1, 2}."""

    dim: int
    box_half_width: float
    n_points: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("only d = 1 and d = 2 are supported")
        n = self.n_points
        if n < 4 or (n & (n - 1)) != 0:
            raise ValueError("n_points must be a power of two >= 4")
        if self.box_half_width <= 0:
            raise ValueError("box_half_width must be positive")

    @property
    def dx(self):
        return 2.0 * self.box_half_width / self.n_points

    @property
    def cell_measure(self):
        return self.dx ** self.dim

    @property
    def axis(self):
        """Physical coordinates along one axis."""
        return -self.box_half_width + self.dx * np.arange(self.n_points)

    @property
    def freq_axis(self):
        """Angular frequencies along one axis (fft ordering)."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, self.dx)

    @property
    def nyquist(self):
        return np.pi / self.dx

    def meshgrid(self):
        if self.dim == 1:
            return (self.axis,)
        return np.meshgrid(self.axis, self.axis, indexing="ij")

    def freq_meshgrid(self):
        if self.dim == 1:
            return (self.freq_axis,)
        return np.meshgrid(self.freq_axis, self.freq_axis, indexing="ij")

    def freq_norm2(self):
        """|kappa|^2 on the fft-ordered frequency grid."""
        if self.dim == 1:
            return self.freq_axis ** 2
        kx, ky = self.freq_meshgrid()
        return kx ** 2 + ky ** 2

    @property
    def shape(self):
        return (self.n_points,) * self.dim

    @property
    def size(self):
        return self.n_points ** self.dim

    def fingerprint(self):
        return f"d{self.dim}_L{self.box_half_width:g}_n{self.n_points}"


@dataclass
class GridFunction:
    """Complex field sampled on a GridSpec."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")

    def copy(self):
        return GridFunction(self.grid, self.values.copy())

    def norm_l2(self):
        return float(np.sqrt(self.grid.cell_measure * np.sum(np.abs(self.values) ** 2)))

    def norm_lq(self, q):
        if np.isinf(q):
            return float(np.max(np.abs(self.values)))
        return float((self.grid.cell_measure * np.sum(np.abs(self.values) ** q)) ** (1.0 / q))

    def norm_l1(self):
        return self.norm_lq(1)

    def inner(self, other):
        """<self, other> = sum self * conj(other) * measure."""
        return complex(self.grid.cell_measure * np.sum(self.values * np.conj(other.values)))

    def fft(self):
        return np.fft.fftn(self.values)

    def boundary_mass_fraction(self, shell_frac=0.05):
        """Mass fraction in the outer shell of relative width shell_frac."""
        n = self.grid.n_points
        w = max(1, int(round(shell_frac * n)))
        mask = np.zeros(self.grid.shape, dtype=bool)
        if self.grid.dim == 1:
            mask[:w] = True
            mask[-w:] = True
        else:
            mask[:w, :] = True
            mask[-w:, :] = True
            mask[:, :w] = True
            mask[:, -w:] = True
        total = np.sum(np.abs(self.values) ** 2)
        if total == 0.0:
            return 0.0
        return float(np.sum(np.abs(self.values[mask]) ** 2) / total)

    def check_boundary(self, threshold=1e-10, time=None):
        frac = self.boundary_mass_fraction()
        if frac > threshold:
            raise BoundaryContaminated(
                f"boundary shell holds {frac:.3e} of the mass (limit {threshold:.1e})",
                time=time,
            )
        return frac


def gaussian_state(grid, center, momentum, width, h):
    """Normalized coherent state exp(i momentum.(x-c)/h) exp(-|x-c|^2/(2 width^2))."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    momentum = np.atleast_1d(np.asarray(momentum, dtype=float))
    if grid.dim == 1:
        x = grid.axis
        phase = momentum[0] * (x - center[0]) / h
        amp = np.exp(-((x - center[0]) ** 2) / (2.0 * width ** 2))
    else:
        X, Y = grid.meshgrid()
        phase = (momentum[0] * (X - center[0]) + momentum[1] * (Y - center[1])) / h
        amp = np.exp(-(((X - center[0]) ** 2 + (Y - center[1]) ** 2) / (2.0 * width ** 2)))
    u = GridFunction(grid, amp * np.exp(1j * phase))
    nrm = u.norm_l2()
    u.values /= nrm
    return u


def delta_column(grid, index):
    """Discrete delta at a grid index, normalized to unit discrete L^1 norm."""
    values = np.zeros(grid.shape, dtype=complex)
    values[index] = 1.0 / grid.cell_measure
    return GridFunction(grid, values)
