"""Semiclassical symbol infrastructure.

Symbols are scalar amplitudes a(x, xi) with polynomial weight metadata and
an optional phase-space support region.  Quantization is the standard left
quantization on the periodic grid: Fourier transform, multiply by
a(x, h kappa) per output point, inverse-transform accumulation; it is exact
for pure Fourier multipliers.
"""

import numpy as np

from .errors import AliasingRisk, BadParameters, DivisionUnsafe, RegionMismatch
from .geometry import ConicRegion, japanese_bracket
from .grids import GridFunction
from .windows import bump_window, rising_window, smoothstep

__all__ = [
    "SymbolField",
    "DyadicPartition",
    "principal_symbol_field",
    "subprincipal_symbol_field",
    "quantize_apply",
    "pdo_matrix",
    "operator_norm_estimate",
    "moyal_terms",
    "build_cutoff",
    "directional_cutoff",
    "littlewood_paley",
    "functional_calculus_symbols",
    "transport_symbols",
]


class SymbolField:
    """Scalar amplitude a(x, xi) with order metadata and support hints.

    Parameters
    ----------
    eval_fn : callable
        Batched evaluation over points of shape (N, d) x (N, d) -> (N,).
    order_mu, order_m : float
        Weight orders: |a| <= C <x>^mu <xi>^m on probes (m = -inf for
        compact xi support).
    support_hint : ConicRegion or None
        Region outside of which the symbol vanishes.
    """

    def __init__(self, eval_fn, order_mu=0.0, order_m=-np.inf,
                 support_hint=None, label="a", factors=None):
        self._eval = eval_fn
        self.order_mu = order_mu
        self.order_m = order_m
        self.support_hint = support_hint
        self.label = label
        # optional exact separable structure a(x, xi) = f(x) g(xi); enables
        # the FFT fast path of quantize_apply on large 2-d grids
        self.factors = factors

    def __call__(self, x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        return np.asarray(self._eval(x, xi))

    def __mul__(self, other):
        if isinstance(other, SymbolField):
            hint = other.support_hint or self.support_hint
            return SymbolField(lambda x, xi: self(x, xi) * other(x, xi),
                               self.order_mu + other.order_mu,
                               self.order_m + other.order_m,
                               hint, f"{self.label}*{other.label}")
        c = other
        return SymbolField(lambda x, xi: c * self(x, xi), self.order_mu,
                           self.order_m, self.support_hint, self.label)

    __rmul__ = __mul__

    def conj(self):
        return SymbolField(lambda x, xi: np.conj(self(x, xi)), self.order_mu,
                           self.order_m, self.support_hint, f"conj({self.label})")

    @staticmethod
    def constant(value=1.0, label=None):
        return SymbolField(lambda x, xi: np.full(x.shape[0], value, dtype=complex),
                           0.0, 0.0, None, label or str(value))

    @staticmethod
    def multiplier(fn, label="m(xi)"):
        """xi-only symbol (exact Fourier multiplier under quantization)."""
        return SymbolField(lambda x, xi: fn(xi), 0.0, 0.0, None, label,
                           factors=(lambda x: np.ones(x.shape[0]), fn))

    @staticmethod
    def separable(fx, gxi, support_hint=None, label="f(x)g(xi)"):
        """Product symbol f(x) g(xi); quantization is diag(f) after g(hD)."""
        return SymbolField(lambda x, xi: fx(x) * gxi(xi), 0.0, 0.0,
                           support_hint, label, factors=(fx, gxi))

    def probe_bound(self, dim, radii=(0.5, 2.0, 8.0, 32.0), xi_mags=(0.3, 1.0, 3.0),
                    n_dirs=8):
        """Measured constant C with |a| <= C <x>^mu <xi>^m over a probe lattice."""
        pts, xis = _probe_lattice(dim, radii, xi_mags, n_dirs)
        vals = np.abs(self(pts, xis))
        wx = japanese_bracket(pts) ** (-self.order_mu)
        m = 0.0 if np.isinf(self.order_m) else self.order_m
        wxi = japanese_bracket(xis) ** (-m)
        return float(np.max(vals * wx * wxi))

    def support_leak(self, dim, n_probe=4096, seed=11, radius_cap=64.0):
        """Max |a| outside the support hint over random probes (0 if no hint)."""
        if self.support_hint is None:
            return 0.0
        rng = np.random.default_rng(seed)
        x = rng.uniform(-radius_cap, radius_cap, size=(n_probe, dim))
        xi = rng.uniform(-3.0, 3.0, size=(n_probe, dim))
        outside = ~self.support_hint.contains(x, xi)
        if not np.any(outside):
            return 0.0
        return float(np.max(np.abs(self(x[outside], xi[outside]))))


def _probe_lattice(dim, radii, xi_mags, n_dirs):
    if dim == 1:
        xs = np.array([[r * s] for r in radii for s in (-1.0, 1.0)])
        xis = np.array([[q * s] for q in xi_mags for s in (-1.0, 1.0)])
    else:
        ang = np.linspace(0.0, 2.0 * np.pi, n_dirs, endpoint=False)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        xs = np.concatenate([r * dirs for r in radii])
        xis = np.concatenate([q * dirs for q in xi_mags])
    pairs_x = np.repeat(xs, xis.shape[0], axis=0)
    pairs_xi = np.tile(xis, (xs.shape[0], 1))
    return pairs_x, pairs_xi


def principal_symbol_field(m):
    """p2(x, xi) = sum G^{jk}(x) xi_j xi_k as a SymbolField."""
    return SymbolField(lambda x, xi: m.p2(x, xi) + 0.0j, 0.0, 2.0, None, "p2")


def subprincipal_symbol_field(m):
    """First-order symbol -i sum_jk d_j G^{jk}(x) xi_k of the discrete operator."""

    def eval_fn(x, xi):
        div = m.inv_coeff_div(x)
        return -1j * np.sum(div * xi, axis=-1)

    return SymbolField(eval_fn, -m.nu - 1.0 if np.isfinite(m.nu) else -1.0,
                       1.0, None, "p1")


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------

def pdo_matrix(a, h, grid, columns=None):
    """Dense matrix sending fft(u) coefficients to Op_h(a) u values.

    M[m, k] = a(x_m, h kappa_k) exp(i kappa_k . (x_m + L)) / n^d, so that
    Op_h(a) u = M @ fft(u); for a independent of x this is the exact
    Fourier-multiplier application.
    """
    xpts = np.stack([g.ravel() for g in grid.meshgrid()], axis=-1) \
        if grid.dim == 2 else grid.axis[:, None]
    if grid.dim == 1:
        kappa = grid.freq_axis[:, None]
    else:
        kx, ky = grid.freq_meshgrid()
        kappa = np.stack([kx.ravel(), ky.ravel()], axis=-1)
    if columns is not None:
        kappa = kappa[columns]
    n_x, n_k = xpts.shape[0], kappa.shape[0]
    L = grid.box_half_width
    # chunk over frequency columns to bound memory
    M = np.empty((n_x, n_k), dtype=complex)
    chunk = max(1, int(2e6 // max(n_x, 1)))
    for s in range(0, n_k, chunk):
        kap = kappa[s:s + chunk]
        X = np.repeat(xpts, kap.shape[0], axis=0)
        XI = np.tile(h * kap, (n_x, 1))
        vals = a(X, XI).reshape(n_x, kap.shape[0])
        phase = np.exp(1j * ((xpts + L) @ kap.T))
        M[:, s:s + chunk] = vals * phase / grid.size
    return M


def _aliasing_guard(a, h, u):
    """Raise AliasingRisk when an x-varying symbol meets near-Nyquist data."""
    grid = u.grid
    coeffs = np.fft.fftn(u.values)
    k2 = grid.freq_norm2()
    top = k2 >= (0.9 * grid.nyquist) ** 2
    total = np.sqrt(np.sum(np.abs(coeffs) ** 2))
    if total == 0.0 or not np.any(top):
        return
    top_mass = np.sqrt(np.sum(np.abs(coeffs[top]) ** 2)) / total
    if top_mass <= 1e-12:
        return
    # x-variation of the symbol at the Nyquist momentum
    xi_nyq = np.full((1, grid.dim), h * grid.nyquist)
    probes = np.linspace(-grid.box_half_width, grid.box_half_width, 17)
    if grid.dim == 1:
        xp = probes[:, None]
    else:
        xp = np.stack([probes, probes], axis=-1)
    vals = a(xp, np.repeat(xi_nyq, xp.shape[0], axis=0))
    xvar = float(np.max(np.abs(vals - vals[0])))
    if xvar * top_mass > 1e-9:
        raise AliasingRisk(
            f"x-varying symbol (spread {xvar:.2e}) applied to data with "
            f"{top_mass:.2e} relative mass near the Nyquist momentum")


def quantize_apply(a, h, u, adjoint=False):
    """Op_h(a) u by per-point frequency summation (left quantization).

    Separable symbols a = f(x) g(xi) use the exact FFT factorization
    diag(f) g(hD) (g(hD) diag(conj f) for the adjoint), which is what makes
    the large 2-d grids affordable.
    """
    _aliasing_guard(a, h, u)
    grid = u.grid
    if a.factors is not None:
        fx, gxi = a.factors
        xpts = np.stack([g.ravel() for g in grid.meshgrid()], axis=-1) \
            if grid.dim == 2 else grid.axis[:, None]
        if grid.dim == 1:
            kap = grid.freq_axis[:, None]
        else:
            kx, ky = grid.freq_meshgrid()
            kap = np.stack([kx.ravel(), ky.ravel()], axis=-1)
        fvals = np.asarray(fx(xpts)).reshape(grid.shape)
        gvals = np.asarray(gxi(h * kap)).reshape(grid.shape)
        if adjoint:
            vals = np.fft.ifftn(gvals.conj() * np.fft.fftn(np.conj(fvals)
                                                           * u.values))
        else:
            vals = fvals * np.fft.ifftn(gvals * np.fft.fftn(u.values))
        return GridFunction(grid, vals)
    M = pdo_matrix(a, h, grid)
    if adjoint:
        c = M.conj().T @ u.values.ravel()
        out = np.fft.ifftn(c.reshape(grid.shape)) * grid.size
        return GridFunction(grid, out)
    out = (M @ np.fft.fftn(u.values).ravel()).reshape(grid.shape)
    return GridFunction(grid, out)


def operator_norm_estimate(M, n_iter=30, seed=2, return_vector=False):
    """2-norm of a dense operator matrix by power iteration on M^H M.

    Deterministic start vector; relative accuracy ~1e-3 after 30 iterations
    is sufficient for decay-exponent fits.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(M.shape[1]) + 1j * rng.standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(n_iter):
        w = M @ v
        z = M.conj().T @ w
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return (0.0, v) if return_vector else 0.0
        v = z / nz
    sigma = np.linalg.norm(M @ v)
    return (float(sigma), v) if return_vector else float(sigma)


# ---------------------------------------------------------------------------
# composition expansion terms
# ---------------------------------------------------------------------------

def _multi_indices(dim, total):
    if dim == 1:
        return [(total,)]
    return [(j, total - j) for j in range(total + 1)]


def _fd_partial(fn, order_per_axis, which, step=1e-4):
    """Central FD of fn(x, xi) in the x (which=0) or xi (which=1) slot."""

    def d1(f, axis):
        def g(x, xi):
            e = np.zeros(x.shape[-1])
            e[axis] = 1.0
            if which == 0:
                return (f(x + step * e, xi) - f(x - step * e, xi)) / (2.0 * step)
            return (f(x, xi + step * e) - f(x, xi - step * e)) / (2.0 * step)
        return g

    f = fn
    for axis, k in enumerate(order_per_axis):
        for _ in range(k):
            f = d1(f, axis)
    return f


def moyal_terms(a, b, j):
    """j-th composition term sum_{|alpha|=j} (d_xi^alpha a)(D_x^alpha b)/alpha!.

    D = -i d/dx.  Derivatives are central finite differences on the
    evaluation callables; orders drop by j in both weights.
    """
    if j < 0 or j > 2:
        raise ValueError("only j <= 2 composition terms are built")
    if j == 0:
        return SymbolField(lambda x, xi: a(x, xi) * b(x, xi),
                           a.order_mu + b.order_mu, a.order_m + b.order_m,
                           b.support_hint or a.support_hint,
                           f"({a.label}#{b.label})_0")

    def eval_fn(x, xi):
        dim = x.shape[-1]
        acc = np.zeros(x.shape[0], dtype=complex)
        for alpha in _multi_indices(dim, j):
            fact = 1.0
            for k in alpha:
                for i in range(1, k + 1):
                    fact *= i
            da = _fd_partial(lambda X, XI: a(X, XI), alpha, which=1)
            db = _fd_partial(lambda X, XI: b(X, XI), alpha, which=0)
            acc += da(x, xi) * ((-1j) ** j) * db(x, xi) / fact
        return acc

    return SymbolField(eval_fn, a.order_mu + b.order_mu - j,
                       a.order_m + b.order_m - j,
                       b.support_hint or a.support_hint,
                       f"({a.label}#{b.label})_{j}")


# ---------------------------------------------------------------------------
# directional cutoffs and dyadic partitions
# ---------------------------------------------------------------------------

def build_cutoff(sign, R, I1, I2, sigma1, sigma2, epsilon=None):
    """Three-factor cone cutoff kappa(|x|/R^2) rho(|xi|^2) theta(sign cos).

    kappa = 0 below 1/4 and 1 above 1/2; rho = 1 near I2 with support in I1;
    theta = 0 below sigma1 + eps and 1 above sigma2 - eps.  The result is
    supported in the cone with radius R^2/4, energies I1 and cosine threshold
    sigma1, and is identically 1 on the cone with radius R^2/2, energies
    near-I2 and cosine threshold sigma2.
    """
    lo1, hi1 = I1
    lo2, hi2 = I2
    if not (lo1 < lo2 < hi2 < hi1):
        raise BadParameters("need I2 strictly inside I1")
    if not (-1.0 < sigma1 < sigma2 < 1.0):
        raise BadParameters("need -1 < sigma1 < sigma2 < 1")
    if epsilon is None:
        epsilon = (sigma2 - sigma1) / 3.0
    if not (0.0 < epsilon < sigma2 - sigma1):
        raise BadParameters("need epsilon in (0, sigma2 - sigma1)")
    if not (sigma1 + epsilon < sigma2 - epsilon):
        raise BadParameters("epsilon too large to fit a monotone angular transition")
    sgn = +1 if sign in (+1, "+", "plus") else -1
    plo = 0.5 * (lo1 + lo2)
    phi_ = 0.5 * (hi1 + hi2)

    def eval_fn(x, xi):
        rx = np.sqrt(np.sum(x * x, axis=-1))
        rxi = np.sqrt(np.sum(xi * xi, axis=-1))
        kap = smoothstep((rx / R ** 2 - 0.25) / 0.25)
        rho_ = bump_window(rxi ** 2, lo1, plo, phi_, hi1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cosv = np.where(rx * rxi > 0.0,
                            sgn * np.sum(x * xi, axis=-1) / (rx * rxi), -1.0)
        theta = rising_window(cosv, sigma1 + epsilon, sigma2 - epsilon)
        return (kap * rho_ * theta).astype(complex)

    hint = ConicRegion(sgn, R ** 2 / 4.0 * (1.0 - 1e-12), I1, sigma1)
    return SymbolField(eval_fn, 0.0, -np.inf, hint,
                       label=f"chi{'+' if sgn > 0 else '-'}(R={R:g})")


def directional_cutoff(sign, inner_radius, I1, I2, sigma1, sigma2, epsilon=None):
    """build_cutoff parametrized by the plain support radius.

    Support starts at |x| = inner_radius and the spatial factor plateaus at
    2 * inner_radius.
    """
    return build_cutoff(sign, np.sqrt(4.0 * inner_radius), I1, I2,
                        sigma1, sigma2, epsilon)


class DyadicPartition:
    """Dyadic partition of unity phi0(lam) + sum_k phi(2^-k lam) = 1.

    Built by telescoping a single smooth rising step w with w = 0 below 1/2
    and w = 1 above 1: phi(lam) = w(lam) - w(lam/2) has support in [1/2, 2]
    and the partial sums collapse exactly (multiplication by powers of two is
    exact in floating point).
    """

    def __init__(self, k_max):
        if k_max < 1:
            raise ValueError("k_max >= 1")
        self.k_max = int(k_max)

    @staticmethod
    def _w(lam):
        return smoothstep(2.0 * np.asarray(lam, dtype=float) - 1.0)

    def phi0(self, lam):
        return 1.0 - self._w(lam)

    def phi(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self._w(lam) - self._w(0.5 * lam)

    def term(self, k, lam):
        """phi(2^-k lam) for 0 <= k <= k_max, phi0 for k = -1."""
        if k == -1:
            return self.phi0(lam)
        return self.phi(np.asarray(lam, dtype=float) * 2.0 ** (-k))

    def sum_all(self, lam):
        total = self.phi0(lam)
        for k in range(self.k_max + 1):
            total = total + self.term(k, lam)
        return total


def littlewood_paley(k_max):
    return DyadicPartition(k_max)


# ---------------------------------------------------------------------------
# functional calculus symbols
# ---------------------------------------------------------------------------

def functional_calculus_symbols(m, phi, order=1):
    """Leading symbols of phi(h^2 P): [a0] or [a0, a1].

    a0 = phi(p2).  The first correction collects the subprincipal symbol and
    the j = 1 composition defect of the resolvent parametrix:

        a1 = -[ p1 phi'(p2) + (i/2) (d_xi p2 . d_x p2) phi''(p2) ],

    supported inside supp(a0); it vanishes identically for flat metrics.
    The pair is validated operationally against the spectral-cutoff route.
    """
    if order > 1:
        raise ValueError("order <= 1")

    def a0_fn(x, xi):
        return phi(m.p2(x, xi)).astype(complex)

    a0 = SymbolField(a0_fn, 0.0, -np.inf, None, label=f"{phi.label}(p2)")
    if order == 0:
        return [a0]
    if m.is_flat:
        zero = SymbolField(lambda x, xi: np.zeros(x.shape[0], dtype=complex),
                           -1.0, -np.inf, None, label="a1=0")
        return [a0, zero]

    lo, hi = phi.support
    pad = 0.1 * (hi - lo)

    def a1_fn(x, xi):
        p2v = m.p2(x, xi)
        d1 = phi.deriv(p2v, 1)
        d2 = phi.deriv(p2v, 2)
        ginv = m.inv_coeff_batch(x)
        dxi_p2 = 2.0 * np.einsum("...jk,...k->...j", ginv, xi)
        dx_p2 = m.p2_grad_x(x, xi)
        div = m.inv_coeff_div(x)
        p1v = -1j * np.sum(div * xi, axis=-1)
        val = p1v * d1 - 0.5j * np.sum(dxi_p2 * dx_p2, axis=-1) * d2
        # smoothed indicator of supp(a0), a no-op on the nose but keeps the
        # declared support containment explicit
        window = bump_window(p2v, lo - pad, lo, hi, hi + pad)
        return val * window

    a1 = SymbolField(a1_fn, -1.0, -np.inf, None, label=f"a1[{phi.label}]")
    return [a0, a1]


# ---------------------------------------------------------------------------
# transport symbols for the outgoing/incoming factorization
# ---------------------------------------------------------------------------

def transport_symbols(pt, m, chi, regions):
    """Leading amplitude pair (a0, b0) for the phase-table factorization.

    a0 = chi_{1->2} * w0 where w0 solves the leading transport equation along
    the phase's characteristic rays (the h^1 term of
    (h^2 P) J(a0) - J(a0)(-h^2 Lap) vanishes), and b0 is fixed by requiring
    the leading symbol of J(a0) J(b0)* to equal chi via the Kuranishi change
    of variables:

        conj(b0)(x, xi) = chi(x, grad_x S(x, xi)) |det d2S/dxdxi| / a0(x, xi).

    regions is the nested chain [outer, mid, inner] = [Gamma(r1, I1, s1),
    Gamma(r3, I3, s3), Gamma(r4, I4, s4)] with r1 < r3 < r4, s1 < s3 < s4 and
    I4 inside I3 inside I1; chi must be supported in the inner region.

    Flat metrics degenerate: transport is trivial and the pair (chi, 1)
    factors the quantization exactly, so that pair is returned.
    """
    outer, mid, inner = regions
    if not (outer.radius < mid.radius < inner.radius):
        raise RegionMismatch("need region radii r1 < r3 < r4")
    if not (outer.sigma < mid.sigma < inner.sigma):
        raise RegionMismatch("need cosine thresholds sigma1 < sigma3 < sigma4")
    if not (outer.sign == mid.sign == inner.sign):
        raise RegionMismatch("regions must share the same sign")
    for small, big in ((inner, mid), (mid, outer)):
        if not (big.energy_interval[0] < small.energy_interval[0]
                and small.energy_interval[1] < big.energy_interval[1]):
            raise RegionMismatch("energy intervals must nest strictly")
    if chi.support_hint is not None:
        sh = chi.support_hint
        if sh.radius < inner.radius * (1.0 - 1e-9):
            raise RegionMismatch("chi reaches inside the inner region radius")

    if m.is_flat:
        a0 = SymbolField(lambda x, xi: chi(x, xi), 0.0, -np.inf,
                         chi.support_hint, label="a0=chi(flat)")
        b0 = SymbolField.constant(1.0, label="b0=1(flat)")
        return a0, b0

    # the 1->2 cutoff lives between the outer region and the mid region
    sgn = outer.sign
    chi12 = directional_cutoff(sgn, outer.radius, outer.energy_interval,
                               mid.energy_interval, outer.sigma, mid.sigma)
    w0 = pt.transport_factor(m)

    def a0_fn(x, xi):
        return chi12(x, xi) * w0(x, xi)

    a0 = SymbolField(a0_fn, 0.0, -np.inf, chi12.support_hint, label="a0")

    def b0_fn(x, xi):
        gx = pt.grad_x(x, xi)
        chi_val = chi(x, gx)
        det = pt.mixed_hessian_det(x, xi)
        a0_val = a0(x, xi)
        out = np.zeros(x.shape[0], dtype=complex)
        active = np.abs(chi_val) > 1e-14
        if np.any(active):
            small = np.abs(a0_val[active]) < 1e-8
            if np.any(small):
                raise DivisionUnsafe(
                    "leading amplitude below 1e-8 on the support of b0")
            out[active] = np.conj(chi_val[active] * np.abs(det[active])
                                  / a0_val[active])
        return out

    b0 = SymbolField(b0_fn, 0.0, -np.inf, mid, label="b0")
    return a0, b0
