"""Metric perturbations of the Euclidean Laplacian and their classical dynamics.

A ``Metric`` supplies the inverse coefficient matrix field used by the
quadratic form on covectors, certifies its decay hypothesis by direct
sampling, and drives the Hamiltonian (geodesic) flow used both for the
escape certificates and, downstream, for phase construction.

All built-in families are conformal, ``G^{-1}(x) = g(x) * Id``:

* ``flat``            g = 1
* ``bump``            g = 1 + eps * exp(-|x|^2 / width^2)
* ``long_range``      g = 1 + eps * <x>^(-nu)
* ``trapping_demo``   g = 1 + amp * exp(-(|x|-ring_radius)^2 / width^2)
                          + tail_eps * <x>^(-1)   (d = 2 only)

The trapping family's well depth is solved so that an exactly circular
Hamiltonian orbit exists at a prescribed radius; it is the negative
control for the certificate.  Its slowly decaying tail is deliberately
mismatched with its declared decay rate so the decay check fails too.

User metrics come in as sampled inverse-coefficient tables with decay
metadata, interpolated bicubically, via :func:`metric_from_table`.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .errors import StepFailure

__all__ = [
    "Metric",
    "CotangentPoint",
    "ConicRegion",
    "flat_metric",
    "bump_metric",
    "long_range_metric",
    "trapping_demo_metric",
    "metric_from_table",
    "metric_from_dict",
    "principal_symbol",
    "subprincipal_symbol",
    "verify_long_range",
    "hamiltonian_flow",
    "nontrapping_certificate",
    "validate_symbol_expansion",
]

# relative FD steps for metric-coefficient derivatives; the second-order
# stencil is wider to keep the roundoff floor below long-range tails
FD_STEP_FIRST = 1e-5
FD_STEP_SECOND = 1e-3


def japanese_bracket(x):
    """<x> = sqrt(1 + |x|^2), batched over the last axis."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(1.0 + np.sum(x * x, axis=-1))


@dataclass
class CotangentPoint:
    """Phase-space point (position, covector)."""

    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        self.xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        if self.x.shape != self.xi.shape:
            raise ValueError("x and xi must have the same dimension")


@dataclass(frozen=True)
class ConicRegion:
    """Outgoing/incoming phase-space cone.

    Membership: |x| > radius, |xi|^2 in energy_interval and
    sign * (x . xi) > sigma |x| |xi|.
    """

    sign: int
    radius: float
    energy_interval: tuple
    sigma: float

    def __post_init__(self):
        if self.sign not in (+1, -1):
            raise ValueError("sign must be +1 or -1")
        lo, hi = self.energy_interval
        if not (0.0 < lo < hi):
            raise ValueError("energy_interval must have positive lower endpoint")
        if not (-1.0 < self.sigma < 1.0):
            raise ValueError("sigma must lie in (-1, 1)")

    def contains(self, x, xi):
        """Vectorized membership over points with shape (..., d)."""
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        rx = np.sqrt(np.sum(x * x, axis=-1))
        rxi = np.sqrt(np.sum(xi * xi, axis=-1))
        energy = rxi ** 2
        lo, hi = self.energy_interval
        cosine_ok = self.sign * np.sum(x * xi, axis=-1) > self.sigma * rx * rxi
        return (rx > self.radius) & (energy > lo) & (energy < hi) & cosine_ok

    def membership(self, p):
        return bool(self.contains(p.x, p.xi))

    def reflected(self):
        """Image region under (x, xi) -> (-x, -xi)."""
        return ConicRegion(-self.sign, self.radius, self.energy_interval, self.sigma)

    def to_dict(self):
        return {
            "sign": self.sign,
            "radius": self.radius,
            "energy_interval": list(self.energy_interval),
            "sigma": self.sigma,
        }


class Metric:
    """Smooth coefficient field G(x) with long-range decay metadata.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    inv_coeff_batch : callable
        Maps positions of shape (..., d) to inverse matrices (..., d, d).
    nu : float
        Declared long-range decay rate.
    r0 : float
        Decay onset radius (0 for all built-in families).
    family_id : str
        One of flat, bump, long_range, trapping_demo, table.
    params : dict
        Family parameters, echoed into reports.
    conformal_factor : callable or None
        g(x) with G^{-1} = g * Id when the family is conformal; enables
        closed-form shortcuts but is never required.
    """

    def __init__(self, dim, inv_coeff_batch, nu, r0=0.0, family_id="custom",
                 params=None, conformal_factor=None):
        self.dim = int(dim)
        self._inv_batch = inv_coeff_batch
        self.nu = float(nu)
        self.r0 = float(r0)
        self.family_id = family_id
        self.params = dict(params or {})
        self.conformal_factor = conformal_factor

    @property
    def is_flat(self):
        return self.family_id == "flat"

    # -- pointwise maps (spec surface) ------------------------------------

    def inv_coeff(self, x):
        """G^{-1}(x) for a single position."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self._inv_batch(x[None, :])[0]

    def coeff(self, x):
        """G(x) for a single position."""
        return np.linalg.inv(self.inv_coeff(x))

    def det(self, x):
        """det G(x) for a single position."""
        return float(np.linalg.det(self.coeff(x)))

    # -- batched evaluation ------------------------------------------------

    def inv_coeff_batch(self, x):
        """G^{-1} over positions of shape (..., d) -> (..., d, d)."""
        x = np.asarray(x, dtype=float)
        return self._inv_batch(x)

    def coeff_batch(self, x):
        return np.linalg.inv(self.inv_coeff_batch(x))

    def sqrt_det_batch(self, x):
        """det(G)^(1/2) over positions of shape (..., d)."""
        return np.linalg.det(self.coeff_batch(x)) ** 0.5

    def p2(self, x, xi):
        """Principal quadratic form sum G^{jk} xi_j xi_k, batched."""
        ginv = self.inv_coeff_batch(x)
        xi = np.asarray(xi, dtype=float)
        return np.einsum("...jk,...j,...k->...", ginv, xi, xi)

    def p2_grad_x(self, x, xi):
        """d/dx of p2 at fixed xi, central differences, batched."""
        x = np.asarray(x, dtype=float)
        step = FD_STEP_FIRST * japanese_bracket(x)
        out = np.empty_like(x)
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = 1.0
            dx = step[..., None] * e
            out[..., j] = (self.p2(x + dx, xi) - self.p2(x - dx, xi)) / (2.0 * step)
        return out

    def inv_coeff_div(self, x):
        """sum_j d_j G^{jk}(x), batched -> (..., d)."""
        x = np.asarray(x, dtype=float)
        step = FD_STEP_FIRST * japanese_bracket(x)
        out = np.zeros(x.shape)
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = 1.0
            dx = step[..., None] * e
            diff = (self.inv_coeff_batch(x + dx) - self.inv_coeff_batch(x - dx))
            out += diff[..., j, :] / (2.0 * step[..., None])
        return out

    def fingerprint(self):
        blob = json.dumps({"family": self.family_id, "dim": self.dim,
                           "nu": self.nu, "r0": self.r0, "params": self.params},
                          sort_keys=True)
        return blob

    def positivity_margin(self, radii=(0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0), n_dirs=16):
        """Smallest eigenvalue of G^{-1} over a radial sample set."""
        pts = _radial_samples(self.dim, radii, n_dirs)
        eigs = np.linalg.eigvalsh(self.inv_coeff_batch(pts))
        return float(eigs.min())


def _radial_samples(dim, radii, n_dirs):
    radii = np.asarray(radii, dtype=float)
    if dim == 1:
        pts = np.concatenate([radii, -radii])[:, None]
    else:
        ang = np.linspace(0.0, 2.0 * np.pi, n_dirs, endpoint=False)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        pts = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
    return pts


def _conformal_metric(dim, g, nu, family_id, params):
    def inv_batch(x):
        x = np.asarray(x, dtype=float)
        gval = g(x)
        eye = np.eye(dim)
        return gval[..., None, None] * eye

    return Metric(dim, inv_batch, nu, 0.0, family_id, params, conformal_factor=g)


def flat_metric(dim=1):
    return _conformal_metric(dim, lambda x: np.ones(x.shape[:-1]), np.inf,
                             "flat", {})


def bump_metric(dim=1, eps=0.1, width=1.0):
    """Compactly concentrated conformal bump; superpolynomial decay."""

    def g(x):
        r2 = np.sum(x * x, axis=-1)
        return 1.0 + eps * np.exp(-r2 / width ** 2)

    # Gaussian decay beats every polynomial rate; declare a generous nu
    return _conformal_metric(dim, g, 4.0, "bump", {"eps": eps, "width": width})


def long_range_metric(dim=1, eps=0.1, nu=1.5):
    def g(x):
        return 1.0 + eps * japanese_bracket(x) ** (-nu)

    return _conformal_metric(dim, g, nu, "long_range", {"eps": eps, "nu": nu})


def trapping_demo_metric(ring_radius=3.0, width=1.0, orbit_radius=2.0,
                         tail_eps=0.3, declared_nu=2.0):
    """Conformal ring well on R^2 admitting an exactly circular orbit.

    The well amplitude solves g'(r) = 2 g(r) / r at r = orbit_radius, which
    is the circularity condition for the Hamiltonian flow of g(x)|xi|^2.
    The <x>^(-1) tail makes the declared decay rate a lie on purpose.
    """
    rho, w, rc, c = ring_radius, width, orbit_radius, tail_eps
    bracket_rc = math.sqrt(1.0 + rc * rc)
    gauss = math.exp(-((rc - rho) ** 2) / w ** 2)
    dgauss = 2.0 * (rho - rc) / w ** 2 * gauss
    # g = 1 + A gauss + c <r>^-1; solve A from g'(rc) = 2 g(rc) / rc
    tail = c / bracket_rc
    dtail = -c * rc * bracket_rc ** (-3)
    # A (dgauss - 2 gauss / rc) = 2 (1 + tail) / rc + (-dtail + 2 tail / rc) ... collected:
    lhs = dgauss - 2.0 * gauss / rc
    rhs = 2.0 * (1.0 + tail) / rc - dtail
    amp = rhs / lhs

    def g(x):
        r = np.sqrt(np.sum(x * x, axis=-1))
        return (1.0 + amp * np.exp(-((r - rho) ** 2) / w ** 2)
                + c / japanese_bracket(x))

    params = {"ring_radius": rho, "width": w, "orbit_radius": rc,
              "amp": amp, "tail_eps": c}
    return _conformal_metric(2, g, declared_nu, "trapping_demo", params)


def circular_orbit_state(metric):
    """Exactly circular initial condition for the trapping demo."""
    if metric.family_id != "trapping_demo":
        raise ValueError("circular orbit only defined for the trapping demo")
    rc = metric.params["orbit_radius"]
    x0 = np.array([rc, 0.0])
    xi0 = np.array([0.0, 1.0])
    return CotangentPoint(x0, xi0)


def metric_from_table(axes, ginv_samples, nu, r0, dim=None):
    """Metric from G^{-1} samples on a product grid, bicubic interpolation.

    Parameters
    ----------
    axes : tuple of arrays
        Grid axes; one array for d = 1, two for d = 2.
    ginv_samples : ndarray
        Shape (n1, d, d) for d = 1 or (n1, n2, d, d) for d = 2.
    nu, r0 : float
        Decay metadata declared by the supplier.

    Outside the tabulated box the metric continues as the identity.
    """
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    dim = dim or len(axes)
    samples = np.asarray(ginv_samples, dtype=float)
    if dim == 1:
        splines = [[CubicSpline(axes[0], samples[:, j, k]) for k in range(1)]
                   for j in range(1)]
        lo, hi = axes[0][0], axes[0][-1]

        def inv_batch(x):
            x = np.asarray(x, dtype=float)
            t = x[..., 0]
            inside = (t >= lo) & (t <= hi)
            val = np.ones(t.shape)
            val[inside] = splines[0][0](t[inside])
            return val[..., None, None]
    else:
        splines = [[RectBivariateSpline(axes[0], axes[1], samples[:, :, j, k])
                    for k in range(2)] for j in range(2)]
        lo0, hi0 = axes[0][0], axes[0][-1]
        lo1, hi1 = axes[1][0], axes[1][-1]

        def inv_batch(x):
            x = np.asarray(x, dtype=float)
            shape = x.shape[:-1]
            flat = x.reshape(-1, 2)
            inside = ((flat[:, 0] >= lo0) & (flat[:, 0] <= hi0)
                      & (flat[:, 1] >= lo1) & (flat[:, 1] <= hi1))
            out = np.tile(np.eye(2), (flat.shape[0], 1, 1))
            if np.any(inside):
                fx, fy = flat[inside, 0], flat[inside, 1]
                for j in range(2):
                    for k in range(2):
                        out[inside, j, k] = splines[j][k].ev(fx, fy)
            return out.reshape(shape + (2, 2))

    return Metric(dim, inv_batch, nu, r0, "table", {"n": [len(a) for a in axes]})


_FAMILIES = {
    "flat": flat_metric,
    "bump": bump_metric,
    "long_range": long_range_metric,
    "trapping_demo": trapping_demo_metric,
}


def metric_from_dict(spec):
    """Build a metric from a {family, params...} mapping (plug-in surface)."""
    spec = dict(spec)
    family = spec.pop("family")
    if family == "table":
        path = spec.pop("table_path")
        data = np.load(path)
        axes = tuple(data[k] for k in sorted(d for d in data.files if d.startswith("axis")))
        return metric_from_table(axes, data["ginv"], float(spec.get("nu", 1.0)),
                                 float(spec.get("r0", 0.0)))
    if family not in _FAMILIES:
        raise ValueError(f"unknown metric family '{family}'")
    return _FAMILIES[family](**{k: _coerce_number(v) for k, v in spec.items()})


def _coerce_number(v):
    if isinstance(v, str):
        try:
            return int(v)
        except ValueError:
            return float(v)
    return v


# ---------------------------------------------------------------------------
# symbols of the operator
# ---------------------------------------------------------------------------

def principal_symbol(m, p):
    """Quadratic form sum_{jk} G^{jk}(x) xi_j xi_k at a cotangent point."""
    return float(m.p2(p.x[None, :], p.xi[None, :])[0])


def subprincipal_symbol(m, p):
    """First-order symbol of the discretized operator: -i sum_jk d_j G^{jk} xi_k.

    This is the h-coefficient in the expansion of h^2 P when P is realized as
    the density-symmetrized divergence-form operator on the flat measure (the
    realization :func:`dispersivelab.propagators.discretize` builds), obtained
    by conjugating the geometric Laplacian with det(G)^(1/4).  Linear in xi and
    purely imaginary for real metrics.
    """
    div = m.inv_coeff_div(p.x[None, :])[0]
    return complex(-1j * np.dot(div, p.xi))


def _coeff_entry_derivs(m, pts, order):
    """FD derivative arrays of G_{jk}(x) - delta_{jk} over points (N, d).

    Returns a dict mapping multi-index tuples alpha (|alpha| <= order) to
    arrays of shape (N, d, d).
    """
    pts = np.asarray(pts, dtype=float)
    d = m.dim
    eye = np.eye(d)

    def dev(x):
        return m.coeff_batch(x) - eye

    out = {(0,) * d: dev(pts)}
    step1 = FD_STEP_FIRST * japanese_bracket(pts)
    step2 = FD_STEP_SECOND * japanese_bracket(pts)
    if order >= 1:
        for j in range(d):
            alpha = tuple(1 if i == j else 0 for i in range(d))
            dx = step1[:, None] * eye[j]
            out[alpha] = (dev(pts + dx) - dev(pts - dx)) / (2.0 * step1[:, None, None])
    if order >= 2:
        for j in range(d):
            alpha = tuple(2 if i == j else 0 for i in range(d))
            dx = step2[:, None] * eye[j]
            out[alpha] = ((dev(pts + dx) - 2.0 * dev(pts) + dev(pts - dx))
                          / (step2 ** 2)[:, None, None])
        if d == 2:
            dx0 = step2[:, None] * eye[0]
            dx1 = step2[:, None] * eye[1]
            mixed = (dev(pts + dx0 + dx1) - dev(pts + dx0 - dx1)
                     - dev(pts - dx0 + dx1) + dev(pts - dx0 - dx1))
            out[(1, 1)] = mixed / (4.0 * step2 ** 2)[:, None, None]
    return out


def verify_long_range(m, max_order=2, sample_radii=(2.0, 4.0, 8.0, 16.0, 32.0),
                      n_dirs=24):
    """Measure weighted decay constants of G - Id and check their stability.

    For each |alpha| <= max_order, reports
    sup over samples of <x>^(nu + |alpha|) |d^alpha (G_{jk}(x) - delta_{jk})|,
    with the same suprema re-measured at doubled radii.  Pass iff every
    constant is finite and grows by at most 5% under radius doubling.
    """
    if max_order > 2:
        raise ValueError("max_order <= 2")
    radii = np.asarray(sample_radii, dtype=float)
    radii = radii[radii >= m.r0] if m.r0 > 0 else radii
    if radii.size == 0:
        raise ValueError("no sample radii at or beyond r0")
    # flat declares decay at every rate; weight with a finite surrogate
    nu = m.nu if np.isfinite(m.nu) else 4.0

    def constants(rset):
        pts = _radial_samples(m.dim, rset, n_dirs)
        derivs = _coeff_entry_derivs(m, pts, max_order)
        bracket = japanese_bracket(pts)
        consts = {}
        for alpha, arr in derivs.items():
            k = sum(alpha)
            weighted = bracket[:, None, None] ** (nu + k) * np.abs(arr)
            consts[alpha] = float(weighted.max())
        return consts

    def key(alpha):
        return "d" + "".join(map(str, alpha))

    base = constants(radii)
    doubled = constants(2.0 * radii)
    floor = 1e-12
    stable = all(doubled[a] <= 1.05 * base[a] + floor for a in base)
    finite = all(np.isfinite(v) for v in base.values())
    report = {
        "family": m.family_id,
        "nu": m.nu,
        "max_order": max_order,
        "constants": {key(a): base[a] for a in base},
        "constants_doubled": {key(a): doubled[a] for a in doubled},
        "verdict": "pass" if (stable and finite) else "fail",
    }
    return report


# ---------------------------------------------------------------------------
# Hamiltonian flow and the non-trapping certificate
# ---------------------------------------------------------------------------

def _flow_rhs(m):
    d = m.dim

    def rhs(t, state):
        pts = state.reshape(-1, 2 * d)
        x = pts[:, :d]
        xi = pts[:, d:]
        ginv = m.inv_coeff_batch(x)
        dx = 2.0 * np.einsum("njk,nk->nj", ginv, xi)
        dxi = -m.p2_grad_x(x, xi)
        return np.concatenate([dx, dxi], axis=1).reshape(-1)

    return rhs


def hamiltonian_flow(m, p0, t_final, tol=1e-9, max_step=np.inf):
    """Integrate the flow of the principal symbol from a cotangent point.

    Returns the trajectory as a list of (t, CotangentPoint) at the solver's
    accepted steps.  Energy p2(x(t), xi(t)) is conserved to tol along the
    returned samples; raises StepFailure otherwise.
    """
    if np.allclose(p0.xi, 0.0):
        raise ValueError("xi must be nonzero")
    d = m.dim
    state0 = np.concatenate([p0.x, p0.xi])
    # integrate well below the requested energy tolerance; what limits the
    # achievable drift is the FD bias of the force field, not step control
    ode_tol = max(1e-2 * tol, 1e-13)
    sol = solve_ivp(_flow_rhs(m), (0.0, t_final), state0, method="DOP853",
                    rtol=ode_tol, atol=ode_tol, max_step=max_step)
    if not sol.success:
        raise StepFailure(sol.message)
    traj = [(float(t), CotangentPoint(y[:d], y[d:]))
            for t, y in zip(sol.t, sol.y.T)]
    e0 = principal_symbol(m, p0)
    drift = max(abs(principal_symbol(m, p) - e0) for _, p in traj)
    if drift > tol * max(1.0, abs(e0)):
        raise StepFailure(f"energy drift {drift:.3e} exceeds tol budget "
                          f"{tol * max(1.0, abs(e0)):.3e}")
    return traj


def _halton(index, base):
    """Scalar Halton radical inverse."""
    result = 0.0
    f = 1.0
    i = index
    while i > 0:
        f /= base
        result += f * (i % base)
        i //= base
    return result


def _certificate_samples(m, energy_interval, seed_ball, n_samples, seed):
    """Deterministic low-discrepancy initial conditions.

    Positions and momentum directions come from Halton sequences offset by
    the seed; energies cycle through the interval endpoints and midpoint.
    Exactly tangential directions are included as their own stratum: they
    are the worst-case escapers, and any trapped circular orbit lies there.
    """
    lo, hi = energy_interval
    energies = [lo, 0.5 * (lo + hi), hi]
    offset = 1 + 977 * (seed % 1009)
    samples = []
    for i in range(n_samples):
        k = offset + i
        r = seed_ball * math.sqrt(_halton(k, 2))
        r = max(r, 1e-3 * seed_ball)
        energy = energies[i % 3]
        if m.dim == 1:
            x = np.array([r if i % 2 == 0 else -r])
            direction = np.array([1.0 if (i // 2) % 2 == 0 else -1.0])
        else:
            ang = 2.0 * np.pi * _halton(k, 3)
            x = r * np.array([math.cos(ang), math.sin(ang)])
            mode = i % 4
            if mode == 0:   # tangential, counterclockwise
                dirang = ang + 0.5 * np.pi
            elif mode == 1:  # tangential, clockwise
                dirang = ang - 0.5 * np.pi
            else:
                dirang = 2.0 * np.pi * _halton(k, 5)
            direction = np.array([math.cos(dirang), math.sin(dirang)])
        # scale the direction onto the requested energy shell
        p2dir = float(m.p2(x[None, :], direction[None, :])[0])
        xi = direction * math.sqrt(energy / p2dir)
        samples.append(CotangentPoint(x, xi))
    return samples


def nontrapping_certificate(m, energy_interval, seed_ball=2.5, escape_radius=20.0,
                            horizon=60.0, n_samples=120, seed=0, tol=1e-8):
    """Sampled escape certificate for the flow at the given energies.

    Every sampled trajectory must leave |x| > escape_radius forwards and
    backwards before |t| = horizon.  Non-escape is a fail verdict (never an
    exception); the slowest-escaping trajectory is recorded either way.
    """
    if escape_radius <= seed_ball:
        raise ValueError("escape_radius must exceed seed_ball")
    samples = _certificate_samples(m, energy_interval, seed_ball, n_samples, seed)
    d = m.dim
    rhs = _flow_rhs(m)

    def escape_event(t, state):
        x = state[:d]
        return float(np.sqrt(np.sum(x * x)) - escape_radius)

    escape_event.terminal = True
    escape_event.direction = 1.0

    worst = None
    worst_time = -1.0
    verdict = True
    for idx, p0 in enumerate(samples):
        state0 = np.concatenate([p0.x, p0.xi])
        escape_t = 0.0
        escaped_both = True
        failed_traj = None
        for sgn in (+1.0, -1.0):
            sol = solve_ivp(rhs, (0.0, sgn * horizon), state0, method="DOP853",
                            rtol=tol, atol=tol, events=escape_event)
            if sol.t_events[0].size == 0:
                escaped_both = False
                failed_traj = sol
                break
            escape_t = max(escape_t, abs(float(sol.t_events[0][0])))
        if not escaped_both:
            verdict = False
            worst = (idx, failed_traj, float("inf"))
            worst_time = float("inf")
            break
        if escape_t > worst_time:
            worst_time = escape_t
            worst = (idx, sol, escape_t)

    idx, sol, esc = worst
    traj = [[float(t)] + list(map(float, y[:d])) + list(map(float, y[d:]))
            for t, y in zip(sol.t, sol.y.T)]
    return {
        "verdict": "pass" if verdict else "fail",
        "n_samples": n_samples,
        "horizon": horizon,
        "escape_radius": escape_radius,
        "energy_interval": list(energy_interval),
        "seed": seed,
        "worst_escape_time": esc if np.isfinite(esc) else None,
        "worst_sample_index": idx,
        "worst_trajectory": traj,
    }


def certificate_to_json(cert, path):
    with open(path, "w") as fh:
        json.dump(cert, fh, indent=1, sort_keys=True)


# ---------------------------------------------------------------------------
# discrete validation of the symbol expansion
# ---------------------------------------------------------------------------

def validate_symbol_expansion(m, h, grid, n_test=12, seed=7):
    """Measured defect || h^2 P - Op_h(p2) - h Op_h(p1) || on band-limited data.

    Applies the discretized operator and the two quantized symbols to a
    band-limited test set and returns the worst relative L^2 defect.  The
    defect is O(h^2); callers compare two h values to check the rate.
    """
    from .propagators import discretize
    from .symbols import quantize_apply, principal_symbol_field, subprincipal_symbol_field
    from .grids import GridFunction

    P = discretize(m, grid)
    p2_field = principal_symbol_field(m)
    p1_field = subprincipal_symbol_field(m)
    rng = np.random.default_rng(seed)
    # band-limited test set within a conservative fraction of the window
    kmax_frac = 0.35
    defect = 0.0
    for _ in range(n_test):
        coeffs = np.zeros(grid.shape, dtype=complex)
        k2 = grid.freq_norm2()
        band = k2 <= (kmax_frac * grid.nyquist) ** 2
        vals = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
        coeffs[band] = vals[band]
        u = GridFunction(grid, np.fft.ifftn(coeffs))
        nrm = u.norm_l2()
        u.values /= nrm
        lhs = h * h * P.apply(u).values
        rhs = quantize_apply(p2_field, h, u).values + h * quantize_apply(p1_field, h, u).values
        err = GridFunction(grid, lhs - rhs).norm_l2()
        defect = max(defect, err)
    return {"h": h, "defect": defect, "n_test": n_test,
            "grid": grid.fingerprint(), "family": m.family_id}
