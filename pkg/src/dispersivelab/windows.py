"""Smooth transition functions with exact 0/1 plateaus.

All cutoffs and spectral windows in the lab are built from one C-infinity
smoothstep: the normalized antiderivative of exp(-1/(t(1-t))).  It is 0 for
t <= 0 and 1 for t >= 1 exactly, with all derivatives vanishing at the
junctions, so products and telescoping sums of windows have exact plateaus.
"""

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline

__all__ = ["smoothstep", "smoothstep_d1", "smoothstep_d2", "rising_window",
           "bump_window", "SpectralWindow"]

_NODES = 8193


def _bump_integrand(t):
    out = np.zeros_like(t)
    inside = (t > 0.0) & (t < 1.0)
    ti = t[inside]
    out[inside] = np.exp(-1.0 / (ti * (1.0 - ti)))
    return out


def _build_table():
    t = np.linspace(0.0, 1.0, _NODES)
    f = _bump_integrand(t)
    cum = cumulative_simpson(f, x=t, initial=0.0)
    cum /= cum[-1]
    cum = np.maximum.accumulate(cum)
    # C^2 evaluation keeps quadratures and finite differences of windowed
    # symbols clean; plateaus are enforced exactly by clamping
    return CubicSpline(t, cum, bc_type=((1, 0.0), (1, 0.0)))


_S_SPLINE = _build_table()


_NORM = None


def _norm_constant():
    global _NORM
    if _NORM is None:
        from scipy.integrate import simpson
        t = np.linspace(0.0, 1.0, _NODES)
        _NORM = simpson(_bump_integrand(t), x=t)
    return _NORM


def smoothstep(t):
    """C-infinity monotone step: exactly 0 for t<=0 and 1 for t>=1.

    Normalized antiderivative of exp(-1/(t(1-t))), evaluated from a cached
    high-resolution quadrature table through a clamped cubic spline.
    Deterministic: identical inputs give bit-identical outputs.
    """
    t = np.asarray(t, dtype=float)
    out = _S_SPLINE(np.clip(t, 0.0, 1.0))
    out = np.where(t <= 0.0, 0.0, out)
    out = np.where(t >= 1.0, 1.0, out)
    return np.clip(out, 0.0, 1.0)


def smoothstep_d1(t):
    """Exact first derivative of :func:`smoothstep`."""
    t = np.asarray(t, dtype=float)
    return _bump_integrand(np.clip(t, 0.0, 1.0)) / _norm_constant()


def smoothstep_d2(t):
    """Exact second derivative of :func:`smoothstep`."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = (t > 0.0) & (t < 1.0)
    ti = t[inside]
    q = ti * (1.0 - ti)
    out[inside] = np.exp(-1.0 / q) * (1.0 - 2.0 * ti) / q ** 2
    return out / _norm_constant()


def rising_window(t, lo, hi):
    """Smooth 0 -> 1 transition across [lo, hi]."""
    if not hi > lo:
        raise ValueError("rising_window needs hi > lo")
    return smoothstep((np.asarray(t, dtype=float) - lo) / (hi - lo))


def bump_window(t, lo, plateau_lo, plateau_hi, hi):
    """Smooth window: 0 outside (lo, hi), exactly 1 on [plateau_lo, plateau_hi]."""
    if not (lo < plateau_lo <= plateau_hi < hi):
        raise ValueError("bump_window needs lo < plateau_lo <= plateau_hi < hi")
    t = np.asarray(t, dtype=float)
    return rising_window(t, lo, plateau_lo) * (1.0 - rising_window(t, plateau_hi, hi))


class SpectralWindow:
    """Smooth compactly supported energy window phi with an exact plateau.

    supp(phi) = [lo, hi]; phi = 1 on [lo + margin, hi - margin] where
    margin = margin_frac * (hi - lo).  Callable on arrays.
    """

    def __init__(self, lo, hi, margin_frac=0.25, label="phi"):
        if not (0.0 < lo < hi):
            raise ValueError("SpectralWindow needs 0 < lo < hi")
        if not (0.0 < margin_frac < 0.5):
            raise ValueError("margin_frac must lie in (0, 1/2)")
        self.lo = float(lo)
        self.hi = float(hi)
        self.margin = margin_frac * (hi - lo)
        self.label = label

    @property
    def support(self):
        return (self.lo, self.hi)

    @property
    def plateau(self):
        return (self.lo + self.margin, self.hi - self.margin)

    def __call__(self, lam):
        return bump_window(lam, self.lo, self.lo + self.margin,
                           self.hi - self.margin, self.hi)

    def _pieces(self, lam):
        lam = np.asarray(lam, dtype=float)
        tl = (lam - self.lo) / self.margin
        tr = (lam - (self.hi - self.margin)) / self.margin
        return tl, tr

    def deriv(self, lam, order=1):
        """Exact derivative of the window (order 1 or 2)."""
        tl, tr = self._pieces(lam)
        a, b = smoothstep(tl), 1.0 - smoothstep(tr)
        da = smoothstep_d1(tl) / self.margin
        db = -smoothstep_d1(tr) / self.margin
        if order == 1:
            return da * b + a * db
        if order == 2:
            d2a = smoothstep_d2(tl) / self.margin ** 2
            d2b = -smoothstep_d2(tr) / self.margin ** 2
            return d2a * b + 2.0 * da * db + a * d2b
        raise ValueError("order must be 1 or 2")

    def squared(self):
        return _SquaredWindow(self)


class _SquaredWindow(SpectralWindow):
    """Pointwise square of a window; same support and plateau."""

    def __init__(self, parent):
        self.parent = parent
        self.lo = parent.lo
        self.hi = parent.hi
        self.margin = parent.margin
        self.label = f"|{parent.label}|^2"

    def __call__(self, lam):
        v = self.parent(lam)
        return v * v

    def deriv(self, lam, order=1):
        v = self.parent(lam)
        d1 = self.parent.deriv(lam, 1)
        if order == 1:
            return 2.0 * v * d1
        if order == 2:
            return 2.0 * d1 * d1 + 2.0 * v * self.parent.deriv(lam, 2)
        raise ValueError("order must be 1 or 2")
