"""Relaxation kernels and the memory operators built on them.

Three kernel families are supported:

- ``exponential``: ``g(t) = g0 * exp(-a t)`` with ``zeta`` constant (default ``a``),
- ``power``: ``g(t) = g0 * (1 + t)**(-a)`` with ``zeta(t) = c / (1 + t)``
  (default ``c = a``),

either analytic family may pair ``g`` with the other ``zeta`` shape through
``zeta_profile`` ("constant" or "hyperbolic"),
- ``tabulated``: piecewise-linear ``g`` read from a table.

The operators act on uniformly sampled scalar histories ``h(0), h(dt), ...``
and use the composite trapezoid rule on that grid::

    (g * h)(t)  = int_0^t g(t-s) h(s) ds
    (g <> h)(t) = int_0^t g(t-s) (h(t) - h(s)) ds
    (g o h)(t)  = int_0^t g(t-s) (h(t) - h(s))**2 ds

``diamond`` and ``circle`` use the trapezoid mass ``G_h(t)`` of ``g`` on the
same grid, so the discrete versions inherit the exact Cauchy-Schwarz bound
``diamond**2 <= G_h * circle``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from .errors import (
    ArityError,
    InvalidCoefficientError,
    KernelShapeError,
    OutOfRangeError,
    UnknownMassError,
)

Family = Literal["exponential", "power", "tabulated"]
ZetaProfile = Literal["constant", "hyperbolic"]

_GRID_TOL = 1e-9


@dataclass(frozen=True)
class RelaxationKernel:
    """Relaxation function ``g`` with its derivative, ``zeta`` and mass.

    Build instances with :func:`exponential_kernel`, :func:`power_kernel`
    or :func:`tabulated_kernel`.
    """

    family: Family
    g0: float
    rate: float = 0.0
    zeta_scale: float = 0.0
    gbar: float | None = None
    infinite_mass: bool = False
    table_t: tuple[float, ...] = ()
    table_g: tuple[float, ...] = ()
    zeta_profile: ZetaProfile | None = None
    _table_cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    # -- pointwise values -------------------------------------------------

    def g(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "exponential":
            return self.g0 * np.exp(-self.rate * t)
        if self.family == "power":
            return self.g0 * (1.0 + t) ** (-self.rate)
        tt, gg, _, _ = self._table()
        return np.interp(t, tt, gg)

    def dg(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "exponential":
            return -self.rate * self.g0 * np.exp(-self.rate * t)
        if self.family == "power":
            return -self.rate * self.g0 * (1.0 + t) ** (-self.rate - 1.0)
        tt, _, dgg, _ = self._table()
        return np.interp(t, tt, dgg)

    @property
    def zeta_shape(self) -> ZetaProfile | None:
        if self.family == "tabulated":
            return None
        if self.zeta_profile is not None:
            return self.zeta_profile
        return "constant" if self.family == "exponential" else "hyperbolic"

    def zeta(self, t):
        t = np.asarray(t, dtype=float)
        shape = self.zeta_shape
        if shape == "constant":
            return np.full_like(t, self.zeta_scale)
        if shape == "hyperbolic":
            return self.zeta_scale / (1.0 + t)
        tt, _, _, zz = self._table()
        return np.interp(t, tt, zz)

    def G(self, t):
        """Cumulative mass ``int_0^t g(s) ds``."""
        t = np.asarray(t, dtype=float)
        if self.family == "exponential":
            if self.rate == 0.0:
                return self.g0 * t
            return self.g0 * (1.0 - np.exp(-self.rate * t)) / self.rate
        if self.family == "power":
            if self.rate == 1.0:
                return self.g0 * np.log1p(t)
            return self.g0 * (1.0 - (1.0 + t) ** (1.0 - self.rate)) / (self.rate - 1.0)
        tt, gg, _, _ = self._table()
        cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(tt) * (gg[1:] + gg[:-1]))])
        return np.interp(t, tt, cum)

    def zeta_integral(self, t0: float, t):
        """``int_{t0}^t zeta(s) ds``; closed form for the analytic families."""
        t = np.asarray(t, dtype=float)
        shape = self.zeta_shape
        if shape == "constant":
            return self.zeta_scale * (t - t0)
        if shape == "hyperbolic":
            return self.zeta_scale * np.log((1.0 + t) / (1.0 + t0))
        tt, _, _, zz = self._table()
        cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(tt) * (zz[1:] + zz[:-1]))])
        return np.interp(t, tt, cum) - np.interp(t0, tt, cum)

    @property
    def g_at_zero(self) -> float:
        return float(self.g(0.0))

    @property
    def mass(self) -> float:
        """Total mass ``gbar``; raises for tabulated kernels without one."""
        if self.infinite_mass:
            return math.inf
        if self.gbar is None:
            raise UnknownMassError(
                "tabulated kernel needs an explicit gbar or infinite_mass=True"
            )
        return self.gbar

    def _table(self):
        if "t" not in self._table_cache:
            tt = np.asarray(self.table_t, dtype=float)
            gg = np.asarray(self.table_g, dtype=float)
            dgg = np.gradient(gg, tt, edge_order=2)
            rate = -dgg / np.where(gg > 0, gg, np.inf)
            zz = np.minimum.accumulate(rate)
            self._table_cache.update(t=tt, g=gg, dg=dgg, zeta=np.maximum(zz, 0.0))
        c = self._table_cache
        return c["t"], c["g"], c["dg"], c["zeta"]

    def describe(self) -> dict:
        """JSON-ready echo of the defining parameters."""
        out: dict = {"family": self.family, "g0": self.g0}
        if self.family != "tabulated":
            out.update(rate=self.rate, zeta_scale=self.zeta_scale, zeta_profile=self.zeta_shape)
        else:
            out["table_points"] = len(self.table_t)
        out["gbar"] = None if self.infinite_mass else self.gbar
        out["infinite_mass"] = self.infinite_mass
        return out


def exponential_kernel(
    g0: float, rate: float, zeta: float | None = None, zeta_profile: ZetaProfile = "constant"
) -> RelaxationKernel:
    """``g(t) = g0 exp(-rate t)``; ``zeta`` defaults to ``rate`` (equality in H2).

    With ``zeta_profile="hyperbolic"`` the weight is ``zeta / (1 + t)``.
    """
    if g0 < 0 or rate < 0:
        raise InvalidCoefficientError("exponential kernel needs g0 >= 0 and rate >= 0")
    gbar = math.inf if rate == 0 and g0 > 0 else (0.0 if g0 == 0 else g0 / rate)
    return RelaxationKernel(
        "exponential",
        float(g0),
        float(rate),
        float(rate if zeta is None else zeta),
        gbar=gbar,
        infinite_mass=math.isinf(gbar),
        zeta_profile=zeta_profile,
    )


def power_kernel(
    g0: float, exponent: float, zeta_scale: float | None = None, zeta_profile: ZetaProfile = "hyperbolic"
) -> RelaxationKernel:
    """``g(t) = g0 (1+t)**(-exponent)`` with ``zeta(t) = zeta_scale / (1+t)``."""
    if g0 < 0 or exponent <= 0:
        raise InvalidCoefficientError("power kernel needs g0 >= 0 and exponent > 0")
    gbar = g0 / (exponent - 1.0) if exponent > 1.0 else math.inf
    return RelaxationKernel(
        "power",
        float(g0),
        float(exponent),
        float(exponent if zeta_scale is None else zeta_scale),
        gbar=gbar,
        infinite_mass=math.isinf(gbar),
        zeta_profile=zeta_profile,
    )


def tabulated_kernel(
    t: Sequence[float],
    g: Sequence[float],
    gbar: float | None = None,
    infinite_mass: bool = False,
) -> RelaxationKernel:
    """Piecewise-linear kernel from samples.

    ``zeta`` is the running minimum of ``-g'/g``, which is non-increasing and
    satisfies ``g' <= -zeta g`` on the table by construction. Flat or rising
    segments are rejected.
    """
    tt = np.asarray(t, dtype=float)
    gg = np.asarray(g, dtype=float)
    if tt.ndim != 1 or tt.shape != gg.shape or tt.size < 3:
        raise KernelShapeError("kernel table needs matching 1-D t and g columns (>= 3 rows)")
    if tt[0] != 0.0 or np.any(np.diff(tt) <= 0):
        raise KernelShapeError("kernel table times must start at 0 and increase")
    if np.any(gg < 0) or gg[0] <= 0:
        raise KernelShapeError("kernel table needs g(0) > 0 and g >= 0")
    if np.any(np.diff(gg) >= 0):
        raise KernelShapeError("kernel table has a flat or rising segment (H2 needs g' < 0)")
    return RelaxationKernel(
        "tabulated",
        float(gg[0]),
        gbar=None if gbar is None else float(gbar),
        infinite_mass=infinite_mass,
        table_t=tuple(map(float, tt)),
        table_g=tuple(map(float, gg)),
    )


def load_kernel_csv(path: str, **kwargs) -> RelaxationKernel:
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if data.shape[1] < 2:
        raise KernelShapeError(f"{path}: expected two columns (t, g)")
    # header rows are tolerated when commented out with '#'
    return tabulated_kernel(data[:, 0], data[:, 1], **kwargs)


# -- hypotheses ----------------------------------------------------------


@dataclass(frozen=True)
class HypothesisReport:
    lam: float
    h1_ok: bool
    h2_ok: bool
    worst_h2_slack: float
    zeta_nonincreasing: bool


def check_hypotheses(
    kernel: RelaxationKernel,
    delta: float,
    t_grid: Sequence[float],
    tol: float = 1e-12,
) -> HypothesisReport:
    """Check (H1) ``g(0) > 0, delta - gbar > 0`` and (H2) ``g' <= -zeta g`` on a grid."""
    if not delta > 0:
        raise InvalidCoefficientError(f"delta must be positive, got {delta!r}")
    grid = np.asarray(t_grid, dtype=float)
    if grid.size == 0 or np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("t_grid must be non-empty, nonnegative and increasing")
    lam = delta - kernel.mass
    h1 = kernel.g_at_zero > 0 and lam > 0
    zeta = kernel.zeta(grid)
    slack = kernel.dg(grid) + zeta * kernel.g(grid)
    worst = float(np.max(slack))
    monotone = bool(np.all(np.diff(zeta) <= tol)) and bool(np.all(zeta >= 0))
    h2 = worst <= tol and monotone
    return HypothesisReport(float(lam), bool(h1), bool(h2), worst, monotone)


# -- scalar histories and operators ---------------------------------------


@dataclass(frozen=True)
class ScalarHistory:
    """Uniform samples ``h(0), h(dt), ...``."""

    dt: float
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1 or s.size < 1:
            raise ValueError("history needs at least one sample")
        if not self.dt > 0:
            raise ValueError("history dt must be positive")
        object.__setattr__(self, "samples", s)

    @classmethod
    def from_function(cls, f: Callable, dt: float, t_end: float) -> "ScalarHistory":
        m = int(round(t_end / dt))
        return cls(dt, np.asarray(f(dt * np.arange(m + 1)), dtype=float))

    def index(self, t: float) -> int:
        m = t / self.dt
        i = int(round(m))
        if t < 0 or i > self.samples.size - 1 or (i == self.samples.size - 1 and m > i + _GRID_TOL):
            raise OutOfRangeError(f"t={t!r} outside recorded history [0, {self.dt * (self.samples.size - 1)!r}]")
        if abs(m - i) > _GRID_TOL * max(1.0, abs(m)):
            raise ValueError(f"t={t!r} is not on the history grid (dt={self.dt!r})")
        return i


def trapezoid_weights(m: int, dt: float) -> np.ndarray:
    """Composite trapezoid weights for ``m`` intervals."""
    w = np.full(m + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    if m == 0:
        w[:] = 0.0
    return w


def _lags(kernel_fn: Callable, i: int, dt: float) -> np.ndarray:
    # values of kernel_fn(t_i - t_j) for j = 0..i
    return kernel_fn(dt * np.arange(i, -1, -1))


def _conv_at(kernel_fn: Callable, h: np.ndarray, i: int, dt: float) -> float:
    if i == 0:
        return 0.0
    return float(np.dot(trapezoid_weights(i, dt) * _lags(kernel_fn, i, dt), h[: i + 1]))


def convolve(kernel: RelaxationKernel, h: ScalarHistory, t: float) -> float:
    """``(g * h)(t)`` by the trapezoid rule on the history grid."""
    return _conv_at(kernel.g, h.samples, h.index(t), h.dt)


def trapezoid_mass(kernel: RelaxationKernel, t: float, dt: float, derivative: bool = False) -> float:
    """Trapezoid approximation of ``int_0^t g`` (or of ``g'``) on a grid of step ``dt``."""
    i = int(round(t / dt))
    fn = kernel.dg if derivative else kernel.g
    if i == 0:
        return 0.0
    return float(np.dot(trapezoid_weights(i, dt), fn(dt * np.arange(i + 1))))


def _diamond_at(kernel_fn, h, i, dt) -> float:
    Gh = float(np.dot(trapezoid_weights(i, dt), _lags(kernel_fn, i, dt))) if i else 0.0
    return Gh * h[i] - _conv_at(kernel_fn, h, i, dt)


def _circle_expansion(kernel_fn, h, i, dt) -> float:
    if i == 0:
        return 0.0
    w = trapezoid_weights(i, dt) * _lags(kernel_fn, i, dt)
    hi = h[: i + 1]
    return float(w.sum() * h[i] ** 2 - 2.0 * h[i] * np.dot(w, hi) + np.dot(w, hi * hi))


def _circle_direct(kernel_fn, h, i, dt) -> float:
    if i == 0:
        return 0.0
    w = trapezoid_weights(i, dt) * _lags(kernel_fn, i, dt)
    return float(np.dot(w, (h[i] - h[: i + 1]) ** 2))


def diamond(kernel: RelaxationKernel, h: ScalarHistory, t: float) -> float:
    """``(g <> h)(t) = G_h(t) h(t) - (g * h)(t)``."""
    return _diamond_at(kernel.g, h.samples, h.index(t), h.dt)


def circle(kernel: RelaxationKernel, h: ScalarHistory, t: float, rtol: float = 1e-8) -> float:
    """``(g o h)(t)``, evaluated directly and by expansion; both must agree.

    The expansion is ``G_h h^2 - 2 h (g*h) + (g*h^2)``. A disagreement beyond
    ``rtol`` (relative to the size of the expanded terms) raises
    ``ArithmeticError``.
    """
    direct, expanded = circle_both(kernel, h, t)
    i = h.index(t)
    scale = _circle_scale(kernel.g, h.samples, i, h.dt)
    if abs(direct - expanded) > rtol * max(scale, abs(direct)) + 1e-300:
        raise ArithmeticError(f"circle evaluations disagree: {direct!r} vs {expanded!r}")
    return direct


def circle_both(kernel: RelaxationKernel, h: ScalarHistory, t: float) -> tuple[float, float]:
    """Return ``(direct quadrature, algebraic expansion)`` of ``(g o h)(t)``."""
    i = h.index(t)
    return _circle_direct(kernel.g, h.samples, i, h.dt), _circle_expansion(kernel.g, h.samples, i, h.dt)


def _circle_scale(kernel_fn, h, i, dt) -> float:
    if i == 0:
        return 0.0
    w = np.abs(trapezoid_weights(i, dt) * _lags(kernel_fn, i, dt))
    return float(w.sum() * h[i] ** 2 + np.dot(w, h[: i + 1] ** 2))


def product_identity_residual(kernel: RelaxationKernel, h: ScalarHistory, t: float) -> float:
    """Discrete residual of the memory product identity

    ``(g*h) h' = -g(t) h^2 / 2 + (g' o h) / 2 - d/dt[(g o h) - G h^2] / 2``,

    with centred differences for ``h'`` and the time derivative. The residual
    is ``O(dt^2)`` on smooth histories.
    """
    i = h.index(t)
    s, dt = h.samples, h.dt
    if i < 1 or i + 1 > s.size - 1:
        raise ArityError("product_identity_residual needs one sample on each side of t")

    def bracket(j):
        Gh = float(np.dot(trapezoid_weights(j, dt), _lags(kernel.g, j, dt))) if j else 0.0
        return _circle_expansion(kernel.g, s, j, dt) - Gh * s[j] ** 2

    hp = (s[i + 1] - s[i - 1]) / (2 * dt)
    lhs = _conv_at(kernel.g, s, i, dt) * hp
    rhs = (
        -0.5 * float(kernel.g(t)) * s[i] ** 2
        + 0.5 * _circle_expansion(kernel.dg, s, i, dt)
        - 0.5 * (bracket(i + 1) - bracket(i - 1)) / (2 * dt)
    )
    return abs(lhs - rhs)


def cauchy_schwarz_slack(kernel: RelaxationKernel, h: ScalarHistory, t: float) -> float:
    """Slack ``G(t) (g o h)(t) - (g <> h)(t)^2``; nonnegative up to rounding."""
    i = h.index(t)
    s, dt = h.samples, h.dt
    if i == 0:
        return 0.0
    Gh = float(np.dot(trapezoid_weights(i, dt), _lags(kernel.g, i, dt)))
    return Gh * _circle_direct(kernel.g, s, i, dt) - _diamond_at(kernel.g, s, i, dt) ** 2


# -- recursive accumulator ----------------------------------------------


class ExponentialAccumulator:
    """O(1) trapezoid convolution with ``g(t) = g0 exp(-a t)``.

    Works elementwise on arrays, so one instance can carry every mode. With
    ``B_n`` the trapezoid sum minus its newest endpoint term,
    ``B_{n+1} = e^{-a dt} (B_n + w h_n)`` where ``w`` is ``dt g0`` (``dt g0 / 2``
    for the first step); this reproduces the full sum up to rounding.
    """

    def __init__(self, kernel: RelaxationKernel, dt: float, h0):
        if kernel.family != "exponential":
            raise ValueError("recursive accumulation requires an exponential kernel")
        self.g0 = kernel.g0
        self.decay = math.exp(-kernel.rate * dt)
        self.dt = dt
        self.steps = 0
        self.last = np.array(h0, dtype=float)
        self.partial = np.zeros_like(self.last)
        self.mass = 0.0
        self._g_last = self.g0

    def total(self):
        """``(g*h)(t_n)`` on the trapezoid grid (zero at ``n = 0``)."""
        if self.steps == 0:
            return np.zeros_like(self.last)
        return self.partial + 0.5 * self.dt * self.g0 * self.last

    def partial_at(self, c: float):
        """Trapezoid sum over ``[0, t_n]`` of ``g(t_n + c dt - s) h(s)``."""
        return self.decay**c * self.total()

    def advance(self, h_new):
        w = self.dt * self.g0 * (0.5 if self.steps == 0 else 1.0)
        self.partial = self.decay * (self.partial + w * self.last)
        g_new = self._g_last * self.decay
        self.mass += 0.5 * self.dt * (self._g_last + g_new)
        self._g_last = g_new
        self.last = np.array(h_new, dtype=float)
        self.steps += 1
        return self.total()


# names required by the public interface
lemma21_residual = product_identity_residual
lemma22_check = cauchy_schwarz_slack
