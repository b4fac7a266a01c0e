"""Modal Galerkin representation of the beam/heat system on ``(0, 1)``.

Fields and bases
----------------
``Phi`` and ``Psi`` (Dirichlet) are expanded in ``s_k = sqrt(2) sin(k pi x)``,
``k = 1..n``; ``theta`` (Neumann) in ``c_0 = 1``, ``c_k = sqrt(2) cos(k pi x)``,
``k = 0..n``. With ``D = diag(k pi)`` and the cross Gram matrix
``C[j, k] = int s_j c_k`` (``j = 1..n``, ``k = 0..n``) the projected equations
are::

    rho1 Phi_tt   = -K D (D Phi + C'^T Psi)
    rho2 Psi_tt   = -b D^2 Psi - K (C' D Phi + Psi) + beta D theta_t'
    rho3 theta_tt = -delta D0^2 theta + D0^2 (g * theta) - gamma D0 psi_t
                    - mu1 theta_t - mu2 z(1)

where ``C'`` drops the mean column of ``C`` and ``D0`` is ``D`` padded with a
zero for the mean mode. ``C[j, k] = 4 j / (pi (j^2 - k^2))`` for odd ``j + k``
and zero otherwise, so the shear coupling is a checkerboard rather than
diagonal; the theta/psi coupling is diagonal per wavenumber.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Literal

import numpy as np

from .errors import OutOfRangeError, StepSizeError
from .kernels import RelaxationKernel

Backend = Literal["ringbuffer", "transport"]

_SQRT2 = math.sqrt(2.0)


# -- bases and exact pairings ---------------------------------------------


def wavenumbers(n: int) -> np.ndarray:
    """``k pi`` for ``k = 1..n``."""
    return np.pi * np.arange(1, n + 1)


def sine_basis(n: int, x) -> np.ndarray:
    """Rows ``s_1..s_n`` evaluated at ``x``; shape ``(n, len(x))``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return _SQRT2 * np.sin(np.outer(wavenumbers(n), x))


def cosine_basis(n: int, x) -> np.ndarray:
    """Rows ``c_0..c_n`` evaluated at ``x``; shape ``(n + 1, len(x))``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = _SQRT2 * np.cos(np.outer(np.pi * np.arange(n + 1), x))
    out[0] = 1.0
    return out


@lru_cache(maxsize=32)
def gauss_legendre(m: int) -> tuple[np.ndarray, np.ndarray]:
    """``m``-point Gauss-Legendre nodes and weights on ``[0, 1]``."""
    xg, wg = np.polynomial.legendre.leggauss(m)
    return 0.5 * (xg + 1.0), 0.5 * wg


def quadrature_size(n: int) -> int:
    return 4 * n + 64


@lru_cache(maxsize=32)
def cross_matrix(n: int) -> np.ndarray:
    """``C[j-1, k] = int_0^1 s_j c_k dx`` in closed form; shape ``(n, n + 1)``."""
    j = np.arange(1, n + 1)[:, None].astype(float)
    k = np.arange(0, n + 1)[None, :].astype(float)
    odd = ((j + k) % 2) == 1
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(odd, 4.0 * j / (np.pi * (j * j - k * k)), 0.0)
    # the k = 0 column carries the plain sine mean sqrt(2)(1 - (-1)^j)/(j pi)
    c[:, 0] /= _SQRT2
    c.setflags(write=False)
    return c


@lru_cache(maxsize=32)
def sine_first_moment(n: int) -> np.ndarray:
    """``int_0^1 x s_j dx = sqrt(2) (-1)^{j+1} / (j pi)``."""
    j = np.arange(1, n + 1)
    out = _SQRT2 * (-1.0) ** (j + 1) / (j * np.pi)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def weighted_cross_matrix(n: int) -> np.ndarray:
    """``Q[j-1, k] = int_0^1 (2 - 4x) s_j c_k dx`` by Gauss-Legendre; shape ``(n, n + 1)``."""
    x, w = gauss_legendre(quadrature_size(n))
    s = sine_basis(n, x)
    c = cosine_basis(n, x)
    q = (s * (w * (2.0 - 4.0 * x))) @ c.T
    q.setflags(write=False)
    return q


def sine_endpoint_signs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Values of ``c_k / sqrt(2)`` at ``x = 0`` and ``x = 1`` for ``k = 1..n``."""
    k = np.arange(1, n + 1)
    return np.ones(n), (-1.0) ** k


# -- state ----------------------------------------------------------------


@dataclass
class ModalState:
    """Modal coefficients of ``Phi, Psi`` (sine) and ``theta`` (cosine) with velocities."""

    n: int
    phi: np.ndarray
    phi_t: np.ndarray
    psi: np.ndarray
    psi_t: np.ndarray
    theta: np.ndarray
    theta_t: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        for name in ("phi", "phi_t", "psi", "psi_t", "theta", "theta_t"):
            arr = np.array(getattr(self, name), dtype=float)
            want = self.n + 1 if name.startswith("theta") else self.n
            if arr.shape != (want,):
                raise ValueError(f"{name} must have length {want}, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            setattr(self, name, arr)

    @classmethod
    def zeros(cls, n: int, t: float = 0.0) -> "ModalState":
        z = np.zeros(n)
        zt = np.zeros(n + 1)
        return cls(n, z, z.copy(), z.copy(), z.copy(), zt, zt.copy(), t)

    @property
    def size(self) -> int:
        return 6 * self.n + 2

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.phi, self.psi, self.theta, self.phi_t, self.psi_t, self.theta_t])

    @classmethod
    def from_vector(cls, n: int, y: np.ndarray, t: float = 0.0) -> "ModalState":
        sl = state_slices(n)
        return cls(n, *(np.array(y[sl[k]]) for k in ("phi", "phi_t", "psi", "psi_t", "theta", "theta_t")), t=t)

    def copy(self) -> "ModalState":
        return replace(self)


@lru_cache(maxsize=32)
def state_slices(n: int) -> dict[str, slice]:
    """Layout of the flat vector ``[phi, psi, theta, phi_t, psi_t, theta_t]``."""
    sizes = [("phi", n), ("psi", n), ("theta", n + 1), ("phi_t", n), ("psi_t", n), ("theta_t", n + 1)]
    out, start = {}, 0
    for name, m in sizes:
        out[name] = slice(start, start + m)
        start += m
    return out


# -- initial data -----------------------------------------------------------

Profile = Callable[[np.ndarray], np.ndarray]


def _zero_profile(x):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass
class InitialData:
    """Initial profiles on ``[0, 1]`` and the theta_t history ``f0(x, s)``, ``s in [-tau, 0]``."""

    phi0: Profile = _zero_profile
    phi1: Profile = _zero_profile
    psi0: Profile = _zero_profile
    psi1: Profile = _zero_profile
    theta0: Profile = _zero_profile
    theta1: Profile = _zero_profile
    f0: Callable[[np.ndarray, float], np.ndarray] | None = None
    label: str = "custom"


def project_sine(f: Profile, n: int) -> np.ndarray:
    x, w = gauss_legendre(quadrature_size(n))
    return sine_basis(n, x) @ (w * _evaluate(f, x))


def project_cosine(f: Profile, n: int) -> np.ndarray:
    x, w = gauss_legendre(quadrature_size(n))
    return cosine_basis(n, x) @ (w * _evaluate(f, x))


def _evaluate(f: Profile, x: np.ndarray) -> np.ndarray:
    try:
        vals = np.asarray(f(x), dtype=float)
    except Exception as exc:  # noqa: BLE001 - user callables may raise anything
        raise ValueError(f"initial profile could not be evaluated: {exc}") from exc
    if vals.shape == ():
        vals = np.full_like(x, float(vals))
    if vals.shape != x.shape or not np.all(np.isfinite(vals)):
        raise ValueError("initial profile must return finite values on the quadrature grid")
    return vals


# -- delay field -------------------------------------------------------------


class DelayField:
    """Values ``z(x, rho, t) = theta_t(x, t - rho tau)`` in cosine-modal form.

    ``ringbuffer`` stores the last ``tau/dt + 1`` full-step snapshots of
    ``theta_t``; ``transport`` advects ``z`` on a uniform ``rho`` grid with the
    first-order upwind scheme for ``tau z_t + z_rho = 0``. Row ``i`` of
    :meth:`profile` is ``z`` at ``rho_i = i / m``.
    """

    def __init__(self, backend: Backend, n: int, tau: float, dt: float, m_rho: int | None = None):
        if backend not in ("ringbuffer", "transport"):
            raise ValueError(f"unknown delay backend {backend!r}")
        self.backend = backend
        self.n = n
        self.tau = float(tau)
        self.dt = float(dt)
        self.lag_steps = delay_steps(tau, dt)
        if backend == "ringbuffer":
            self.m_rho = self.lag_steps
        else:
            self.m_rho = self.lag_steps if m_rho is None else int(m_rho)
            if self.m_rho < 1:
                raise ValueError("m_rho must be a positive integer")
        self.courant = self.dt * self.m_rho / self.tau
        if backend == "transport" and self.courant > 1.0 + 1e-12:
            raise StepSizeError(
                f"CFL violated: dt*m_rho/tau = {self.courant!r} > 1; use dt <= {self.tau / self.m_rho!r}"
            )
        self._buf = np.zeros((self.m_rho + 1, n + 1))
        self._head = 0  # ringbuffer: index of the newest snapshot

    # filling -------------------------------------------------------------

    def fill(self, history: Callable[[float], np.ndarray], current: np.ndarray) -> None:
        """Initialise from modal history ``history(s)``, ``s in [-tau, 0)``, and ``theta_t(0)``."""
        m = self.m_rho
        rows = np.empty((m + 1, self.n + 1))
        rows[0] = current
        for i in range(1, m + 1):
            rows[i] = history(-i * self.tau / m)
        if self.backend == "ringbuffer":
            # stored oldest-first in circular order, newest at _head
            self._buf[:] = rows[::-1]
            self._head = m
        else:
            self._buf[:] = rows

    # access ----------------------------------------------------------------

    def profile(self) -> np.ndarray:
        """Array of shape ``(m_rho + 1, n + 1)``; row ``i`` is ``z(rho_i)``."""
        if self.backend == "transport":
            return self._buf
        idx = (self._head - np.arange(self.m_rho + 1)) % (self.m_rho + 1)
        return self._buf[idx]

    def value(self, c: float = 0.0) -> np.ndarray:
        """``z(., 1)`` at ``t_n + c dt``, linear in ``c`` between full steps."""
        if self.backend == "ringbuffer":
            size = self.m_rho + 1
            oldest = self._buf[(self._head + 1) % size]
            if c == 0.0:
                return oldest
            nxt = self._buf[(self._head + 2) % size] if self.m_rho > 1 else self._buf[self._head]
            return (1.0 - c) * oldest + c * nxt
        z_m = self._buf[-1]
        if c == 0.0:
            return z_m
        z_next = z_m - self.courant * (z_m - self._buf[-2])
        return (1.0 - c) * z_m + c * z_next

    def integrals(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-mode ``int_0^1 z_k^2 drho`` and ``int_0^1 e^{-2 tau rho} z_k^2 drho`` (trapezoid)."""
        prof = self.profile()
        m = self.m_rho
        w = np.full(m + 1, 1.0 / m)
        w[0] = w[-1] = 0.5 / m
        sq = prof * prof
        plain = w @ sq
        weighted = (w * np.exp(-2.0 * self.tau * np.arange(m + 1) / m)) @ sq
        return plain, weighted

    # evolution ---------------------------------------------------------------

    def advance(self, theta_t_new: np.ndarray) -> None:
        if self.backend == "ringbuffer":
            self._head = (self._head + 1) % (self.m_rho + 1)
            self._buf[self._head] = theta_t_new
            return
        z = self._buf
        z[1:] -= self.courant * (z[1:] - z[:-1])
        z[0] = theta_t_new

    def copy(self) -> "DelayField":
        other = object.__new__(DelayField)
        other.__dict__.update(self.__dict__)
        other._buf = self._buf.copy()
        return other


def delay_steps(tau: float, dt: float) -> int:
    """``tau / dt`` as an integer; raises with a suggested step otherwise."""
    if not (dt > 0 and tau > 0):
        raise StepSizeError("tau and dt must be positive")
    m = tau / dt
    k = int(round(m))
    if k < 1 or abs(m - k) > 1e-9 * max(1.0, m):
        k = max(1, int(math.ceil(m)))
        raise StepSizeError(f"tau/dt = {m!r} is not an integer; try dt = {tau / k!r}")
    return k


def advect_z(delay: DelayField, theta_t: np.ndarray, dt: float) -> DelayField:
    """One upwind step of the transport backend with inflow ``theta_t``."""
    if delay.backend != "transport":
        raise ValueError("advect_z needs the transport backend")
    if not math.isclose(dt, delay.dt, rel_tol=1e-12):
        courant = dt * delay.m_rho / delay.tau
        if courant > 1.0 + 1e-12:
            raise StepSizeError(f"CFL violated: Courant number {courant!r} > 1")
        delay.dt, delay.courant = dt, courant
    delay.advance(np.asarray(theta_t, dtype=float))
    return delay


def delay_value(delay: DelayField, c: float = 0.0) -> np.ndarray:
    """The ``z(., 1, t)`` slice (``theta_t`` one delay ago)."""
    if not 0.0 <= c <= 1.0:
        raise OutOfRangeError("stage offset must lie in [0, 1]")
    return delay.value(c)


# -- memory -------------------------------------------------------------------


@dataclass(frozen=True)
class MemorySnapshot:
    """Trapezoid memory sums at a full step ``t_n`` (all per cosine mode).

    ``conv = g * theta``, ``conv_sq = g * theta^2``, ``dconv = g' * theta``,
    ``dconv_sq = g' * theta^2``; ``mass`` and ``dmass`` are the trapezoid sums of
    ``g`` and ``g'`` over ``[0, t_n]``.
    """

    conv: np.ndarray
    conv_sq: np.ndarray
    dconv: np.ndarray
    dconv_sq: np.ndarray
    mass: float
    dmass: float


class _RecursiveMemory:
    def __init__(self, kernel: RelaxationKernel, dt: float, theta0: np.ndarray):
        from .kernels import ExponentialAccumulator

        self.kernel = kernel
        self.dt = dt
        self.rate = kernel.rate
        self.g0 = kernel.g0
        self.acc = ExponentialAccumulator(kernel, dt, theta0)
        self.acc_sq = ExponentialAccumulator(kernel, dt, theta0 * theta0)
        self.last = np.array(theta0, dtype=float)

    def stage(self, c: float, theta_stage: np.ndarray) -> np.ndarray:
        if c == 0.0:
            return self.acc.total()
        gc = self.g0 * math.exp(-self.rate * c * self.dt)
        return self.acc.partial_at(c) + 0.5 * c * self.dt * (gc * self.last + self.g0 * theta_stage)

    def append(self, theta: np.ndarray) -> None:
        self.acc.advance(theta)
        self.acc_sq.advance(theta * theta)
        self.last = np.array(theta, dtype=float)

    def snapshot(self) -> MemorySnapshot:
        conv = self.acc.total()
        conv_sq = self.acc_sq.total()
        a = self.rate
        return MemorySnapshot(conv, conv_sq, -a * conv, -a * conv_sq, self.acc.mass, -a * self.acc.mass)


class _QuadratureMemory:
    """Full-history trapezoid sums with kernel tables stored in reversed order."""

    def __init__(self, kernel: RelaxationKernel, dt: float, theta0: np.ndarray, capacity: int):
        self.kernel = kernel
        self.dt = dt
        self.modes = theta0.size
        self.steps = 0
        self.g0 = float(kernel.g(0.0))
        self._alloc(max(capacity, 16))
        self.hist[0] = theta0
        self._sums: dict[int, np.ndarray] = {}

    def _alloc(self, cap: int) -> None:
        old = getattr(self, "hist", None)
        self.cap = cap
        self.hist = np.zeros((cap + 1, self.modes))
        if old is not None:
            self.hist[: self.steps + 1] = old[: self.steps + 1]
        lags = self.dt * np.arange(cap, -1, -1, dtype=float)
        k = self.kernel
        # row c in (0, 1/2, 1): rev[c][i] = g((cap - i + c) dt)
        self.rev = np.stack([k.g(lags), k.g(lags + 0.5 * self.dt), k.g(lags + self.dt)])
        self.rev_d = np.asarray(k.dg(lags), dtype=float)

    def _window(self, table: np.ndarray) -> np.ndarray:
        n = self.steps
        return table[..., self.cap - n : self.cap + 1]

    def stage(self, c: float, theta_stage: np.ndarray) -> np.ndarray:
        n, dt = self.steps, self.dt
        row = {0.0: 0, 0.5: 1, 1.0: 2}.get(c)
        if row is None:
            raise ValueError("stage offsets are restricted to 0, 1/2 and 1")
        gtab = self._window(self.rev[row])
        h = self.hist[: n + 1]
        full = self._sums.get(row)
        if full is None:
            full = self._sums[row] = gtab @ h
        base = dt * full - 0.5 * dt * (gtab[0] * h[0] + gtab[-1] * h[-1])
        if n == 0:
            base = np.zeros(self.modes)
        if c == 0.0:
            return base
        return base + 0.5 * c * dt * (gtab[-1] * h[-1] + self.g0 * theta_stage)

    def append(self, theta: np.ndarray) -> None:
        if self.steps + 1 > self.cap:
            self._alloc(2 * self.cap)
        self.steps += 1
        self.hist[self.steps] = theta
        # the c=1 sum of the previous step is the c=0 sum of this one, less its newest term
        prev = self._sums.get(2)
        self._sums = {} if prev is None else {0: prev + self.g0 * self.hist[self.steps]}

    def snapshot(self) -> MemorySnapshot:
        n, dt = self.steps, self.dt
        if n == 0:
            z = np.zeros(self.modes)
            return MemorySnapshot(z, z.copy(), z.copy(), z.copy(), 0.0, 0.0)
        w = np.full(n + 1, dt)
        w[0] = w[-1] = 0.5 * dt
        g = w * self._window(self.rev[0])
        dg = w * self._window(self.rev_d)
        h = self.hist[: n + 1]
        h2 = h * h
        return MemorySnapshot(g @ h, g @ h2, dg @ h, dg @ h2, float(g.sum()), float(dg.sum()))


class HistoryTrace:
    """Full-step history of the theta coefficients and the memory sums built on it.

    ``method="recursive"`` (exponential kernels only) keeps O(1) accumulators;
    ``method="quadrature"`` keeps every snapshot and evaluates trapezoid sums
    directly. ``"auto"`` picks the recursive path whenever it applies.
    """

    def __init__(
        self,
        kernel: RelaxationKernel,
        dt: float,
        theta0: np.ndarray,
        method: Literal["auto", "recursive", "quadrature"] = "auto",
        capacity: int = 1024,
    ):
        theta0 = np.array(theta0, dtype=float)
        if method == "auto":
            method = "recursive" if kernel.family == "exponential" else "quadrature"
        if method == "recursive":
            self._engine = _RecursiveMemory(kernel, dt, theta0)
        elif method == "quadrature":
            self._engine = _QuadratureMemory(kernel, dt, theta0, capacity)
        else:
            raise ValueError(f"unknown memory method {method!r}")
        self.method = method
        self.kernel = kernel
        self.dt = dt
        self.steps = 0

    @property
    def t(self) -> float:
        return self.steps * self.dt

    def stage_convolution(self, c: float, theta_stage: np.ndarray) -> np.ndarray:
        """``(g * theta)(t_n + c dt)`` with ``theta(t_n + c dt) = theta_stage``."""
        return self._engine.stage(c, theta_stage)

    def append(self, theta: np.ndarray) -> None:
        self._engine.append(np.asarray(theta, dtype=float))
        self.steps += 1

    def snapshot(self) -> MemorySnapshot:
        return self._engine.snapshot()


# -- Galerkin operator -------------------------------------------------------------


@dataclass
class GalerkinSystem:
    """Linear part of the modal system plus the memory and delay gains.

    ``rhs(y, conv, z1) = A y + [0; mem_gain * conv - delay_gain * z1]`` on the
    flat layout of :func:`state_slices`.
    """

    n: int
    coeffs: object
    A: np.ndarray = field(init=False, repr=False)
    mem_gain: np.ndarray = field(init=False, repr=False)
    delay_gain: float = field(init=False)

    def __post_init__(self):
        self.A = assemble_operator(self.n, self.coeffs)
        k0 = np.pi * np.arange(self.n + 1)
        self.mem_gain = k0**2 / self.coeffs.rho3
        self.delay_gain = self.coeffs.mu2 / self.coeffs.rho3
        sl = state_slices(self.n)
        self._th_tt = sl["theta_t"]
        self._vel = slice(sl["phi_t"].start, sl["theta_t"].stop)
        self._pos = slice(0, sl["theta"].stop)

    def rhs(self, y: np.ndarray, conv: np.ndarray, z1: np.ndarray) -> np.ndarray:
        dy = self.A @ y
        dy[self._th_tt] += self.mem_gain * conv - self.delay_gain * z1
        return dy

    def accelerations(self, state: ModalState, conv: np.ndarray, z1: np.ndarray):
        """``(phi_tt, psi_tt, theta_tt)`` for a state and given memory/delay inputs."""
        dy = self.rhs(state.to_vector(), np.asarray(conv, float), np.asarray(z1, float))
        sl = state_slices(self.n)
        return dy[sl["phi_t"]], dy[sl["psi_t"]], dy[sl["theta_t"]]

    def stability_bound(self, safety: float = 2.8) -> float:
        """Largest RK4 step for the linear part (imaginary-axis extent ``~2.8``)."""
        lam = np.linalg.eigvals(self.A)
        # the memory term adds at most g(0) (k pi)^2 / rho3 * dt of stiffness per step
        return safety / float(np.max(np.abs(lam)))


def assemble_operator(n: int, c) -> np.ndarray:
    """Dense first-order operator of the modal system without memory and delay."""
    sl = state_slices(n)
    size = 6 * n + 2
    A = np.zeros((size, size))
    D = np.diag(wavenumbers(n))
    k0 = np.pi * np.arange(n + 1)
    Cs = cross_matrix(n)[:, 1:]  # sine x cosine (k >= 1)
    ph, ps, th = sl["phi"], sl["psi"], sl["theta"]
    pht, pst, tht = sl["phi_t"], sl["psi_t"], sl["theta_t"]
    A[ph, pht] = np.eye(n)
    A[ps, pst] = np.eye(n)
    A[th, tht] = np.eye(n + 1)
    # rho1 Phi_tt = -K D (D Phi + Cs^T Psi)
    A[pht, ph] = -c.K * D @ D / c.rho1
    A[pht, ps] = -c.K * D @ Cs.T / c.rho1
    # rho2 Psi_tt = -b D^2 Psi - K (Cs D Phi + Psi) + beta D theta_t(k >= 1)
    A[pst, ps] = (-c.b * D @ D - c.K * np.eye(n)) / c.rho2
    A[pst, ph] = -c.K * Cs @ D / c.rho2
    A[pst, slice(tht.start + 1, tht.stop)] = c.beta * D / c.rho2
    # rho3 theta_tt = -delta D0^2 theta - gamma D0 psi_t - mu1 theta_t
    A[tht, th] = -c.delta * np.diag(k0**2) / c.rho3
    A[slice(tht.start + 1, tht.stop), pst] = -c.gamma * D / c.rho3
    A[tht, tht] = -c.mu1 * np.eye(n + 1) / c.rho3
    return A


# -- auxiliary Dirichlet problem -------------------------------------------------


@dataclass(frozen=True)
class WField:
    """``w(x) = sum_k q_k c_k(x) + alpha x + beta0`` solving ``-w_xx = Psi_x``, ``w(0) = w(1) = 0``."""

    q: np.ndarray  # cosine coefficients, k = 0..n (q_0 = 0)
    alpha: float
    beta0: float

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = self.q.size - 1
        return self.q @ cosine_basis(n, x) + self.alpha * x + self.beta0

    def derivative(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = self.q.size - 1
        return -(self.q[1:] * wavenumbers(n)) @ sine_basis(n, x) + self.alpha

    def sine_pairing(self, f: np.ndarray) -> float:
        """``int_0^1 w(x) sum_j f_j s_j(x) dx`` in closed form."""
        n = f.size
        C = cross_matrix(n)
        m0 = C[:, 0]
        return float(f @ (C @ self.q) + self.alpha * f @ sine_first_moment(n) + self.beta0 * f @ m0)


def solve_w(psi: np.ndarray) -> WField:
    psi = np.asarray(psi, dtype=float)
    n = psi.size
    q = np.zeros(n + 1)
    q[1:] = psi / wavenumbers(n)
    p0 = _SQRT2 * q[1:].sum()
    p1 = _SQRT2 * (q[1:] * (-1.0) ** np.arange(1, n + 1)).sum()
    return WField(q, alpha=p0 - p1, beta0=-p0)


def endpoint_traces(state: ModalState) -> dict[str, tuple[float, float]]:
    """Diagnostic endpoint values ``(x=0, x=1)`` of ``Phi_x``, ``Psi_x`` and ``theta_t``."""
    n = state.n
    k = wavenumbers(n)
    sgn = (-1.0) ** np.arange(1, n + 1)

    def cos_series(coef):
        return float(_SQRT2 * coef.sum()), float(_SQRT2 * (coef * sgn).sum())

    th0 = state.theta_t[0]
    a, b = cos_series(state.theta_t[1:])
    return {
        "phi_x": cos_series(k * state.phi),
        "psi_x": cos_series(k * state.psi),
        "theta_t": (th0 + a, th0 + b),
    }


# -- projection ----------------------------------------------------------------


def project_initial(
    data: InitialData,
    n: int,
    kernel: RelaxationKernel,
    coeffs,
    dt: float,
    backend: Backend = "ringbuffer",
    m_rho: int | None = None,
    memory: Literal["auto", "recursive", "quadrature"] = "auto",
    capacity: int = 1024,
) -> tuple[ModalState, DelayField, HistoryTrace]:
    """L2-project the initial data and build the delay field and memory history.

    ``f0(x, s)`` (default: zero) supplies ``theta_t`` for ``s in [-tau, 0)``.
    """
    state = ModalState(
        n,
        project_sine(data.phi0, n),
        project_sine(data.phi1, n),
        project_sine(data.psi0, n),
        project_sine(data.psi1, n),
        project_cosine(data.theta0, n),
        project_cosine(data.theta1, n),
        0.0,
    )
    delay = DelayField(backend, n, coeffs.tau, dt, m_rho)
    if data.f0 is None:
        delay.fill(lambda s: np.zeros(n + 1), state.theta_t)
    else:
        def modal(s, f=data.f0):
            return project_cosine(lambda x: f(x, s), n)

        delay.fill(modal, state.theta_t)
    hist = HistoryTrace(kernel, dt, state.theta, method=memory, capacity=capacity)
    return state, delay, hist
