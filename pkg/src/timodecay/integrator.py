"""Fixed-step RK4 advancement of the modal system with memory and delay."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .coefficients import Coefficients
from .discretization import (
    Backend,
    DelayField,
    GalerkinSystem,
    HistoryTrace,
    InitialData,
    ModalState,
    delay_steps,
    project_initial,
    state_slices,
)
from .errors import DivergenceError, StepSizeError
from .functionals import energy
from .kernels import RelaxationKernel

log = logging.getLogger(__name__)

GROWTH_LIMIT = 1e8


@dataclass(frozen=True)
class SimConfig:
    n: int = 16
    dt: float = 1e-3
    t_end: float = 10.0
    backend: Backend = "ringbuffer"
    record_stride: int = 1
    seed: int = 0
    m_rho: int | None = None
    memory: Literal["auto", "recursive", "quadrature"] = "auto"
    progress_every: float = 0.0  # simulated time between progress lines; 0 disables

    def __post_init__(self):
        if not (isinstance(self.n, int) and self.n >= 1):
            raise ValueError("n must be a positive integer")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if not self.t_end >= 0:
            raise ValueError("t_end must be nonnegative")
        if not (isinstance(self.record_stride, int) and self.record_stride >= 1):
            raise ValueError("record_stride must be a positive integer")

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class RunTrace:
    """Recorded rows of a run: states, memory sums and delay integrals.

    Row ``i`` holds the flat state vector ``y[i]`` (layout of
    :func:`~timodecay.discretization.state_slices`), the memory sums of
    :class:`~timodecay.discretization.MemorySnapshot`, the delayed slice
    ``z1[i] = z(., 1)`` and the per-mode delay integrals ``zint`` (plain) and
    ``zint_w`` (weighted by ``exp(-2 tau rho)``).
    """

    n: int
    dt: float
    stride: int
    times: list = field(default_factory=list)
    y: list = field(default_factory=list)
    conv: list = field(default_factory=list)
    conv_sq: list = field(default_factory=list)
    dconv: list = field(default_factory=list)
    dconv_sq: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    dmass: list = field(default_factory=list)
    z1: list = field(default_factory=list)
    zint: list = field(default_factory=list)
    zint_w: list = field(default_factory=list)
    error: str | None = None
    last_finite_time: float | None = None

    def __len__(self) -> int:
        return len(self.times)

    def record(self, t: float, y: np.ndarray, hist: HistoryTrace, delay: DelayField) -> None:
        snap = hist.snapshot()
        plain, weighted = delay.integrals()
        self.times.append(t)
        self.y.append(np.array(y))
        self.conv.append(np.array(snap.conv))
        self.conv_sq.append(np.array(snap.conv_sq))
        self.dconv.append(np.array(snap.dconv))
        self.dconv_sq.append(np.array(snap.dconv_sq))
        self.mass.append(snap.mass)
        self.dmass.append(snap.dmass)
        self.z1.append(np.array(delay.value(0.0)))
        self.zint.append(plain)
        self.zint_w.append(weighted)

    def arrays(self) -> dict[str, np.ndarray]:
        """Column-stacked view of every recorded field."""
        keys = ("times", "y", "conv", "conv_sq", "dconv", "dconv_sq", "mass", "dmass", "z1", "zint", "zint_w")
        return {k: np.asarray(getattr(self, k), dtype=float) for k in keys}

    def state(self, i: int) -> ModalState:
        return ModalState.from_vector(self.n, self.y[i], self.times[i])

    def field(self, name: str) -> np.ndarray:
        """Stacked modal coefficients of one field (``phi``, ``psi_t``, ...)."""
        sl = state_slices(self.n)[name]
        return np.asarray(self.y)[:, sl]


class Stepper:
    """Owns the state, delay field and history of one run and advances them."""

    def __init__(
        self,
        system: GalerkinSystem,
        state: ModalState,
        delay: DelayField,
        hist: HistoryTrace,
        dt: float,
    ):
        if delay.lag_steps != delay_steps(delay.tau, dt):
            raise StepSizeError("delay field was built for a different dt")
        self.system = system
        self.y = state.to_vector()
        self.delay = delay
        self.hist = hist
        self.dt = dt
        self.k = 0
        self.t0 = state.t
        sl = state_slices(state.n)
        self._th = sl["theta"]
        self._tht = sl["theta_t"]
        self._scale = float(np.linalg.norm(self.y)) + 1.0

    @property
    def t(self) -> float:
        return self.t0 + self.k * self.dt

    def _f(self, y: np.ndarray, c: float) -> np.ndarray:
        conv = self.hist.stage_convolution(c, y[self._th])
        return self.system.rhs(y, conv, self.delay.value(c))

    def step(self) -> np.ndarray:
        y, h = self.y, self.dt
        k1 = self._f(y, 0.0)
        k2 = self._f(y + 0.5 * h * k1, 0.5)
        k3 = self._f(y + 0.5 * h * k2, 0.5)
        k4 = self._f(y + h * k3, 1.0)
        y_new = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y_new)):
            raise DivergenceError("non-finite values in RK4 stage", self.t)
        if float(np.linalg.norm(y_new)) > GROWTH_LIMIT * self._scale:
            raise DivergenceError(f"state norm grew beyond {GROWTH_LIMIT:g} x its initial size", self.t)
        self.hist.append(y_new[self._th])
        self.delay.advance(y_new[self._tht])
        self.y = y_new
        self.k += 1
        return y_new

    def state(self) -> ModalState:
        return ModalState.from_vector(self.system.n, self.y, self.t)


def step(
    state: ModalState,
    delay: DelayField,
    hist: HistoryTrace,
    coeffs: Coefficients,
    kernel: RelaxationKernel,
    dt: float,
    system: GalerkinSystem | None = None,
) -> tuple[ModalState, DelayField, HistoryTrace]:
    """Advance one RK4 step; ``delay`` and ``hist`` are updated in place and returned."""
    system = system or GalerkinSystem(state.n, coeffs)
    stepper = Stepper(system, state, delay, hist, dt)
    stepper.step()
    return stepper.state(), delay, hist


def run(
    sim: SimConfig,
    coeffs: Coefficients,
    kernel: RelaxationKernel,
    initial: InitialData,
) -> RunTrace:
    """Integrate to ``sim.t_end``, recording every ``record_stride``-th step.

    A divergence stops the run; the partial trace is returned with ``error``
    and ``last_finite_time`` set.
    """
    delay_steps(coeffs.tau, sim.dt)
    steps = sim.steps
    state, delay, hist = project_initial(
        initial,
        sim.n,
        kernel,
        coeffs,
        sim.dt,
        backend=sim.backend,
        m_rho=sim.m_rho,
        memory=sim.memory,
        capacity=steps + 1,
    )
    system = GalerkinSystem(sim.n, coeffs)
    bound = system.stability_bound()
    if sim.dt > bound:
        raise StepSizeError(f"dt={sim.dt!r} exceeds the RK4 stability bound {bound:.3g} for n={sim.n}")
    stepper = Stepper(system, state, delay, hist, sim.dt)
    trace = RunTrace(sim.n, sim.dt, sim.record_stride)
    trace.record(0.0, stepper.y, hist, delay)
    every = max(1, int(round(sim.progress_every / sim.dt))) if sim.progress_every > 0 else 0
    for k in range(1, steps + 1):
        try:
            stepper.step()
        except DivergenceError as exc:
            log.warning("run stopped: %s", exc)
            trace.error = str(exc)
            trace.last_finite_time = exc.last_finite_time
            return trace
        if k % sim.record_stride == 0:
            trace.record(k * sim.dt, stepper.y, hist, delay)
        if every and k % every == 0:
            log.info("t=%.6g E=%.9g", k * sim.dt, energy(stepper.state(), delay, hist, coeffs, kernel))
    return trace
