"""Energy, dissipation balance, Lyapunov functionals and decay fitting.

All quantities are evaluated from modal coefficients. Products of two fields
on the same basis use Parseval; sine/cosine products use the closed-form cross
matrix; products weighted by ``q(x) = 2 - 4x`` use a Gauss-Legendre weighted
cross matrix. Evaluation is vectorised over the recorded rows of a
:class:`~timodecay.integrator.RunTrace`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from .coefficients import Coefficients, dissipation_weights, m0 as coeff_m0
from .discretization import (
    cross_matrix,
    sine_first_moment,
    state_slices,
    wavenumbers,
    weighted_cross_matrix,
)
from .errors import (
    ArityError,
    ConfigurationError,
    FitDomainError,
    H1ViolationError,
    SelectionFailureError,
    UndefinedRatioError,
)
from .kernels import RelaxationKernel

CP = 1.0 / math.pi**2
LARGE_MARGIN = 1.05
SMALL_MARGIN = 0.5

CSV_COLUMNS = (
    "t", "E", "dEdt", "balance_residual", "bound_slack",
    "I1", "I2", "I3", "I4", "I5", "I6", "I7", "J1", "J2", "L", "L_over_E",
)
COMPONENTS = ("I1", "I2", "I3", "I4", "I5", "I6", "I7", "J1", "J2")


# -- per-row building blocks ----------------------------------------------------


@dataclass
class Rows:
    """Modal arrays for ``R`` recorded rows (see :meth:`from_trace`)."""

    t: np.ndarray
    phi: np.ndarray
    phi_t: np.ndarray
    psi: np.ndarray
    psi_t: np.ndarray
    theta: np.ndarray
    theta_t: np.ndarray
    conv: np.ndarray
    conv_sq: np.ndarray
    dconv: np.ndarray
    dconv_sq: np.ndarray
    mass: np.ndarray
    dmass: np.ndarray
    z1: np.ndarray
    zint: np.ndarray
    zint_w: np.ndarray

    @property
    def n(self) -> int:
        return self.phi.shape[1]

    @classmethod
    def from_trace(cls, trace) -> "Rows":
        a = trace.arrays()
        sl = state_slices(trace.n)
        y = a["y"].reshape(len(trace), -1)
        return cls(
            a["times"],
            *(y[:, sl[k]] for k in ("phi", "phi_t", "psi", "psi_t", "theta", "theta_t")),
            a["conv"], a["conv_sq"], a["dconv"], a["dconv_sq"], a["mass"], a["dmass"],
            a["z1"], a["zint"], a["zint_w"],
        )

    @classmethod
    def single(cls, state, delay, hist) -> "Rows":
        snap = hist.snapshot()
        plain, weighted = delay.integrals()

        def r(v):
            return np.asarray(v, dtype=float)[None, ...]

        return cls(
            np.array([state.t]), r(state.phi), r(state.phi_t), r(state.psi), r(state.psi_t),
            r(state.theta), r(state.theta_t), r(snap.conv), r(snap.conv_sq), r(snap.dconv),
            r(snap.dconv_sq), np.array([snap.mass]), np.array([snap.dmass]),
            r(delay.value(0.0)), r(plain), r(weighted),
        )


@dataclass
class EnergyParts:
    """Squared norms per row: the eight building blocks of the energy."""

    phi_t: np.ndarray
    psi_t: np.ndarray
    shear: np.ndarray
    psi_x: np.ndarray
    theta_t: np.ndarray
    theta_x: np.ndarray
    circle: np.ndarray  # int (g o theta_x) dx
    dcircle: np.ndarray  # int (g' o theta_x) dx
    delay: np.ndarray  # int int z^2 drho dx
    z1: np.ndarray  # int z(x, 1)^2 dx
    theta_t_z1: np.ndarray  # int theta_t z(x, 1) dx


def energy_parts(rows: Rows) -> EnergyParts:
    n = rows.n
    k = wavenumbers(n)
    k0sq = (np.pi * np.arange(n + 1)) ** 2
    Cs = cross_matrix(n)[:, 1:]
    dphi = rows.phi * k
    shear = (dphi**2).sum(1) + (rows.psi**2).sum(1) + 2.0 * np.einsum("rk,rk->r", dphi, rows.psi @ Cs)
    th = rows.theta
    circle = (k0sq * (rows.mass[:, None] * th**2 - 2.0 * th * rows.conv + rows.conv_sq)).sum(1)
    dcircle = (k0sq * (rows.dmass[:, None] * th**2 - 2.0 * th * rows.dconv + rows.dconv_sq)).sum(1)
    return EnergyParts(
        phi_t=(rows.phi_t**2).sum(1),
        psi_t=(rows.psi_t**2).sum(1),
        shear=shear,
        psi_x=((rows.psi * k) ** 2).sum(1),
        theta_t=(rows.theta_t**2).sum(1),
        theta_x=(k0sq * th**2).sum(1),
        circle=circle,
        dcircle=dcircle,
        delay=rows.zint.sum(1),
        z1=(rows.z1**2).sum(1),
        theta_t_z1=(rows.theta_t * rows.z1).sum(1),
    )


def energy_from_parts(p: EnergyParts, t: np.ndarray, c: Coefficients, kernel: RelaxationKernel) -> np.ndarray:
    stiff = c.delta - kernel.G(t)
    if np.any(stiff < 0):
        raise H1ViolationError("delta - int_0^t g became negative")
    mech = c.rho1 * p.phi_t + c.rho2 * p.psi_t + c.K * p.shear + c.b * p.psi_x
    heat = c.rho3 * p.theta_t + stiff * p.theta_x + p.circle + c.xi * p.delay
    return 0.5 * c.gamma * mech + 0.5 * c.beta * heat


def energy(state, delay, hist, coeffs: Coefficients, kernel: RelaxationKernel) -> float:
    """Energy of one state with its delay field and memory history."""
    rows = Rows.single(state, delay, hist)
    return float(energy_from_parts(energy_parts(rows), rows.t, coeffs, kernel)[0])


# -- balance ------------------------------------------------------------------------


def _centered_rate(t: np.ndarray, v: np.ndarray) -> np.ndarray:
    if t.size < 3:
        raise ArityError("a centered derivative needs at least three recorded rows")
    return np.gradient(v, t, edge_order=2)


def balance_rhs(p: EnergyParts, t: np.ndarray, c: Coefficients, kernel: RelaxationKernel) -> np.ndarray:
    """Exact energy rate: memory, friction, delay coupling and delay-energy flux."""
    return (
        -0.5 * c.beta * kernel.g(t) * p.theta_x
        + 0.5 * c.beta * p.dcircle
        - c.beta * c.mu1 * p.theta_t
        - c.beta * c.mu2 * p.theta_t_z1
        + 0.5 * c.beta * c.xi / c.tau * (p.theta_t - p.z1)
    )


def dissipation_bound(p: EnergyParts, t: np.ndarray, c: Coefficients, kernel: RelaxationKernel) -> np.ndarray:
    """Young-relaxed upper bound of the energy rate (nonpositive for admissible weights)."""
    w_fric, w_delay = dissipation_weights(c)
    return (
        -0.5 * c.beta * kernel.g(t) * p.theta_x
        + 0.5 * c.beta * p.dcircle
        - c.beta * w_fric * p.theta_t
        - c.beta * w_delay * p.z1
    )


def energy_rate_residual(trace, coeffs: Coefficients, kernel: RelaxationKernel) -> np.ndarray:
    """``|dE/dt - balance|`` per row with a centered (second-order) derivative."""
    rows = Rows.from_trace(trace) if not isinstance(trace, Rows) else trace
    p = energy_parts(rows)
    E = energy_from_parts(p, rows.t, coeffs, kernel)
    return np.abs(_centered_rate(rows.t, E) - balance_rhs(p, rows.t, coeffs, kernel))


def dissipation_bound_slack(trace, coeffs: Coefficients, kernel: RelaxationKernel) -> np.ndarray:
    """``bound - dE/dt`` per row; nonnegative up to discretisation error."""
    rows = Rows.from_trace(trace) if not isinstance(trace, Rows) else trace
    p = energy_parts(rows)
    E = energy_from_parts(p, rows.t, coeffs, kernel)
    return dissipation_bound(p, rows.t, coeffs, kernel) - _centered_rate(rows.t, E)


def monotone_violations(E: np.ndarray, rel_slack: float = 1e-6) -> int:
    """Number of recorded steps where ``E`` rises by more than ``rel_slack * E(0)``."""
    if E.size < 2:
        return 0
    return int(np.count_nonzero(np.diff(E) > rel_slack * E[0]))


# -- Lyapunov components ----------------------------------------------------------------


def lyapunov_components(rows: Rows, c: Coefficients) -> dict[str, np.ndarray]:
    """``I1..I7, J1, J2`` for every row."""
    n = rows.n
    k = wavenumbers(n)
    C = cross_matrix(n)
    Cs = C[:, 1:]
    m0col = C[:, 0]
    m1 = sine_first_moment(n)
    Q = weighted_cross_matrix(n)
    Qs = Q[:, 1:]
    P, Pt, S, St = rows.phi, rows.phi_t, rows.psi, rows.psi_t
    T, Tt, CV = rows.theta, rows.theta_t, rows.conv

    def dot(a, b):
        return np.einsum("rk,rk->r", a, b)

    # auxiliary Dirichlet multiplier w = sum q_k c_k + alpha x + beta0
    q = S / k
    p0 = math.sqrt(2.0) * q.sum(1)
    p1 = math.sqrt(2.0) * (q * (-1.0) ** np.arange(1, n + 1)).sum(1)
    alpha, beta0 = p0 - p1, -p0
    phi_t_w = dot(Pt, q @ Cs.T) + alpha * (Pt @ m1) + beta0 * (Pt @ m0col)
    I1 = c.rho2 * dot(St, S) + c.rho1 * phi_t_w - c.beta * dot(k * T[:, 1:], S)

    I2 = c.rho3 * dot(Tt, T) + c.gamma * dot(k * S, T[:, 1:]) + 0.5 * c.mu1 * dot(T, T)
    I3 = -c.rho1 * dot(Pt, P) - c.rho2 * dot(St, S)

    dP = k * P
    psi_t_phi_x = dot(St, dP @ Cs.T)
    theta_x_phi_x = -dot(k * T[:, 1:], dP @ Cs.T)
    conv_x_phi_x = -dot(k * CV[:, 1:], dP @ Cs.T)
    I4 = (
        c.rho2 * (psi_t_phi_x + dot(St, S))
        + (c.rho2 + c.gamma) * dot(Pt, (k * S) @ Cs.T)
        + c.rho3 * dot(Pt, Tt @ C.T)
        + (c.K * c.rho3 / c.rho1 + c.beta) * theta_x_phi_x
        - conv_x_phi_x
    )

    I5 = c.rho2 * c.rho3 * (Tt[:, 0] * (St @ m1) + dot(Tt[:, 1:] / k, St))
    I6 = rows.zint_w.sum(1)
    I7 = -c.rho3 * dot(Tt, rows.mass[:, None] * T - CV)

    J1 = c.rho1 * dot(Pt, dP @ Qs.T)
    a = c.rho3 * Tt.copy()
    a[:, 1:] += c.gamma * k * S
    bsin = -k * (c.delta * T[:, 1:] - CV[:, 1:])
    J2 = c.gamma * c.rho2 * c.b * dot(St, (k * S) @ Qs.T) + (c.beta * c.b / c.delta) * dot(bsin, a @ Q.T)
    return dict(I1=I1, I2=I2, I3=I3, I4=I4, I5=I5, I6=I6, I7=I7, J1=J1, J2=J2)


# -- constant selection -------------------------------------------------------------------


@dataclass(frozen=True)
class LyapunovConstants:
    N: float
    N1: float
    N2: float
    N5: float
    N6: float
    N7: float
    eps1: float
    eps2: float
    eps4: float
    eps7: float
    eta1: float
    eta2: float
    upsilon: float
    Cp: float
    g0_cut: float
    case: Literal["strict", "equal"]
    c_delay: float
    braces: dict = field(default_factory=dict)
    C: float = 0.0
    C3: float = 0.0
    M0: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def _shared(c: Coefficients, kernel: RelaxationKernel) -> dict:
    gbar = kernel.mass
    gz = kernel.g_at_zero
    ups = c.upsilon
    kf = 1.0 / c.K + c.rho3 * c.K / (c.rho1**2 * c.b)
    eps4 = min(
        c.rho1 / 16.0 / (1.0 + c.rho1 * kf),
        3.0 * ups * c.K / 8.0 / (6.0 * ups * c.K * kf + 2.0 * ups + c.K**2 / 2.0),
    )
    c1 = 4.0 * c.beta * c.b / c.delta * (2.0 * gbar**2 + c.delta**2) + 2.0 * c.beta**2 * c.b**2 / eps4 * (
        gz**2 * (c.gamma**2 + c.rho3**2) / c.delta**2
        + (c.mu1**2 + c.mu2**2) * (1.0 + gbar**2 / c.delta**2)
    )
    return dict(gbar=gbar, gz=gz, ups=ups, kf=kf, eps4=eps4, C1=c1)


def _brace_values(c: Coefficients, kernel: RelaxationKernel, k: dict) -> dict[str, float]:
    """Coefficients of the Lyapunov rate estimate; all must be >= 0 except ``C_g``."""
    s = _shared(c, kernel)
    ups, kf, eps4, gbar, gz, C1 = s["ups"], s["kf"], s["eps4"], s["gbar"], s["gz"], s["C1"]
    N, N1, N2, N5 = k["N"], k["N1"], k["N2"], k["N5"]
    eps1, eps2, eta1 = k["eps1"], k["eps2"], k["eta1"]
    equal = k["case"] == "equal"
    N6, N7 = (k["N6"], k["N7"]) if equal else (1.0, 0.0)
    eps7, eta2 = (k["eps7"], k["eta2"]) if equal else (0.0, 1.0)
    cd = k["c_delay"]
    m0v = coeff_m0(c)
    mu1, mu2 = c.mu1, c.mu2

    b = {}
    b["phi_t"] = c.rho1 * ups / 4 - N1 * eps1 - 2 * eps4 * ups * (1 + c.rho1 * kf)
    b["psi_t"] = (
        c.rho2 * c.gamma * N5 / 4
        - N1 * (1.5 * c.rho2 + c.rho1**2 * CP / (4 * eps1))
        - N7 * eps7
        - 0.75 * c.rho2 * ups
        - c.gamma * c.rho2 * c.b / eps4
    )
    b["shear"] = 0.75 * ups * c.K - 2 * eps2 * CP * N5 - eps4 * (6 * ups * c.K * kf + 2 * ups + c.K**2 / 2)
    b["psi_x"] = (
        N1 * c.b
        - eps2 * (N2 + N5 * (1 + CP + 2 * CP**2))
        - (2 * c.b**2 * c.gamma + c.gamma**2 * c.b**2 / (4 * eps4**2) + eps4) / (2 * eps4)
        - eps4 * ups * c.K * (1 + 6 * CP) * kf
        - 3 * c.b * ups / 8
        - eps4 * ups * (1 + 2 * CP)
    )
    t5 = N5 * (
        c.beta * c.rho3
        + (2 if equal else 1) * c.rho2 * mu1**2 / c.gamma
        + c.rho3**2 / (4 * eps2) * (2 * c.K**2 + c.b**2)
        + eta1 * (c.rho3**2 + c.rho3 * c.beta**2 / c.b)
    )
    common_t = (
        N2 * (c.rho3 + c.gamma**2 / (4 * eps2))
        + ups / (4 * eps4) * (c.delta**2 + mu1**2)
        + c.beta * c.b * c.rho3 / eps4
        + 1.25
        + c.beta**2 * ups / (8 * c.b)
        + t5
    )
    if equal:
        b["theta_t"] = N7 * (c.rho3 * k["g0_cut"] - eta2) - common_t - N6 / c.tau
    else:
        b["theta_t"] = N * m0v - common_t - 1.0 / c.tau
    b["theta_x"] = (
        c.lam * N2 / 2
        - N1 * c.beta**2 / (2 * c.rho2)
        - N7 * eps7 * (1 + gbar**2)
        - (ups * gz**2 + C1) / (2 * eps4)
        - N5 * c.rho2 / c.gamma * (c.delta**2 + 2 * gbar**2)
    )
    if equal:
        c2 = gbar / (4 * eps7) * (c.delta**2 + c.gamma**2 + 4 * eps7**2 + 2 + mu2**2 * CP) + mu1**2 * CP * gbar / (
            2 * eta2
        )
        b["C_g"] = (
            N2 * gbar / (2 * c.lam)
            + c2
            + c.beta * c.b * gbar / (eps4**2 * c.delta**2) * (4 * c.delta * eps4 + 2 * c.beta * c.b * mu1**2)
            + 2 * c.rho2 * gbar * N5 / c.gamma
        )
        b["gprime"] = (
            c.beta * N / 2
            - c.rho3**2 * gz * CP * N7 / (2 * eta2)
            - ups * gz / (2 * eps4)
            - gz * c.b**2 * c.beta**2 * (c.gamma**2 + c.rho3**2) / (eps4**2 * c.delta**2)
        )
        b["z1"] = (
            N6 * cd / c.tau
            - mu2**2 * N2 * CP / c.lam
            - N7 * eps7
            - mu2**2 * ups / (4 * eps4)
            - 0.75
            - 2 * c.rho2 * mu2**2 * N5 / c.gamma
        )
    else:
        b["C_g"] = (
            N2 * gbar / c.lam
            + c.beta * c.b * gbar / (eps4**2 * c.delta**2) * (4 * c.delta * eps4 + c.beta * c.b * (mu1**2 + mu2**2))
            + 2 * c.rho2 * gbar * N5 / c.gamma
        )
        b["gprime"] = (
            c.beta * N / 2
            - ups * gz / (2 * eps4)
            - gz * c.b**2 * c.beta**2 * (c.gamma**2 + c.rho3**2) / (eps4**2 * c.delta**2)
        )
        b["z1"] = (
            N * m0v
            + cd / c.tau
            - mu2**2 * N2 * CP / c.lam
            - mu2**2 * ups / (4 * eps4)
            - 0.75
            - 2 * c.rho2 * mu2**2 * N5 / c.gamma
        )
    b["delay_energy"] = 2.0 * N6 * cd  # coefficient of int int z^2 via I6 >= c int int z^2
    return b


def _equivalence_bound(c: Coefficients, kernel: RelaxationKernel, k: dict) -> float:
    """Crude ``M0`` with ``|L - N E| <= M0 E`` (theta assumed mean-free)."""
    gbar = kernel.mass
    equal = k["case"] == "equal"
    w = dict(
        I1=k["N1"], I2=k["N2"], I3=c.upsilon / 4, I4=c.upsilon, I5=k["N5"],
        I6=k["N6"] if equal else 1.0, I7=k["N7"] if equal else 0.0,
        J1=c.upsilon * k["eps4"] * (1 / c.K + c.rho3 * c.K / (c.rho1**2 * c.b)),
        J2=1.0 / (2 * k["eps4"]),
    )
    # columns: phi_t, psi_t, shear, psi_x, theta_t, theta_x, circle, delay
    cp = CP
    phix = np.array([0, 0, 2, 2 * cp, 0, 0, 0, 0], float)  # ||Phi_x||^2 <= 2 shear + 2 Cp ||Psi_x||^2
    e = np.eye(8)
    half = 0.5
    rows = {
        "I1": c.rho2 * half * (e[1] + cp * e[3]) + c.rho1 * half * (e[0] + cp**2 * e[3]) + c.beta * half * (e[5] + cp * e[3]),
        "I2": c.rho3 * half * (e[4] + cp * e[5]) + c.gamma * half * (e[3] + cp * e[5]) + c.mu1 * half * cp * e[5],
        "I3": c.rho1 * half * (e[0] + cp * phix) + c.rho2 * half * (e[1] + cp * e[3]),
        "I4": c.rho2 * half * (e[1] + e[2])
        + (c.rho2 + c.gamma) * half * (e[3] + e[0])
        + c.rho3 * half * (e[4] + e[0])
        + (c.K * c.rho3 / c.rho1 + c.beta) * half * (e[5] + phix)
        + half * (2 * gbar**2 * e[5] + 2 * gbar * e[6] + phix),
        "I5": c.rho2 * c.rho3 * half * (0.5 * e[4] + e[1]),
        "I6": e[7],
        "I7": c.rho3 * half * (e[4] + gbar * cp * e[6]),
        "J1": c.rho1 * (e[0] + phix),
        "J2": c.gamma * c.rho2 * c.b * (e[1] + e[3])
        + (c.beta * c.b / c.delta) * (2 * c.rho3**2 * e[4] + 2 * c.gamma**2 * e[3] + 2 * c.delta**2 * e[5] + 4 * gbar**2 * e[5] + 4 * gbar * e[6]),
    }
    X = sum(abs(w[name]) * rows[name] for name in rows)
    W = np.array([
        c.gamma * c.rho1, c.gamma * c.rho2, c.gamma * c.K, c.gamma * c.b,
        c.beta * c.rho3, c.beta * c.lam, c.beta, c.beta * c.xi,
    ]) / 2.0
    return float(np.max(X / W))


def _rate_constants(c: Coefficients, b: dict) -> tuple[float, float]:
    """``C`` and ``C3`` with ``rate <= -C E + C3 int (g o theta_x)``."""
    W = {
        "phi_t": c.gamma * c.rho1 / 2, "psi_t": c.gamma * c.rho2 / 2, "shear": c.gamma * c.K / 2,
        "psi_x": c.gamma * c.b / 2, "theta_t": c.beta * c.rho3 / 2, "theta_x": c.beta * c.delta / 2,
        "delay_energy": c.beta * c.xi / 2,
    }
    C = min(b[key] / W[key] for key in W)
    return C, b["C_g"] + C * c.beta / 2


def select_constants(
    coeffs: Coefficients,
    kernel: RelaxationKernel,
    t0: float = 1.0,
    large: float = LARGE_MARGIN,
    small: float = SMALL_MARGIN,
) -> LyapunovConstants:
    """Pick the Lyapunov weights in dependency order and verify every brace.

    Thresholds of the form "sufficiently large" are multiplied by ``large``
    and ceilings of the form "sufficiently small" by ``small``; ``eps4`` and
    ``eps1`` take their bounds exactly.
    """
    c = coeffs
    if c.mu2 > c.mu1:
        raise ConfigurationError("constant selection needs mu2 <= mu1", "coefficients.mu2")
    case = "equal" if c.equal_weights else "strict"
    s = _shared(c, kernel)
    ups, kf, eps4, gbar, gz, C1 = s["ups"], s["kf"], s["eps4"], s["gbar"], s["gz"], s["C1"]
    cd = math.exp(-2.0 * c.tau)
    g0_cut = float(kernel.G(t0))
    if case == "equal" and not g0_cut > 0:
        raise ConfigurationError("equal weights need t0 > 0 with positive kernel mass on [0, t0]", "experiment.t0")

    rhs41 = (
        (2 * c.b**2 * c.gamma + c.gamma**2 * c.b**2 / (4 * eps4**2) + eps4) / (2 * eps4)
        + eps4 * c.K * ups * (1 + 6 * CP) * kf
        + 3 * c.b * ups / 8
        + eps4 * ups * (1 + 2 * CP)
    )
    N1 = large * 2.0 / c.b * rhs41
    eps1 = c.rho1 * ups / (16 * N1)
    N5 = large * 8.0 / (c.rho2 * c.gamma) * (
        N1 * (1.5 * c.rho2 + c.rho1**2 * CP / (4 * eps1)) + c.gamma * c.rho2 * c.b / eps4 + 0.75 * c.rho2 * ups
    )
    eta1 = N5 * eps4 / ups
    N2 = large * 4.0 / c.lam * (
        N1 * c.beta**2 / (2 * c.rho2) + (ups * gz**2 + C1) / (2 * eps4) + N5 * c.rho2 / c.gamma * (c.delta**2 + 2 * gbar**2)
    )
    eps2 = small * min(N1 * c.b / (2 * (N2 + N5 * (1 + CP + 2 * CP**2))), 3 * c.K * ups / (16 * N5 * CP))

    k = dict(
        N=0.0, N1=N1, N2=N2, N5=N5, N6=1.0, N7=0.0, eps1=eps1, eps2=eps2, eps4=eps4,
        eps7=0.0, eta1=eta1, eta2=0.0, case=case, c_delay=cd, g0_cut=g0_cut,
    )
    if case == "equal":
        mu = c.mu1
        N6 = large * 2 * c.tau / cd * (N2 * mu**2 * CP / c.lam + mu**2 * ups / (4 * eps4) + 0.75 + 2 * c.rho2 * mu**2 * N5 / c.gamma)
        t5 = N5 * (
            c.beta * c.rho3 + 2 * c.rho2 * mu**2 / c.gamma + c.rho3**2 / (4 * eps2) * (2 * c.K**2 + c.b**2)
            + eta1 * (c.rho3**2 + c.rho3 * c.beta**2 / c.b)
        )
        rest = (
            N2 * (c.rho3 + c.gamma**2 / (4 * eps2)) + ups * (c.delta**2 + mu**2) / (4 * eps4)
            + c.beta * c.b * c.rho3 / eps4 + 1.25 + N6 / c.tau + c.beta**2 * ups / (8 * c.b) + t5
        )
        N7 = large * 2.0 / (c.rho3 * g0_cut) * (rest + 0.125)
        eta2 = 1.0 / (4 * N7)
        eps7 = small * min(N6 * cd / (2 * c.tau * N7), c.rho2 * c.gamma * N5 / (8 * N7), c.lam * N2 / (4 * N7 * (1 + gbar**2)))
        k.update(N6=N6, N7=N7, eta2=eta2, eps7=eps7)

    # N: smallest value making the N-dependent braces nonnegative and L equivalent to E
    probe = _brace_values(c, kernel, dict(k, N=0.0))
    need = [0.0]
    if case == "strict":
        m0v = coeff_m0(c)
        need += [-probe["theta_t"] / m0v, -probe["z1"] / m0v]
    need.append(-probe["gprime"] * 2.0 / c.beta)
    M0 = _equivalence_bound(c, kernel, k)
    need.append(M0)
    k["N"] = large * max(need)

    braces = _brace_values(c, kernel, k)
    for name, value in braces.items():
        if name != "C_g" and not value >= 0:
            raise SelectionFailureError(name, value)
    C, C3 = _rate_constants(c, braces)
    return LyapunovConstants(
        N=k["N"], N1=N1, N2=N2, N5=N5, N6=k["N6"], N7=k["N7"], eps1=eps1, eps2=eps2, eps4=eps4,
        eps7=k["eps7"], eta1=eta1, eta2=k["eta2"], upsilon=ups, Cp=CP, g0_cut=g0_cut, case=case,
        c_delay=cd, braces=braces, C=C, C3=C3, M0=M0,
    )


def lyapunov_L(components: dict, constants: LyapunovConstants, coeffs: Coefficients, E) -> np.ndarray:
    """Weighted sum ``N E + sum_i w_i I_i + w_J1 J1 + w_J2 J2``."""
    case = "equal" if coeffs.equal_weights else "strict"
    if constants.case != case:
        raise ConfigurationError(f"constants were selected for the {constants.case} case, coefficients are {case}")
    k = constants
    ups = coeffs.upsilon
    kf = 1.0 / coeffs.K + coeffs.rho3 * coeffs.K / (coeffs.rho1**2 * coeffs.b)
    L = (
        k.N * np.asarray(E, dtype=float)
        + k.N1 * components["I1"]
        + k.N2 * components["I2"]
        + ups / 4 * components["I3"]
        + ups * components["I4"]
        + k.N5 * components["I5"]
        + (k.N6 if case == "equal" else 1.0) * components["I6"]
        + ups * k.eps4 * kf * components["J1"]
        + components["J2"] / (2 * k.eps4)
    )
    if case == "equal":
        L = L + k.N7 * components["I7"]
    return L


def equivalence_estimate(L, E) -> dict[str, float]:
    """``m_hat = min L/E`` and ``M_hat = max L/E`` over rows with ``E > 0``."""
    L = np.asarray(L, dtype=float)
    E = np.asarray(E, dtype=float)
    mask = E > 0
    if not np.any(mask):
        raise UndefinedRatioError("energy vanishes on every row; L/E is undefined")
    r = L[mask] / E[mask]
    return {"m_hat": float(r.min()), "M_hat": float(r.max())}


def lyapunov_rate_slack(
    t: np.ndarray, L: np.ndarray, E: np.ndarray, circle: np.ndarray, constants: LyapunovConstants
) -> np.ndarray:
    """``(-C E + C3 int g o theta_x) - dL/dt`` per row (centered derivative)."""
    return -constants.C * E + constants.C3 * circle - _centered_rate(t, L)


# -- decay fit -----------------------------------------------------------------------------


@dataclass(frozen=True)
class DecayFit:
    A: float
    omega: float
    r2: float
    t0: float
    X: np.ndarray = field(repr=False, compare=False, default_factory=lambda: np.zeros(0))

    def summary(self) -> dict:
        return {"A": self.A, "omega": self.omega, "r2": self.r2, "t0": self.t0}


def fit_decay(t, E, kernel: RelaxationKernel | None, t0: float, t1: float | None = None) -> DecayFit:
    """Least squares of ``log E`` on ``X = int_{t0}^t zeta`` over ``t0 <= t <= t1``.

    Without a kernel ``zeta = 1``.
    """
    t = np.asarray(t, dtype=float)
    E = np.asarray(E, dtype=float)
    mask = t >= t0 - 1e-12
    if t1 is not None:
        mask &= t <= t1 + 1e-12
    tw, Ew = t[mask], E[mask]
    if tw.size < 3:
        raise FitDomainError("fit window holds fewer than three samples")
    if np.any(~np.isfinite(Ew)) or np.any(Ew <= 0):
        raise FitDomainError("energy must be positive and finite on the fit window")
    X = (tw - t0) if kernel is None else np.asarray(kernel.zeta_integral(t0, tw), dtype=float)
    y = np.log(Ew)
    slope, intercept = np.polyfit(X, y, 1)
    resid = y - (slope * X + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(math.exp(intercept)), float(-slope), r2, float(t0), X)


# -- full trace ------------------------------------------------------------------------------


@dataclass
class FunctionalTrace:
    """Per-row functional columns plus the energy building blocks."""

    columns: dict[str, np.ndarray]
    parts: EnergyParts
    constants: LyapunovConstants | None = None

    def rows(self):
        cols = [self.columns[name] for name in CSV_COLUMNS]
        for i in range(cols[0].size):
            yield [float(col[i]) for col in cols]


def evaluate_trace(
    trace,
    coeffs: Coefficients,
    kernel: RelaxationKernel,
    constants: LyapunovConstants | None = None,
) -> FunctionalTrace:
    """Compute every CSV column for a run trace.

    ``L`` and ``L_over_E`` are ``nan`` when no constants are given.
    """
    rows = Rows.from_trace(trace)
    p = energy_parts(rows)
    E = energy_from_parts(p, rows.t, coeffs, kernel)
    if rows.t.size >= 3:
        dE = _centered_rate(rows.t, E)
    else:
        dE = np.full_like(E, np.nan)
    comps = lyapunov_components(rows, coeffs)
    if constants is not None:
        L = lyapunov_L(comps, constants, coeffs, E)
    else:
        L = np.full_like(E, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(E > 0, L / np.where(E > 0, E, 1.0), np.nan)
    cols = dict(
        t=rows.t,
        E=E,
        dEdt=dE,
        balance_residual=np.abs(dE - balance_rhs(p, rows.t, coeffs, kernel)),
        bound_slack=dissipation_bound(p, rows.t, coeffs, kernel) - dE,
        L=L,
        L_over_E=ratio,
    )
    cols.update(comps)
    return FunctionalTrace(cols, p, constants)
