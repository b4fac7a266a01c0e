"""Physical constants of the beam/heat system and their structural checks."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

from .errors import (
    H1ViolationError,
    InvalidCoefficientError,
    OutsideTheoremError,
    OutsideTheoremWarning,
    StructuralConditionError,
)
from .kernels import RelaxationKernel

_REL_TOL = 1e-12
_POSITIVE = ("rho1", "rho2", "rho3", "K", "b", "delta", "tau", "xi")


@dataclass(frozen=True)
class Coefficients:
    rho1: float
    rho2: float
    rho3: float
    K: float
    b: float
    beta: float
    gamma: float
    delta: float
    mu1: float
    mu2: float
    tau: float
    xi: float
    lam: float
    theorem_mode: bool = True
    outside_theorem: bool = False

    def __post_init__(self):
        self.validate()

    @property
    def equal_weights(self) -> bool:
        return self.mu1 == self.mu2

    @property
    def upsilon(self) -> float:
        return min(self.gamma, self.beta)

    def validate(self) -> None:
        for name in _POSITIVE:
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidCoefficientError(f"{name} must be positive and finite, got {v!r}")
        for name in ("mu1", "mu2", "beta", "gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InvalidCoefficientError(f"{name} must be nonnegative, got {v!r}")
        if not self.theorem_mode:
            return
        if not (self.beta > 0 and self.gamma > 0 and self.mu1 > 0):
            raise InvalidCoefficientError("theorem mode needs beta, gamma, mu1 > 0")
        gamma = self.b * self.rho1 / self.K - self.rho2
        beta = self.delta - self.K * self.rho3 / self.rho1
        if not _close(gamma, self.gamma) or not _close(beta, self.beta):
            raise StructuralConditionError(
                f"b*rho1/K - rho2 = {gamma!r} vs gamma = {self.gamma!r}; "
                f"delta - K*rho3/rho1 = {beta!r} vs beta = {self.beta!r}"
            )
        if self.mu2 > self.mu1:
            raise OutsideTheoremError(f"mu2={self.mu2!r} exceeds mu1={self.mu1!r}")
        if not self.lam > 0:
            raise H1ViolationError(f"lambda = delta - gbar = {self.lam!r} must be positive")
        lo, hi = self.tau * self.mu2, self.tau * (2 * self.mu1 - self.mu2)
        if self.mu2 < self.mu1:
            if not lo < self.xi < hi:
                raise InvalidCoefficientError(f"xi={self.xi!r} must lie in ({lo!r}, {hi!r})")
        elif not _close(self.xi, lo):
            raise InvalidCoefficientError(f"xi must equal tau*mu2={lo!r} when mu1 == mu2")

    def as_dict(self) -> dict:
        return asdict(self)


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= _REL_TOL * max(abs(a), abs(b), 1.0)


def select_xi(mu1: float, mu2: float, tau: float, exploratory: bool = False) -> float:
    """Delay-energy weight: midpoint ``tau*mu1`` of ``(tau*mu2, tau*(2mu1-mu2))``,
    or ``tau*mu2`` when the weights are equal. ``mu2 = 0`` (no delayed
    feedback) gives ``tau*mu1``.

    With ``mu2 > mu1`` this raises unless ``exploratory`` is set, in which case
    ``tau*mu2`` is returned and an :class:`OutsideTheoremWarning` is emitted.
    """
    if not (mu1 > 0 and mu2 >= 0 and tau > 0):
        raise InvalidCoefficientError("mu1 and tau must be positive and mu2 nonnegative")
    if mu2 > mu1:
        if not exploratory:
            raise OutsideTheoremError(f"mu2={mu2!r} > mu1={mu1!r}: no decay guarantee")
        warnings.warn(f"mu2={mu2!r} > mu1={mu1!r}: outside the decay theorem", OutsideTheoremWarning)
        return tau * mu2
    if mu2 == mu1:
        return tau * mu2
    return tau * mu1


def dissipation_weights(c: Coefficients) -> tuple[float, float]:
    """``(mu1 - xi/2tau - mu2/2, xi/2tau - mu2/2)``, the friction and delay-trace weights."""
    return (
        c.mu1 - c.xi / (2 * c.tau) - c.mu2 / 2,
        c.xi / (2 * c.tau) - c.mu2 / 2,
    )


def m0(c: Coefficients) -> float:
    a, b = dissipation_weights(c)
    return min(c.beta * a, c.beta * b)


def build_theorem_coeffs(
    rho1: float,
    rho2: float,
    rho3: float,
    K: float,
    b: float,
    delta: float,
    mu1: float,
    mu2: float,
    tau: float,
    kernel: RelaxationKernel,
    xi: float | None = None,
) -> Coefficients:
    """Derive ``gamma``, ``beta``, ``lambda`` and ``xi`` so that the decay theorem applies."""
    for name, v in dict(rho1=rho1, rho2=rho2, rho3=rho3, K=K, b=b, delta=delta, mu1=mu1, tau=tau).items():
        if not (math.isfinite(v) and v > 0):
            raise InvalidCoefficientError(f"{name} must be positive, got {v!r}")
    if not (math.isfinite(mu2) and mu2 >= 0):
        raise InvalidCoefficientError(f"mu2 must be nonnegative, got {mu2!r}")
    gamma = b * rho1 / K - rho2
    beta = delta - K * rho3 / rho1
    if gamma <= 0 or beta <= 0:
        raise StructuralConditionError(
            f"derived gamma={gamma!r}, beta={beta!r}; both must be positive"
        )
    lam = delta - kernel.mass
    if not lam > 0:
        raise H1ViolationError(f"lambda = delta - gbar = {lam!r} must be positive")
    return Coefficients(
        rho1, rho2, rho3, K, b, beta, gamma, delta, mu1, mu2, tau,
        xi=select_xi(mu1, mu2, tau) if xi is None else xi,
        lam=lam,
    )


def exploratory_coeffs(
    *,
    rho1: float,
    rho2: float,
    rho3: float,
    K: float,
    b: float,
    beta: float,
    gamma: float,
    delta: float,
    mu1: float,
    mu2: float,
    tau: float,
    kernel: RelaxationKernel,
    xi: float | None = None,
) -> Coefficients:
    """Free coefficient set; relations of the decay theorem are not enforced."""
    outside = mu2 > mu1
    if xi is None:
        if mu1 > 0:
            xi = select_xi(mu1, mu2, tau, exploratory=True)
        else:
            xi = tau * max(mu1, mu2, 1.0)
    return Coefficients(
        rho1, rho2, rho3, K, b, beta, gamma, delta, mu1, mu2, tau,
        xi=xi,
        lam=delta - kernel.mass,
        theorem_mode=False,
        outside_theorem=outside,
    )
