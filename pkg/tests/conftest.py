from __future__ import annotations

import numpy as np
import pytest

from timodecay.coefficients import build_theorem_coeffs, exploratory_coeffs
from timodecay.discretization import InitialData
from timodecay.kernels import exponential_kernel


@pytest.fixture(scope="session")
def exp_kernel():
    return exponential_kernel(1.0, 2.0)


@pytest.fixture(scope="session")
def strict_coeffs(exp_kernel):
    # rho = K = 1, b = delta = 2 gives gamma = beta = 1
    return build_theorem_coeffs(1, 1, 1, 1, 2, 2, 2, 1, 0.5, exp_kernel)


@pytest.fixture(scope="session")
def equal_coeffs(exp_kernel):
    return build_theorem_coeffs(1, 1, 1, 1, 2, 2, 1, 1, 0.5, exp_kernel)


@pytest.fixture(scope="session")
def zero_kernel():
    return exponential_kernel(0.0, 1.0)


def conservative_coeffs(kernel, **over):
    """No delayed feedback; with a zero kernel the modal system is ``y' = A y``."""
    base = dict(rho1=1.0, rho2=1.0, rho3=1.0, K=1.0, b=2.0, beta=1.0, gamma=1.0, delta=2.0,
                mu1=1.0, mu2=0.0, tau=0.5, kernel=kernel, xi=0.5)
    base.update(over)
    return exploratory_coeffs(**base)


def expm(a: np.ndarray) -> np.ndarray:
    """Scaling-and-squaring Taylor exponential, used as an oracle."""
    s = max(0, int(np.ceil(np.log2(max(np.linalg.norm(a, 1), 1e-300) / 0.25))))
    b = a / 2.0**s
    out = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for j in range(1, 25):
        term = term @ b / j
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def sine_bump_data(a: float = 1.0) -> InitialData:
    return InitialData(
        phi0=lambda x: a * (np.sin(np.pi * x) + 0.5 * np.sin(2 * np.pi * x)),
        psi0=lambda x: 0.25 * a * np.sin(np.pi * x) ** 3,
        label="sine-bump",
    )


def config_doc(**over) -> dict:
    doc = {
        "theorem_inputs": {"rho1": 1, "rho2": 1, "rho3": 1, "K": 1, "b": 2, "delta": 2,
                           "mu1": 2, "mu2": 1, "tau": 0.5},
        "kernel": {"family": "exponential", "g0": 1, "rate": 2},
        "sim": {"n": 4, "dt": 0.01, "t_end": 1.0, "record_stride": 5},
        "initial": {"preset": "sine-bump"},
    }
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(doc.get(key), dict):
            doc[key] = {**doc[key], **value}
        else:
            doc[key] = value
    return doc


# -- acceptance report ----------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def report(criterion: int, ok: bool, detail: str) -> bool:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
