from __future__ import annotations

import json

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from conftest import sine_bump_data
from timodecay.coefficients import build_theorem_coeffs, m0, select_xi
from timodecay.discretization import DelayField, HistoryTrace, project_initial, solve_w
from timodecay.functionals import Rows, energy, energy_from_parts, energy_parts
from timodecay.harness import config_digest
from timodecay.integrator import SimConfig, run
from timodecay.kernels import (
    ScalarHistory,
    circle,
    convolve,
    exponential_kernel,
    cauchy_schwarz_slack,
    power_kernel,
)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
FAST = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
SLOW = settings(max_examples=8, deadline=None, suppress_health_check=[HealthCheck.too_slow])

kernels = st.one_of(
    st.builds(exponential_kernel, st.floats(0.1, 3), st.floats(0.0, 4)),
    st.builds(power_kernel, st.floats(0.1, 3), st.floats(1.2, 5)),
)


@FAST
@given(kernels, st.lists(finite, min_size=2, max_size=8), st.integers(1, 200))
def test_cs_slack_nonnegative(kernel, knots, i):
    samples = np.interp(np.linspace(0, 2, 201), np.linspace(0, 2, len(knots)), knots)
    h = ScalarHistory(0.01, samples)
    assert cauchy_schwarz_slack(kernel, h, 0.01 * i) >= -1e-9 * (1 + np.max(np.abs(samples)) ** 2)


@FAST
@given(kernels, st.lists(finite, min_size=11, max_size=11), st.lists(finite, min_size=11, max_size=11), finite)
def test_convolution_is_linear(kernel, a, b, c):
    ha, hb = ScalarHistory(0.1, np.array(a)), ScalarHistory(0.1, np.array(b))
    hc = ScalarHistory(0.1, np.array(a) + c * np.array(b))
    lhs = convolve(kernel, hc, 1.0)
    rhs = convolve(kernel, ha, 1.0) + c * convolve(kernel, hb, 1.0)
    assert abs(lhs - rhs) <= 1e-9 * (1 + abs(lhs) + abs(rhs))


@FAST
@given(kernels, st.lists(finite, min_size=21, max_size=21))
def test_circle_nonnegative(kernel, v):
    assert circle(kernel, ScalarHistory(0.05, np.array(v)), 1.0) >= -1e-10


@FAST
@given(st.lists(finite, min_size=1, max_size=12))
def test_w_vanishes_at_both_ends(psi):
    w = solve_w(np.array(psi))
    np.testing.assert_allclose(w(np.array([0.0, 1.0])), 0.0, atol=1e-12 * (1 + np.abs(psi).sum()))


@FAST
@given(st.floats(0.01, 10), st.floats(0, 1), st.floats(0.01, 5))
def test_xi_window(mu1, frac, tau):
    mu2 = frac * mu1
    xi = select_xi(mu1, mu2, tau)
    if mu2 < mu1:
        assert tau * mu2 < xi < tau * (2 * mu1 - mu2)
    else:
        assert xi == tau * mu2


@st.composite
def admissible_coefficients(draw):
    rho1, rho2, rho3, K = (draw(st.floats(0.5, 2)) for _ in range(4))
    b = (rho2 + draw(st.floats(0.1, 2))) * K / rho1
    delta = K * rho3 / rho1 + draw(st.floats(0.1, 2))
    kernel = exponential_kernel(draw(st.floats(0.1, 0.9)) * delta, 1.0)  # keeps lambda = delta - gbar > 0
    mu1 = draw(st.floats(0.1, 3))
    mu2 = draw(st.floats(0, 1)) * mu1
    return build_theorem_coeffs(rho1, rho2, rho3, K, b, delta, mu1, mu2, 0.5, kernel), kernel


@FAST
@given(admissible_coefficients())
def test_m0_nonnegative(ck):
    c, _ = ck
    assert m0(c) >= -1e-12


@FAST
@given(admissible_coefficients(), st.lists(finite, min_size=6 * 3 + 2, max_size=6 * 3 + 2))
def test_energy_nonnegative(ck, y):
    from timodecay.discretization import ModalState

    c, kernel = ck
    state = ModalState.from_vector(3, np.array(y))
    d = DelayField("ringbuffer", 3, c.tau, 0.05)
    d.fill(lambda s: np.full(4, 0.3), state.theta_t)
    assert energy(state, d, HistoryTrace(kernel, 0.05, state.theta), c, kernel) >= 0


@SLOW
@given(admissible_coefficients())
def test_energy_nonincreasing_for_admissible_coefficients(ck):
    c, kernel = ck
    tr = run(SimConfig(n=3, dt=0.005, t_end=1.5, record_stride=5), c, kernel, sine_bump_data())
    rows = Rows.from_trace(tr)
    E = energy_from_parts(energy_parts(rows), rows.t, c, kernel)
    assert np.all(np.diff(E) <= 1e-7 * E[0])


@FAST
@given(st.sampled_from([3, 4, 6, 8]), st.floats(0.1, 3))
def test_initial_energy_exact_for_trigonometric_data(n, amp):
    # sine-bump has modes up to 3 in both fields, so any n >= 3 captures it exactly
    kernel = exponential_kernel(1.0, 2.0)
    c = build_theorem_coeffs(1, 1, 1, 1, 2, 2, 2, 1, 0.5, kernel)
    E = [energy(*project_initial(sine_bump_data(amp), m, kernel, c, 0.01), c, kernel) for m in (n, 2 * n)]
    assert abs(E[0] - E[1]) <= 1e-12 * E[1]


@FAST
@given(st.floats(0.1, 3), st.floats(0.1, 3), st.lists(finite, min_size=40, max_size=40))
def test_memory_engines_agree(g0, rate, v):
    k = exponential_kernel(g0, rate)
    a = HistoryTrace(k, 0.02, np.array(v[:2]), method="recursive")
    b = HistoryTrace(k, 0.02, np.array(v[:2]), method="quadrature")
    for i in range(2, 40, 2):
        a.append(np.array(v[i : i + 2]))
        b.append(np.array(v[i : i + 2]))
    scale = 1 + np.abs(v).max() ** 2
    np.testing.assert_allclose(a.snapshot().conv_sq, b.snapshot().conv_sq, atol=1e-10 * scale)
    stage = np.array(v[:2])
    np.testing.assert_allclose(a.stage_convolution(0.5, stage), b.stage_convolution(0.5, stage), atol=1e-10 * scale)


@FAST
@given(st.lists(st.lists(finite, min_size=2, max_size=2), min_size=1, max_size=15))
def test_delay_backends_agree(inputs):
    tau, dt = 0.1, 0.02
    ring = DelayField("ringbuffer", 1, tau, dt)
    trans = DelayField("transport", 1, tau, dt)
    for d in (ring, trans):
        d.fill(lambda s: np.array([s, 1.0]), np.zeros(2))
    for v in inputs:
        ring.advance(np.array(v))
        trans.advance(np.array(v))
    np.testing.assert_allclose(ring.profile(), trans.profile(), atol=1e-12)


json_values = st.recursive(
    st.one_of(st.integers(-100, 100), st.floats(-1e3, 1e3, allow_nan=False), st.text(max_size=5), st.booleans()),
    lambda inner: st.dictionaries(st.text(max_size=5), inner, max_size=4),
    max_leaves=10,
)


@FAST
@given(st.dictionaries(st.text(max_size=5), json_values, max_size=5))
def test_digest_ignores_key_order(doc):
    shuffled = dict(reversed(list(doc.items())))
    assert config_digest(doc) == config_digest(shuffled)
    assert config_digest(json.loads(json.dumps(doc))) == config_digest(doc)
