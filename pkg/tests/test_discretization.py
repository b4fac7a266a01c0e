from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import conservative_coeffs
from timodecay.discretization import (
    DelayField,
    GalerkinSystem,
    HistoryTrace,
    InitialData,
    ModalState,
    advect_z,
    cosine_basis,
    cross_matrix,
    delay_steps,
    delay_value,
    endpoint_traces,
    project_cosine,
    project_initial,
    project_sine,
    sine_basis,
    solve_w,
    weighted_cross_matrix,
)
from timodecay.errors import OutOfRangeError, StepSizeError
from timodecay.kernels import convolve, exponential_kernel, power_kernel, ScalarHistory

X = np.linspace(0.0, 1.0, 40001)


def trap(v):
    return np.trapezoid(v, X, axis=-1) if hasattr(np, "trapezoid") else np.trapz(v, X, axis=-1)


class TestBases:
    def test_orthonormal(self):
        s = sine_basis(6, X)
        c = cosine_basis(6, X)
        np.testing.assert_allclose(trap(s[:, None] * s[None]), np.eye(6), atol=1e-8)
        np.testing.assert_allclose(trap(c[:, None] * c[None]), np.eye(7), atol=1e-8)

    def test_cross_matrix_matches_quadrature(self):
        n = 7
        oracle = trap(sine_basis(n, X)[:, None] * cosine_basis(n, X)[None])
        np.testing.assert_allclose(cross_matrix(n), oracle, atol=1e-8)

    def test_cross_matrix_is_not_diagonal(self):
        # the shear coupling links each sine mode to every cosine mode of opposite parity
        C = cross_matrix(4)
        assert C[0, 1] == 0.0 and C[0, 2] != 0.0 and C[1, 1] != 0.0

    def test_weighted_cross_matrix(self):
        n = 5
        oracle = trap(sine_basis(n, X)[:, None] * cosine_basis(n, X)[None] * (2 - 4 * X))
        np.testing.assert_allclose(weighted_cross_matrix(n), oracle, atol=1e-8)


class TestProjection:
    def test_parabola_coefficients(self):
        n = 9
        k = np.arange(1, n + 1)
        expect = np.where(k % 2 == 1, 4 * math.sqrt(2) / (k * np.pi) ** 3, 0.0)
        np.testing.assert_allclose(project_sine(lambda x: x * (1 - x), n), expect, atol=1e-14)

    def test_cosine_mean_and_mode(self):
        th = project_cosine(lambda x: 2.0 + np.cos(np.pi * x), 4)
        np.testing.assert_allclose(th, [2.0, 1 / math.sqrt(2), 0, 0, 0], atol=1e-14)

    def test_constant_profile_broadcast(self):
        assert project_cosine(lambda x: 3.0, 2)[0] == pytest.approx(3.0)

    def test_bad_profile(self):
        with pytest.raises(ValueError):
            project_sine(lambda x: np.full_like(x, np.nan), 3)
        with pytest.raises(ValueError):
            project_sine(lambda x: 1 / 0, 3)


class TestState:
    def test_vector_roundtrip(self):
        rng = np.random.default_rng(1)
        n = 3
        y = rng.standard_normal(6 * n + 2)
        st = ModalState.from_vector(n, y, 0.25)
        np.testing.assert_array_equal(st.to_vector(), y)
        assert st.size == y.size and st.t == 0.25

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            ModalState(2, np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(3))

    def test_non_finite_rejected(self):
        st = ModalState.zeros(2)
        with pytest.raises(ValueError):
            ModalState(2, [np.inf, 0], st.phi_t, st.psi, st.psi_t, st.theta, st.theta_t)


class TestWField:
    def test_single_mode_closed_form(self):
        w = solve_w(np.array([0.0, 1.0]))
        assert float(w(0.5)[0]) == pytest.approx(-math.sqrt(2) / math.pi, abs=1e-14)
        np.testing.assert_allclose(w(np.array([0.0, 1.0])), 0.0, atol=1e-14)

    def test_solves_the_dirichlet_problem(self):
        rng = np.random.default_rng(3)
        psi = rng.standard_normal(6)
        w = solve_w(psi)
        x = np.linspace(0.05, 0.95, 19)
        h = 1e-4
        wxx = (w(x + h) - 2 * w(x) + w(x - h)) / h**2
        psi_x = (psi * np.pi * np.arange(1, 7)) @ cosine_basis(6, x)[1:]
        np.testing.assert_allclose(-wxx, psi_x, atol=1e-4)
        np.testing.assert_allclose(w.derivative(x), (w(x + h) - w(x - h)) / (2 * h), atol=1e-6)

    def test_sine_pairing(self):
        rng = np.random.default_rng(4)
        psi, f = rng.standard_normal(4), rng.standard_normal(4)
        w = solve_w(psi)
        assert w.sine_pairing(f) == pytest.approx(float(trap(w(X) * (f @ sine_basis(4, X)))), abs=1e-7)


class TestEndpointTraces:
    def test_values(self):
        st = ModalState.zeros(2)
        st.phi[0] = 1.0
        st.theta_t[:] = [0.5, 1.0, 0.0]
        tr = endpoint_traces(st)
        assert tr["phi_x"] == pytest.approx((math.sqrt(2) * math.pi, -math.sqrt(2) * math.pi))
        assert tr["theta_t"] == pytest.approx((0.5 + math.sqrt(2), 0.5 - math.sqrt(2)))


class TestDelay:
    def test_delay_steps(self):
        assert delay_steps(0.5, 0.01) == 50
        with pytest.raises(StepSizeError, match="try dt"):
            delay_steps(0.5, 0.03)

    def test_ringbuffer_returns_value_one_delay_ago(self):
        d = DelayField("ringbuffer", 1, tau=0.3, dt=0.1)
        d.fill(lambda s: np.array([s, 0.0]), np.zeros(2))
        np.testing.assert_allclose(delay_value(d), [-0.3, 0.0])
        for i in range(1, 6):
            d.advance(np.array([float(i), 0.0]))
            np.testing.assert_allclose(d.value(0.0), [max(i - 3, 0) if i >= 3 else -0.1 * (3 - i), 0.0])
        # halfway between z(t - tau) = 2 and z(t - tau + dt) = 3
        assert d.value(0.5)[0] == pytest.approx(2.5)

    def test_transport_at_unit_courant_is_an_exact_shift(self):
        tau, dt = 0.2, 0.05
        ring = DelayField("ringbuffer", 2, tau, dt)
        trans = DelayField("transport", 2, tau, dt)
        hist = lambda s: np.array([np.sin(s), s, 1.0])  # noqa: E731
        ring.fill(hist, hist(0.0))
        trans.fill(hist, hist(0.0))
        rng = np.random.default_rng(0)
        for _ in range(11):
            v = rng.standard_normal(3)
            ring.advance(v)
            advect_z(trans, v, dt)
            np.testing.assert_allclose(ring.profile(), trans.profile(), atol=1e-15)
            np.testing.assert_allclose(ring.value(0.5), trans.value(0.5), atol=1e-15)

    def test_integrals(self):
        tau = 0.5
        d = DelayField("transport", 0, tau, 0.01, m_rho=50)
        d.fill(lambda s: np.ones(1), np.ones(1))
        plain, weighted = d.integrals()
        assert plain[0] == pytest.approx(1.0)
        assert weighted[0] == pytest.approx(1 - math.exp(-1.0), rel=1e-4)

    def test_cfl(self):
        with pytest.raises(StepSizeError):
            DelayField("transport", 1, 0.5, 0.01, m_rho=100)
        d = DelayField("transport", 1, 0.5, 0.01)
        with pytest.raises(StepSizeError):
            advect_z(d, np.zeros(2), 0.02)

    def test_misc_rejections(self):
        with pytest.raises(ValueError):
            DelayField("queue", 1, 0.5, 0.01)
        d = DelayField("ringbuffer", 1, 0.5, 0.01)
        with pytest.raises(ValueError):
            advect_z(d, np.zeros(2), 0.01)
        with pytest.raises(OutOfRangeError):
            delay_value(d, 1.5)


class TestHistory:
    @pytest.mark.parametrize("kernel", [exponential_kernel(1.5, 0.8), power_kernel(1.0, 2.0)])
    def test_convolution_matches_scalar_trapezoid(self, kernel):
        dt = 0.01
        th = np.stack([np.cos(dt * np.arange(201)), np.sin(2 * dt * np.arange(201))], axis=1)
        h = HistoryTrace(kernel, dt, th[0], capacity=8)  # forces regrowth on the quadrature path
        for i in range(1, 201):
            h.append(th[i])
        snap = h.snapshot()
        for m in range(2):
            assert snap.conv[m] == pytest.approx(convolve(kernel, ScalarHistory(dt, th[:, m]), 2.0), abs=1e-13)

    def test_engines_agree(self):
        k = exponential_kernel(2.0, 1.5)
        dt = 0.02
        rng = np.random.default_rng(5)
        a = HistoryTrace(k, dt, np.ones(3), method="recursive")
        b = HistoryTrace(k, dt, np.ones(3), method="quadrature")
        for _ in range(60):
            stage = rng.standard_normal(3)
            for c in (0.0, 0.5, 1.0):
                np.testing.assert_allclose(a.stage_convolution(c, stage), b.stage_convolution(c, stage),
                                           rtol=1e-12, atol=1e-14)
            v = rng.standard_normal(3)
            a.append(v)
            b.append(v)
        sa, sb = a.snapshot(), b.snapshot()
        for name in ("conv", "conv_sq", "dconv", "dconv_sq"):
            np.testing.assert_allclose(getattr(sa, name), getattr(sb, name), rtol=1e-11, atol=1e-13)
        assert sa.mass == pytest.approx(sb.mass)
        assert sa.dmass == pytest.approx(sb.dmass)

    def test_unknown_method_and_stage(self):
        k = power_kernel(1, 2)
        with pytest.raises(ValueError):
            HistoryTrace(k, 0.1, np.zeros(2), method="fft")
        with pytest.raises(ValueError):
            HistoryTrace(k, 0.1, np.zeros(2)).stage_convolution(0.25, np.zeros(2))


class TestOperator:
    def test_skew_coupled_conservative_part(self, zero_kernel):
        # with no friction or delay the operator is skew in the energy inner product
        c = conservative_coeffs(zero_kernel, mu1=0.0)
        lam = np.linalg.eigvals(GalerkinSystem(4, c).A)
        assert np.max(np.abs(lam.real)) < 1e-8

    def test_friction_damps_every_mode(self, zero_kernel):
        c = conservative_coeffs(zero_kernel, mu1=1.0)
        lam = np.linalg.eigvals(GalerkinSystem(4, c).A)
        assert np.max(lam.real) < 1e-10

    def test_project_initial_shapes(self, strict_coeffs, exp_kernel):
        data = InitialData(theta1=lambda x: np.cos(np.pi * x))
        st, d, h = project_initial(data, 3, exp_kernel, strict_coeffs, 0.01)
        assert st.theta_t[1] == pytest.approx(1 / math.sqrt(2))
        np.testing.assert_allclose(d.profile()[0], st.theta_t)
        np.testing.assert_allclose(d.profile()[1:], 0.0)
        assert h.method == "recursive" and h.steps == 0
