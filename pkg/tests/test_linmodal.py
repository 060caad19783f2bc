"""Spectral bases and fast dynamic-compliance evaluation."""

import numpy as np
import pytest

from nlmodes.linmodal import (
    DegenerateSpectrum,
    NearResonantDenominator,
    compliance_general,
    compliance_spectral,
    dyn_stiffness,
    real_modes,
    state_modes,
)
from nlmodes.model import BeamParams, build_2dof_cubic, build_clamped_beam


def random_mck(rng, n, damped=True):
    # well-separated random SPD pencil with light damping
    Q = rng.normal(size=(n, n))
    M = Q @ Q.T + n * np.eye(n)
    R = rng.normal(size=(n, n))
    K = R @ R.T + 10.0 * n * np.eye(n)
    if not damped:
        return M, np.zeros((n, n)), K
    S = rng.normal(size=(n, n)) * 0.05
    C = S @ S.T + 0.05 * np.eye(n)
    return M, C, K


class TestRealModes:
    def test_2dof_frequencies(self):
        basis = build_2dof_cubic().linear_modes
        np.testing.assert_allclose(basis.omegas, [1.0, np.sqrt(3.0)], rtol=1e-12)

    def test_diagonal_system_identity_modes(self):
        w = np.array([2.0, 3.0, 5.0])
        basis = real_modes(np.eye(3), np.diag(w**2))
        np.testing.assert_allclose(basis.omegas, w, rtol=1e-14)
        np.testing.assert_allclose(np.abs(basis.phis), np.eye(3), atol=1e-14)

    def test_beam_first_frequency(self):
        p = BeamParams()
        basis = build_clamped_beam(p).linear_modes
        EI = p.young_modulus * p.second_moment
        rhoA = p.density * p.area
        w1 = 1.8751040687119611**2 * np.sqrt(EI / (rhoA * p.length**4))
        assert abs(basis.omegas[0] - w1) / w1 < 5e-3

    def test_mass_and_stiffness_orthogonality(self):
        rng = np.random.default_rng(0)
        M, _, K = random_mck(rng, 6, damped=False)
        basis = real_modes(M, K)
        gram_m = basis.phis.T @ M @ basis.phis
        gram_k = basis.phis.T @ K @ basis.phis
        np.testing.assert_allclose(gram_m, np.eye(6), atol=1e-10)
        np.testing.assert_allclose(
            gram_k, np.diag(basis.omegas**2), atol=1e-8 * np.max(basis.omegas**2)
        )

    def test_nonsymmetric_rejected(self):
        with pytest.raises(ValueError):
            real_modes(np.eye(2), np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestDynStiffness:
    def test_static_block_is_stiffness(self):
        m = build_2dof_cubic()
        np.testing.assert_allclose(dyn_stiffness(0, 0.5j, m), m.K)

    def test_undamped_first_harmonic(self):
        m = build_2dof_cubic()
        w = 0.7
        np.testing.assert_allclose(dyn_stiffness(1, 1j * w, m), m.K - w**2 * m.M)

    def test_negative_harmonic_rejected(self):
        with pytest.raises(ValueError):
            dyn_stiffness(-1, 1j, build_2dof_cubic())


class TestComplianceSpectral:
    def test_diagonal_closed_form(self):
        w = np.array([2.0, 3.0])
        basis = real_modes(np.eye(2), np.diag(w**2))
        lam = 0.4 + 1.1j
        H = compliance_spectral(1, lam, basis)
        np.testing.assert_allclose(np.diag(H), 1.0 / (w**2 + lam**2), rtol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_inverse_identity_random(self, seed):
        rng = np.random.default_rng(seed)
        M, _, K = random_mck(rng, 5, damped=False)
        basis = real_modes(M, K)

        class Plain:
            pass

        mdl = Plain()
        mdl.M, mdl.K, mdl.C = M, K, None
        for n in (0, 1, 2, 3):
            lam = rng.normal() * basis.omegas[0] + 1j * rng.uniform(0.3, 3.0) * basis.omegas[0]
            try:
                H = compliance_spectral(n, lam, basis)
            except NearResonantDenominator:
                continue
            S = K + (n * lam) ** 2 * M
            err = np.max(np.abs(H @ S - np.eye(5)))
            assert err < 1e-9

    def test_guard_raises_at_resonance(self):
        basis = build_2dof_cubic().linear_modes
        with pytest.raises(NearResonantDenominator):
            compliance_spectral(1, 1j * basis.omegas[0], basis)


class TestStateModes:
    def test_undamped_conjugate_pairs(self):
        m = build_2dof_cubic()
        sb = state_modes(m.M, np.zeros((2, 2)), m.K)
        nus = sb.nus[np.argsort(sb.nus.imag)]
        expected = np.array([-np.sqrt(3) * 1j, -1j, 1j, np.sqrt(3) * 1j])
        np.testing.assert_allclose(nus, expected, atol=1e-10)

    def test_proportional_damping_closed_form(self):
        m = build_2dof_cubic()
        alpha, beta = 0.02, 0.01
        C = alpha * m.M + beta * m.K
        basis = m.linear_modes
        sb = state_modes(m.M, C, m.K)
        for wk in basis.omegas:
            zk = 0.5 * (alpha / wk + beta * wk)
            lam_k = -zk * wk + 1j * wk * np.sqrt(1 - zk**2)
            # poles of the compliance sit at nu = -lam for the stable roots
            best = np.min(np.abs(sb.nus - (-lam_k)))
            assert best < 1e-10 * wk

    def test_biorthonormalization(self):
        rng = np.random.default_rng(3)
        M, C, K = random_mck(rng, 4)
        sb = state_modes(M, C, K)
        prod = sb.x_left @ sb.A @ sb.x_right
        np.testing.assert_allclose(np.diag(prod), sb.nus, atol=1e-8 * np.max(np.abs(sb.nus)))
        gram = sb.x_left @ sb.x_right
        np.testing.assert_allclose(gram, np.eye(8), atol=1e-8)

    def test_degenerate_spectrum_detected(self):
        M = np.eye(2)
        K = np.diag([4.0, 4.0])  # repeated frequency
        with pytest.raises(DegenerateSpectrum):
            state_modes(M, np.zeros((2, 2)), K)


class TestComplianceGeneral:
    @pytest.mark.parametrize("seed", range(4))
    def test_matches_dense_inverse(self, seed):
        rng = np.random.default_rng(seed)
        M, C, K = random_mck(rng, 4)
        sb = state_modes(M, C, K)
        w_scale = np.sqrt(np.max(np.linalg.eigvalsh(K)) / np.min(np.linalg.eigvalsh(M)))
        for n in (0, 1, 3):
            lam = rng.normal() * 0.1 * w_scale + 1j * rng.uniform(0.2, 2.0) * w_scale
            try:
                H = compliance_general(n, lam, sb)
            except NearResonantDenominator:
                continue
            S = K + (n * lam) * C + (n * lam) ** 2 * M
            err = np.max(np.abs(H @ S - np.eye(4)))
            assert err < 1e-9

    def test_reduces_to_spectral_when_undamped(self):
        rng = np.random.default_rng(9)
        M, _, K = random_mck(rng, 4, damped=False)
        basis = real_modes(M, K)
        # shift frequencies apart to keep the state spectrum simple
        sb = state_modes(M, np.zeros((4, 4)), K)
        lam = 0.21 + 1.3j
        H1 = compliance_spectral(1, lam, basis)
        H2 = compliance_general(1, lam, sb)
        np.testing.assert_allclose(H1, H2, atol=1e-9 * np.max(np.abs(H1)))

    def test_guard_raises_near_pole(self):
        m = build_2dof_cubic()
        sb = state_modes(m.M, np.zeros((2, 2)), m.K)
        with pytest.raises(NearResonantDenominator):
            compliance_general(1, -sb.nus[0], sb)
