"""Harmonic algebra, transforms, and the analytic force-harmonic Jacobian."""

import numpy as np
import pytest

from nlmodes import aft
from nlmodes.model import (
    CouplingCubicSpring,
    CubicSpring,
    ElasticCoulomb,
    ModelError,
    UnilateralSpring,
)


def random_signal(rng, nh, n_dof, omega=1.3, scale=1.0):
    U = scale * (rng.normal(size=(nh + 1, n_dof)) + 1j * rng.normal(size=(nh + 1, n_dof)))
    U[0] = U[0].real
    return aft.HarmonicSignal(U, omega)


class TestTransforms:
    def test_single_cosine(self):
        sig = aft.HarmonicSignal([[0.0], [1.0]], omega=2.0)
        x = aft.synthesize(sig, 8)
        np.testing.assert_allclose(x[:, 0], np.cos(2 * np.pi * np.arange(8) / 8), atol=1e-15)

    def test_zero_signal(self):
        sig = aft.HarmonicSignal(np.zeros((4, 2)), omega=1.0)
        assert np.all(aft.synthesize(sig, 32) == 0.0)

    def test_round_trip_identity(self):
        rng = np.random.default_rng(0)
        for nh, n_dof, n_t in [(3, 1, 16), (7, 2, 64), (9, 3, 128)]:
            sig = random_signal(rng, nh, n_dof)
            back = aft.fourier_coeffs(aft.synthesize(sig, n_t), sig.omega, nh)
            np.testing.assert_allclose(back.U, sig.U, atol=1e-12)

    def test_pack_unpack_round_trip(self):
        rng = np.random.default_rng(1)
        sig = random_signal(rng, 5, 3)
        back = aft.unpack(aft.pack(sig), 5, 3, sig.omega)
        np.testing.assert_allclose(back.U, sig.U, atol=0.0)

    def test_parseval(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            sig = random_signal(rng, 6, 2)
            x = aft.synthesize(sig, 64)
            direct = np.mean(x**2, axis=0)
            np.testing.assert_allclose(direct, aft.mean_power(sig), rtol=1e-12)

    def test_velocity_of_single_harmonic(self):
        sig = aft.HarmonicSignal([[0.0], [1.0]], omega=3.0)
        v = aft.synthesize_velocity(sig, 16)
        th = 2 * np.pi * np.arange(16) / 16
        np.testing.assert_allclose(v[:, 0], -3.0 * np.sin(th), atol=1e-14)

    def test_sampling_preconditions(self):
        sig = aft.HarmonicSignal(np.zeros((4, 1)), omega=1.0)
        with pytest.raises(ValueError):
            aft.synthesize(sig, 4 * 3)  # below 4*NH + 1
        with pytest.raises(ValueError):
            aft.fourier_coeffs(np.zeros((6, 1)), 1.0, nh=3)

    def test_static_harmonic_must_be_real(self):
        with pytest.raises(ValueError):
            aft.HarmonicSignal(np.array([[1.0 + 1.0j], [0.0 + 0j]]), omega=1.0)


def fd_jacobian(fun, z, h=1e-7):
    z = np.asarray(z, dtype=float)
    r0 = fun(z)
    J = np.empty((r0.size, z.size))
    for i in range(z.size):
        zp = z.copy()
        zp[i] += h
        zm = z.copy()
        zm[i] -= h
        J[:, i] = (fun(zp) - fun(zm)) / (2 * h)
    return J


class TestNlHarmonics:
    def test_zero_input_gives_zero_residual(self):
        elements = [
            CubicSpring(dof=0, coefficient=0.5),
            UnilateralSpring(dof=1, stiffness=2e3, preload=1e-4),
            ElasticCoulomb(dof=2, tangent_stiffness=1e4, limit_force=1.0),
        ]
        sig = aft.HarmonicSignal(np.zeros((6, 3)), omega=1.0)
        G, J = aft.nl_harmonics(sig, elements, (0, 1, 2), 128)
        assert np.all(G.U == 0.0)

    def test_cubic_single_harmonic_closed_form(self):
        gamma, a = 0.5, 1.3
        U = np.zeros((6, 1), dtype=complex)
        U[1] = a
        sig = aft.HarmonicSignal(U, omega=1.0)
        G, _ = aft.nl_harmonics(sig, [CubicSpring(dof=0, coefficient=gamma)], (0,), 64)
        # cos^3 = (3 cos + cos 3) / 4
        np.testing.assert_allclose(G.U[1, 0], 0.75 * gamma * a**3, atol=1e-12)
        np.testing.assert_allclose(G.U[3, 0], 0.25 * gamma * a**3, atol=1e-12)
        assert abs(G.U[0, 0]) < 1e-13 and abs(G.U[2, 0]) < 1e-13

    def test_fully_stuck_friction_residual_is_exactly_zero(self):
        el = ElasticCoulomb(dof=0, tangent_stiffness=1e4, limit_force=1.0)
        U = np.zeros((4, 1), dtype=complex)
        U[1] = 0.5e-4 * (1.0 + 0.3j)  # below slip onset
        sig = aft.HarmonicSignal(U, omega=1.0)
        G, J = aft.nl_harmonics(sig, [el], (0,), 128)
        assert np.max(np.abs(G.U)) == 0.0
        assert np.max(np.abs(J)) == 0.0

    def test_footprint_mismatch_rejected(self):
        el = CubicSpring(dof=5, coefficient=1.0)
        sig = aft.HarmonicSignal(np.zeros((3, 1)), omega=1.0)
        with pytest.raises(ModelError):
            aft.nl_harmonics(sig, [el], (0,), 64)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_jacobian_cubic_vs_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        nh, n_t = 5, 128
        el = CubicSpring(dof=0, coefficient=0.5)
        sig = random_signal(rng, nh, 1, scale=0.7)

        def g_of(z):
            s = aft.unpack(z, nh, 1, 1.0)
            G, _ = aft.nl_harmonics(s, [el], (0,), n_t)
            return aft.pack(G)

        z0 = aft.pack(sig)
        _, J = aft.nl_harmonics(sig, [el], (0,), n_t)
        J_fd = fd_jacobian(g_of, z0, h=1e-6)
        err = np.max(np.abs(J - J_fd)) / max(np.max(np.abs(J_fd)), 1e-300)
        assert err < 1e-6

    @pytest.mark.parametrize("seed", [3, 4])
    def test_jacobian_coupling_cubic_vs_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        nh, n_t = 4, 128
        el = CouplingCubicSpring(dof_a=0, dof_b=1, coefficient=0.8)
        sig = random_signal(rng, nh, 2, scale=0.5)

        def g_of(z):
            s = aft.unpack(z, nh, 2, 1.0)
            G, _ = aft.nl_harmonics(s, [el], (0, 1), n_t)
            return aft.pack(G)

        _, J = aft.nl_harmonics(sig, [el], (0, 1), n_t)
        J_fd = fd_jacobian(g_of, aft.pack(sig), h=1e-6)
        err = np.max(np.abs(J - J_fd)) / max(np.max(np.abs(J_fd)), 1e-300)
        assert err < 1e-6

    @pytest.mark.parametrize(
        "element,scale",
        [
            (UnilateralSpring(dof=0, stiffness=2e3, preload=1e-4), 3e-4),
            (ElasticCoulomb(dof=0, tangent_stiffness=1e4, limit_force=1.0), 4e-4),
        ],
    )
    def test_jacobian_piecewise_linear_vs_finite_differences(self, element, scale):
        rng = np.random.default_rng(42)
        nh, n_t = 5, 128
        sig = random_signal(rng, nh, 1, scale=scale)

        def g_of(z):
            s = aft.unpack(z, nh, 1, 1.0)
            G, _ = aft.nl_harmonics(s, [element], (0,), n_t)
            return aft.pack(G)

        _, J = aft.nl_harmonics(sig, [element], (0,), n_t)
        J_fd = fd_jacobian(g_of, aft.pack(sig), h=1e-9 * scale / 1e-4)
        err = np.max(np.abs(J - J_fd)) / max(np.max(np.abs(J_fd)), 1e-300)
        assert err < 1e-4

    def test_phase_shift_equivariance_smooth(self):
        # arbitrary rotation is exact for the cubic when n_t >= 4 nh + 1
        rng = np.random.default_rng(5)
        nh, n_t = 5, 128
        el = CubicSpring(dof=0, coefficient=0.5)
        sig = random_signal(rng, nh, 1, scale=0.6)
        phi = 0.7345
        n = np.arange(nh + 1)
        rot = aft.HarmonicSignal(sig.U * np.exp(1j * n * phi)[:, None], sig.omega)
        G0, _ = aft.nl_harmonics(sig, [el], (0,), n_t)
        G1, _ = aft.nl_harmonics(rot, [el], (0,), n_t)
        np.testing.assert_allclose(G1.U, G0.U * np.exp(1j * n * phi)[:, None], atol=1e-12)

    def test_phase_shift_equivariance_hysteretic(self):
        # sample-aligned rotations permute the converged loop exactly
        rng = np.random.default_rng(6)
        nh, n_t = 4, 128
        el = ElasticCoulomb(dof=0, tangent_stiffness=1e4, limit_force=1.0)
        sig = random_signal(rng, nh, 1, scale=5e-4)
        shift = 16
        phi = 2 * np.pi * shift / n_t
        n = np.arange(nh + 1)
        rot = aft.HarmonicSignal(sig.U * np.exp(1j * n * phi)[:, None], sig.omega)
        G0, _ = aft.nl_harmonics(sig, [el], (0,), n_t)
        G1, _ = aft.nl_harmonics(rot, [el], (0,), n_t)
        np.testing.assert_allclose(G1.U, G0.U * np.exp(1j * n * phi)[:, None], atol=1e-10)
