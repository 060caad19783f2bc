"""Model assembly and nonlinear element force laws."""

import numpy as np
import pytest

from nlmodes.model import (
    ATTACH_AUTO,
    BeamParams,
    CouplingCubicSpring,
    CubicSpring,
    ElasticCoulomb,
    ModelError,
    UnilateralSpring,
    build_2dof_cubic,
    build_clamped_beam,
    dissipated_energy_per_cycle,
    element_from_dict,
    element_to_dict,
    model_from_dict,
    nl_force_time,
    tip_transverse_dof,
)


def cantilever_omega1(p):
    # Euler-Bernoulli closed form for the first clamped-free bending frequency
    EI = p.young_modulus * p.second_moment
    rhoA = p.density * p.area
    return 1.8751040687119611**2 * np.sqrt(EI / (rhoA * p.length**4))


class TestTwoDofCubic:
    def test_matrices(self):
        m = build_2dof_cubic()
        assert np.array_equal(m.M, np.eye(2))
        assert np.array_equal(m.K, [[2.0, -1.0], [-1.0, 2.0]])
        assert np.allclose(m.K, m.K.T)
        assert np.all(m.C == 0.0)

    def test_linearized_eigenfrequencies(self):
        m = build_2dof_cubic()
        w = np.sqrt(np.linalg.eigvalsh(m.K))
        np.testing.assert_allclose(w, [1.0, np.sqrt(3.0)], rtol=1e-12)
        np.testing.assert_allclose(m.linear_modes.omegas, [1.0, np.sqrt(3.0)], rtol=1e-12)

    def test_nonlinear_dof_index(self):
        m = build_2dof_cubic()
        assert m.nonlinear_dof_index == (0,)
        assert isinstance(m.elements[0], CubicSpring)
        assert m.elements[0].coefficient == 0.5


class TestBeam:
    def test_first_frequency_matches_closed_form(self):
        p = BeamParams()
        m = build_clamped_beam(p)
        w1 = m.linear_modes.omegas[0]
        assert abs(w1 - cantilever_omega1(p)) / cantilever_omega1(p) < 5e-3

    def test_matrix_properties(self):
        m = build_clamped_beam()
        assert np.allclose(m.M, m.M.T)
        assert np.allclose(m.K, m.K.T)
        assert np.all(np.linalg.eigvalsh(m.M) > 0)
        assert m.n_dof == 20

    def test_unilateral_spring_stiffens_linearization(self):
        bare = build_clamped_beam()
        el = UnilateralSpring(dof=ATTACH_AUTO, stiffness=2e3, preload=1e-4)
        stiff = build_clamped_beam(element=el)
        assert stiff.linear_modes.omegas[0] > bare.linear_modes.omegas[0]
        tip = tip_transverse_dof()
        assert stiff.nonlinear_dof_index == (tip,)
        assert stiff.K[tip, tip] == pytest.approx(bare.K[tip, tip] + 2e3)

    def test_friction_stiffens_linearization(self):
        bare = build_clamped_beam()
        el = ElasticCoulomb(dof=ATTACH_AUTO, tangent_stiffness=1e4, limit_force=1.0)
        stuck = build_clamped_beam(element=el)
        assert stuck.linear_modes.omegas[0] > bare.linear_modes.omegas[0]

    def test_invalid_geometry_rejected(self):
        with pytest.raises(ModelError):
            BeamParams(length=-1.0)
        with pytest.raises(ModelError):
            BeamParams(young_modulus=0.0)

    @pytest.mark.parametrize("n_el", [5, 10, 20])
    def test_parameter_sets_stay_valid(self, n_el):
        p = BeamParams(length=0.3, thickness=0.004, n_elements=n_el)
        m = build_clamped_beam(p)
        assert np.allclose(m.M, m.M.T)
        assert np.allclose(m.K, m.K.T)
        assert np.all(np.linalg.eigvalsh(m.M) > 0)
        w1 = m.linear_modes.omegas[0]
        assert abs(w1 - cantilever_omega1(p)) / cantilever_omega1(p) < 1e-2


class TestElementForces:
    def test_unilateral_static_preload(self):
        el = UnilateralSpring(dof=0, stiffness=2e3, preload=1e-4)
        x = np.zeros(64)
        f, _ = nl_force_time(el, x)
        np.testing.assert_allclose(f, 2e3 * 1e-4)

    def test_unilateral_liftoff(self):
        el = UnilateralSpring(dof=0, stiffness=2e3, preload=1e-4)
        x = 3e-4 * np.cos(2 * np.pi * np.arange(256) / 256)
        f, _ = nl_force_time(el, x)
        np.testing.assert_allclose(f, 2e3 * np.maximum(x + 1e-4, 0.0))
        assert np.min(f) == 0.0

    def test_cubic_force(self):
        el = CubicSpring(dof=0, coefficient=0.5)
        x = np.linspace(-1, 1, 32)
        f, _ = nl_force_time(el, x)
        np.testing.assert_allclose(f, 0.5 * x**3)

    def test_stuck_friction_is_linear_and_lossless(self):
        el = ElasticCoulomb(dof=0, tangent_stiffness=1e4, limit_force=1.0)
        a = 0.5e-4  # below slip onset limit_force / k_t = 1e-4
        x = a * np.cos(2 * np.pi * np.arange(128) / 128)
        f, _ = nl_force_time(el, x)
        np.testing.assert_allclose(f, 1e4 * x, atol=1e-12)
        assert abs(dissipated_energy_per_cycle(el, x)) < 1e-12

    def test_jenkins_loop_area_closed_form(self):
        kt, fc = 1e4, 1.0
        el = ElasticCoulomb(dof=0, tangent_stiffness=kt, limit_force=fc)
        a = 5e-4  # well beyond slip onset
        x = a * np.cos(2 * np.pi * np.arange(2048) / 2048)
        area = dissipated_energy_per_cycle(el, x)
        expected = 4.0 * fc * (a - fc / kt)
        assert area == pytest.approx(expected, rel=5e-3)

    def test_jenkins_force_bounded_by_limit(self):
        el = ElasticCoulomb(dof=0, tangent_stiffness=1e4, limit_force=1.0)
        rng = np.random.default_rng(7)
        for _ in range(5):
            coeffs = rng.normal(size=4) * 3e-4
            th = 2 * np.pi * np.arange(256) / 256
            x = coeffs[0] * np.cos(th) + coeffs[1] * np.sin(th) \
                + coeffs[2] * np.cos(2 * th) + coeffs[3] * np.sin(3 * th)
            f, _ = nl_force_time(el, x)
            assert np.max(np.abs(f)) <= 1.0 + 1e-12

    def test_jenkins_dissipation_nonnegative(self):
        el = ElasticCoulomb(dof=0, tangent_stiffness=1e4, limit_force=1.0)
        rng = np.random.default_rng(11)
        for _ in range(8):
            coeffs = rng.normal(size=2) * 4e-4
            th = 2 * np.pi * np.arange(512) / 512
            x = coeffs[0] * np.cos(th) + coeffs[1] * np.sin(2 * th)
            assert dissipated_energy_per_cycle(el, x) >= -1e-14

    def test_conservative_elements_dissipate_nothing(self):
        th = 2 * np.pi * np.arange(512) / 512
        x = 3e-4 * np.cos(th)
        uni = UnilateralSpring(dof=0, stiffness=2e3, preload=1e-4)
        cub = CubicSpring(dof=0, coefficient=0.5)
        assert abs(dissipated_energy_per_cycle(uni, x)) < 1e-12
        assert abs(dissipated_energy_per_cycle(cub, np.cos(th))) < 1e-12

    def test_periodic_state_repetition(self):
        el = ElasticCoulomb(dof=0, tangent_stiffness=1e4, limit_force=1.0)
        th = 2 * np.pi * np.arange(128) / 128
        x = 4e-4 * np.cos(th)
        f1, state = nl_force_time(el, x)
        f2, state2 = nl_force_time(el, x, state=state)
        np.testing.assert_allclose(f1, f2, atol=1e-12)
        assert state2 == pytest.approx(state)

    def test_coupling_cubic(self):
        el = CouplingCubicSpring(dof_a=0, dof_b=1, coefficient=0.5)
        th = 2 * np.pi * np.arange(64) / 64
        x = np.column_stack([np.cos(th), 0.25 * np.sin(th)])
        f, _ = nl_force_time(el, x)
        s = x[:, 0] - x[:, 1]
        np.testing.assert_allclose(f[:, 0], 0.5 * s**3)
        np.testing.assert_allclose(f[:, 1], -0.5 * s**3)

    def test_sampling_validation(self):
        el = CubicSpring(dof=0, coefficient=1.0)
        with pytest.raises(ModelError):
            nl_force_time(el, np.array([]))
        with pytest.raises(ModelError):
            nl_force_time(el, np.ones(8), t=np.array([0, 1, 2, 3, 4, 5, 6, 9.0]))


class TestSerialization:
    def test_element_round_trip(self):
        for el in [
            CubicSpring(dof=0, coefficient=0.5),
            UnilateralSpring(dof=3, stiffness=2e3, preload=1e-4),
            ElasticCoulomb(dof=2, tangent_stiffness=1e4, limit_force=1.0),
            CouplingCubicSpring(dof_a=0, dof_b=1, coefficient=2.0),
        ]:
            assert element_from_dict(element_to_dict(el)) == el

    def test_builder_specs(self):
        m = model_from_dict({"builder": "2dof_cubic"})
        assert m.n_dof == 2
        m = model_from_dict(
            {
                "builder": "clamped_beam",
                "params": {"n_elements": 5},
                "element": {"type": "unilateral_spring", "dof": -1,
                            "stiffness": 2e3, "preload": 1e-4},
            }
        )
        assert m.n_dof == 10
        assert m.nonlinear_dof_index == (8,)

    def test_inline_matrices(self):
        m = model_from_dict(
            {
                "matrices": {"M": [[1.0, 0.0], [0.0, 1.0]], "K": [[2.0, -1.0], [-1.0, 2.0]]},
                "elements": [{"type": "cubic_spring", "dof": 0, "coefficient": 0.5}],
            }
        )
        assert m.nonlinear_dof_index == (0,)

    def test_bad_specs_rejected(self):
        with pytest.raises(ModelError):
            model_from_dict({"builder": "nope"})
        with pytest.raises(ModelError):
            model_from_dict({})
        with pytest.raises(ModelError):
            model_from_dict({"matrices": {"M": [[1.0]]}})
        with pytest.raises(ModelError):
            element_from_dict({"type": "cubic_spring", "dof": 0})
