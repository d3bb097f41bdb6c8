import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from lecho.hamiltonians import (
    MAGIC_ANGLE,
    PerturbationSpec,
    ScalingSpec,
    dipolar_couplings,
    k_from_theta,
    native_t2,
    perturbation_sigma,
    rf_parameters,
    scaled_hamiltonian,
    second_moment,
    secular_dipolar,
    theta_from_k,
    tilted_frame_hamiltonian,
)
from lecho.protocols import DEFAULT_OMEGA_E
from lecho.spin import SpinSystem, collective_operator, is_hermitian, random_geometry, to_dense

P = 377.3


def pair(vec):
    return SpinSystem(np.array([[0.0, 0.0, 0.0], vec]), coupling_prefactor=P)


class TestCouplings:
    def test_parallel_unit_distance(self):
        assert pair([0, 0, 1.0]).couplings[0, 1] == pytest.approx(-2 * P, rel=1e-14)

    def test_magic_angle_pair(self):
        c = np.sqrt(1 / 3)
        s = np.sqrt(2 / 3)
        assert abs(pair([s, 0, c]).couplings[0, 1]) < 1e-12

    def test_perpendicular_r2(self):
        assert pair([2.0, 0, 0]).couplings[0, 1] == pytest.approx(P / 8, rel=1e-14)

    def test_matches_oracle(self):
        pos = random_geometry(5, seed=9)
        s = SpinSystem(pos, field_direction=[0.2, 0.1, 1.0])
        assert np.allclose(s.couplings, oracles.couplings(pos, 377.3, (0.2, 0.1, 1.0)), rtol=1e-13)

    def test_cutoff(self):
        pos = np.array([[0, 0, 0], [0.3, 0, 0], [2.0, 0, 0]])
        s = SpinSystem(pos, coupling_cutoff=1.0)
        d = dipolar_couplings(s)
        assert d[0, 1] != 0 and d[0, 2] == 0 and d[1, 2] == 0


class TestSecularDipolar:
    def test_flipflop_form_n4(self):
        s = SpinSystem(random_geometry(4, seed=11))
        h = to_dense(secular_dipolar(s, "z"))
        assert np.max(np.abs(h - oracles.flipflop_dipolar(4, s.couplings))) < 1e-12 * np.max(np.abs(h))

    def test_pair_spectrum(self):
        s = pair([0.3, 0, 0])
        d = s.couplings[0, 1]
        w = np.linalg.eigvalsh(secular_dipolar(s, "z"))
        assert np.allclose(sorted(w), sorted([d / 2, d / 2, -d, 0.0]), atol=1e-12 * abs(d))

    @pytest.mark.parametrize("axis", ["x", "y", "z"])
    def test_conserves_its_axis(self, axis, sys6):
        h = secular_dipolar(sys6, axis)
        c = h @ collective_operator(sys6, axis) - collective_operator(sys6, axis) @ h
        assert np.max(np.abs(c)) < 1e-10

    def test_vector_axis_matches_named(self, sys4):
        assert np.allclose(secular_dipolar(sys4, [1.0, 0, 0]), secular_dipolar(sys4, "x"))

    def test_x_is_rotated_z(self, sys4):
        # the cyclic relabelling x->y->z->x maps H_d^z onto H_d^x
        from lecho.propagation import propagator

        axis = np.ones(3) / np.sqrt(3)
        u = propagator(sum(a * collective_operator(sys4, c) for a, c in zip(axis, "xyz")), 2 * np.pi / 3)
        hz, hx = secular_dipolar(sys4, "z"), secular_dipolar(sys4, "x")
        assert np.allclose(u @ hz @ u.conj().T, hx, atol=1e-9)


class TestAngles:
    def test_special_values(self):
        assert k_from_theta(0.0) == pytest.approx(1.0)
        assert abs(k_from_theta(np.arccos(np.sqrt(1 / 3)))) < 1e-15
        assert k_from_theta(np.pi / 2) == pytest.approx(-0.5)
        assert abs(k_from_theta(MAGIC_ANGLE)) < 1e-15

    def test_domain(self):
        with pytest.raises(ValueError):
            k_from_theta(-0.1)
        with pytest.raises(ValueError):
            k_from_theta(2.0)
        with pytest.raises(ValueError):
            theta_from_k(1.2)
        with pytest.raises(ValueError):
            theta_from_k(-0.6)

    @given(st.floats(-0.5, 1.0))
    def test_roundtrip(self, k):
        assert abs(k_from_theta(theta_from_k(k)) - k) < 1e-12


class TestRfParameters:
    @given(st.floats(-0.5, 1.0), st.floats(1e3, 1e7))
    def test_effective_field_norm(self, k, we):
        w1, off = rf_parameters(k, we)
        assert abs(w1**2 + off**2 - we**2) <= 1e-12 * we**2

    @given(st.floats(-0.5, 1.0))
    def test_consistent_with_scale_factor(self, k):
        # the tilt angle implied by the r.f. setting reproduces k
        w1, off = rf_parameters(k, 1.0)
        assert abs(k_from_theta(np.arctan2(w1, off)) - k) < 1e-12

    def test_endpoints(self):
        we = 2.0
        assert np.allclose(rf_parameters(1.0, we), (0.0, we))
        assert np.allclose(rf_parameters(-0.5, we), (we, 0.0))
        assert np.allclose(rf_parameters(0.0, we), (we * np.sqrt(2 / 3), we / np.sqrt(3)))

    def test_experimental_ranges(self):
        # scheme 2 k list plus the on-resonance backward block
        we = DEFAULT_OMEGA_E
        ks = [0.1 * i for i in range(1, 10)] + [-0.5]
        w1 = np.array([rf_parameters(k, we)[0] for k in ks]) / (2e3 * np.pi)
        assert 19.5 < w1.min() < 21.0
        assert 79.0 < w1.max() < 80.0

    def test_errors(self):
        with pytest.raises(ValueError):
            rf_parameters(0.2, 0.0)
        with pytest.raises(ValueError):
            rf_parameters(1.5, 1.0)


class TestScalingSpec:
    def test_from_k(self):
        s = ScalingSpec.from_k(0.3, DEFAULT_OMEGA_E)
        assert s.k == pytest.approx(0.3, abs=1e-12)
        assert s.tau_e == pytest.approx(12.531e-6, rel=1e-3)
        assert s.beta == pytest.approx(np.pi / 2 - s.theta)
        assert np.linalg.norm(s.effective_axis) == pytest.approx(1.0)

    def test_inconsistent_rejected(self):
        with pytest.raises(ValueError):
            ScalingSpec(k=0.3, theta=0.1, omega_e=1.0, omega_1=0.5, omega_offset=np.sqrt(0.75))
        s = ScalingSpec.from_k(0.3, 1.0)
        with pytest.raises(ValueError):
            ScalingSpec(k=s.k, theta=s.theta, omega_e=1.0, omega_1=s.omega_1, omega_offset=0.1)


class TestScaled:
    def test_limits(self, sys4):
        assert not np.any(scaled_hamiltonian(sys4, 0.0))
        assert np.array_equal(scaled_hamiltonian(sys4, 1.0), secular_dipolar(sys4, "x"))
        with pytest.raises(ValueError):
            scaled_hamiltonian(sys4, 1.5)

    @given(st.floats(-0.5, 1.0))
    def test_second_moment_quadratic(self, k):
        s = SpinSystem(random_geometry(3, seed=1))
        h = secular_dipolar(s, "x")
        iz = collective_operator(s, "z")
        assert second_moment(k * h, iz) == pytest.approx(k * k * second_moment(h, iz), rel=1e-12, abs=1e-6)


class TestTilted:
    def test_theta_zero_limit(self, sys4):
        sc = ScalingSpec.from_k(1.0, 1e5)
        for sign in (1, -1):
            h = tilted_frame_hamiltonian(sys4, sc, sign)
            expect = -sign * 1e5 * collective_operator(sys4, "z") + secular_dipolar(sys4, "z")
            assert np.allclose(h, expect, atol=1e-8)

    def test_on_resonance_dipolar_part(self, sys4):
        sc = ScalingSpec.from_k(-0.5, 1e5)
        h = tilted_frame_hamiltonian(sys4, sc, 1)
        zeeman = -1e5 * (np.sin(sc.theta) * collective_operator(sys4, "x") + np.cos(sc.theta) * collective_operator(sys4, "z"))
        assert np.allclose(h - zeeman, -0.5 * secular_dipolar(sys4, "x"), atol=1e-8)

    def test_magic_angle_no_dipolar(self, sys4):
        sc = ScalingSpec.from_k(0.0, 1e5)
        h = tilted_frame_hamiltonian(sys4, sc, 1)
        zeeman = -1e5 * (np.sin(sc.theta) * collective_operator(sys4, "x") + np.cos(sc.theta) * collective_operator(sys4, "z"))
        assert np.max(np.abs(h - zeeman)) < 1e-9

    def test_magic_angle_zero_transverse_moment(self, sys4):
        sc = ScalingSpec.from_k(0.0, 1e5)
        dip = tilted_frame_hamiltonian(sys4, sc, 1) + 1e5 * (
            np.sin(sc.theta) * collective_operator(sys4, "x") + np.cos(sc.theta) * collective_operator(sys4, "z"))
        transverse = np.cos(sc.theta) * collective_operator(sys4, "x") - np.sin(sc.theta) * collective_operator(sys4, "z")
        assert second_moment(dip, transverse) < 1e-10

    def test_microscopic_form(self, sys4):
        sc = ScalingSpec.from_k(0.3, 1e5)
        h = tilted_frame_hamiltonian(sys4, sc, -1, "microscopic")
        expect = sc.omega_offset * collective_operator(sys4, "z") + sc.omega_1 * collective_operator(sys4, "x") + secular_dipolar(sys4, "z")
        assert np.allclose(h, expect)

    def test_bad_args(self, sys4):
        sc = ScalingSpec.from_k(0.3, 1e5)
        with pytest.raises(ValueError):
            tilted_frame_hamiltonian(sys4, sc, 2)
        with pytest.raises(ValueError):
            tilted_frame_hamiltonian(sys4, sc, 1, "lab")

    @pytest.mark.parametrize("k", [-0.5, 0.0, 0.3, 1.0])
    def test_hermitian(self, sys4, k):
        sc = ScalingSpec.from_k(k, 1e5)
        for form in ("secular", "microscopic"):
            assert is_hermitian(tilted_frame_hamiltonian(sys4, sc, 1, form), 1e-12 * 1e5)


class TestSecondMoment:
    def test_pair_oracle(self, sys2):
        d = sys2.couplings[0, 1]
        m2 = second_moment(secular_dipolar(sys2, "z"), collective_operator(sys2, "y"))
        assert abs(m2 - oracles.pair_second_moment(d)) < 1e-12 * oracles.pair_second_moment(d)
        assert native_t2(sys2) == pytest.approx(1 / (1.5 * abs(d)), rel=1e-12)

    def test_commuting_is_zero(self, sys4):
        assert second_moment(secular_dipolar(sys4, "z"), collective_operator(sys4, "z")) < 1e-10

    def test_zero_observable(self, sys4):
        with pytest.raises(ZeroDivisionError):
            second_moment(secular_dipolar(sys4, "z"), np.zeros((16, 16)))

    def test_shape_mismatch(self, sys4, sys2):
        with pytest.raises(ValueError):
            second_moment(secular_dipolar(sys4, "z"), collective_operator(sys2, "y"))

    def test_t2_scale(self, sys8):
        # the default prefactor puts T2 near 100 us for the default geometry
        assert 40e-6 < native_t2(sys8) < 200e-6

    def test_isolated_spin(self):
        with pytest.raises(ValueError):
            native_t2(SpinSystem(np.zeros((1, 3))))


class TestPerturbation:
    @pytest.mark.parametrize("model", ["random_dipolar", "nonsecular_residual", "zeeman_disorder"])
    def test_calibrated_hermitian_traceless(self, sys6, model):
        spec = PerturbationSpec(model, 0.4, seed=3)
        s = perturbation_sigma(sys6, spec)
        assert is_hermitian(s, 1e-12 / native_t2(sys6))
        assert abs(np.trace(s)) < 1e-9
        m2 = second_moment(s, collective_operator(sys6, "y"))
        assert abs(m2 - (0.4 / native_t2(sys6)) ** 2) < 1e-10 * m2

    def test_zero_strength(self, sys4):
        assert not np.any(perturbation_sigma(sys4, PerturbationSpec("random_dipolar", 0.0)))

    def test_deterministic(self, sys4):
        a = perturbation_sigma(sys4, PerturbationSpec("zeeman_disorder", 1.0, seed=7))
        b = perturbation_sigma(sys4, PerturbationSpec("zeeman_disorder", 1.0, seed=7))
        c = perturbation_sigma(sys4, PerturbationSpec("zeeman_disorder", 1.0, seed=8))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_zeeman_commutes_with_iz(self, sys4):
        s = perturbation_sigma(sys4, PerturbationSpec("zeeman_disorder", 1.0))
        iz = collective_operator(sys4, "z")
        assert np.max(np.abs(s @ iz - iz @ s)) < 1e-12

    def test_nonsecular_is_non_commuting_remainder(self, sys4):
        # the residual does not commute with I^x, but H_d^z minus it does
        s = to_dense(perturbation_sigma(sys4, PerturbationSpec("nonsecular_residual", 1.0)))
        ix = collective_operator(sys4, "x")
        assert np.max(np.abs(s @ ix - ix @ s)) > 1e-3 * np.max(np.abs(s))
        scale = np.max(np.abs(s)) / np.max(np.abs(secular_dipolar(sys4, "z") + 0.5 * secular_dipolar(sys4, "x")))
        rest = secular_dipolar(sys4, "z") - s / scale
        assert np.max(np.abs(rest @ ix - ix @ rest)) < 1e-9 * np.max(np.abs(rest))

    def test_invalid(self):
        with pytest.raises(ValueError):
            PerturbationSpec("gaussian", 1.0)
        with pytest.raises(ValueError):
            PerturbationSpec("random_dipolar", -1.0)

    def test_to_dict(self):
        assert PerturbationSpec("zeeman_disorder", 0.5, 2).to_dict() == {
            "model": "zeeman_disorder", "strength": 0.5, "seed": 2}
