"""Instance construction, forecast streams, controllability, and declared
bound validation."""

import numpy as np
import pytest

from mpclab import model, presets
from mpclab.model import (Bounds, InventorySystem, ModelError, ParamBox,
                          ParamSeq, PredictionStream, QuadraticTrackingSystem,
                          build_instance, config_hash, controllability_matrix,
                          min_singular_controllability, transition_matrix,
                          validate_assumptions)


def const_system(n=1, m=1, T=4, a=0.5, b=1.0):
    A = a * np.eye(n)
    B = b * np.eye(n)[:, :m]
    return QuadraticTrackingSystem(
        n, m, T,
        A=lambda t, xi: A, B=lambda t, xi: B,
        w=lambda t, xi: np.zeros(n),
        Q=lambda t, xi: np.eye(n), R=lambda t, xi: np.eye(m),
        xbar=lambda t, xi: np.zeros(n),
        P_T=lambda xi: np.eye(n), xbar_T=lambda xi: np.zeros(n),
        bounds=Bounds(mu=1.0, ell=1.0, a=abs(a), b=abs(b)),
        param_box=ParamBox(np.zeros(1), np.ones(1)))


class TestParamBox:
    def test_normalized_shrinks_wide_box(self):
        box = ParamBox(np.array([0.0, 0.0]), np.array([3.0, 4.0]))
        small, scale = box.normalized()
        assert small.diameter() == pytest.approx(1.0)
        assert scale == pytest.approx(1.0 / 5.0)

    def test_normalized_keeps_small_box(self):
        box = ParamBox(np.array([0.0]), np.array([0.5]))
        same, scale = box.normalized()
        assert same is box and scale == 1.0

    def test_invalid_box_rejected(self):
        with pytest.raises(ModelError):
            ParamBox(np.array([1.0]), np.array([0.0]))

    def test_contains_and_sampling(self):
        box = ParamBox(np.array([-1.0]), np.array([1.0]))
        rng = np.random.default_rng(0)
        for _ in range(50):
            assert box.contains(box.sample(rng))


class TestPredictionStream:
    def test_zero_schedule_is_bitwise_exact(self):
        base = ParamSeq([np.array([0.3 * t]) for t in range(6)])
        stream = PredictionStream(base, 3, 0.0, seed=5)
        for t in range(6):
            for tau in range(min(3, 5 - t) + 1):
                assert np.array_equal(stream.predicted(t, tau), base[t + tau])

    def test_error_magnitudes_exact(self):
        base = ParamSeq([np.array([1.0, -1.0]) for _ in range(8)])
        stream = PredictionStream(base, 4, lambda t, tau: 0.1 * tau, seed=2)
        for t in range(8):
            for tau in range(1, min(4, 7 - t) + 1):
                err = np.linalg.norm(stream.predicted(t, tau) - base[t + tau])
                assert err == pytest.approx(0.1 * tau, abs=1e-13)

    def test_power_matches_realized(self):
        base = ParamSeq([np.array([0.0, 0.0]) for _ in range(10)])
        stream = PredictionStream(base, 5, lambda t, tau: 0.05 * (t + tau),
                                  seed=1)
        for tau in range(6):
            assert stream.power(tau) == pytest.approx(
                stream.power_measured(tau), abs=1e-12)

    def test_rho_zero_beyond_final_step(self):
        base = ParamSeq([np.array([0.0]) for _ in range(4)])
        stream = PredictionStream(base, 3, 0.7, seed=0)
        assert stream.rho(2, 2) == 0.0
        assert stream.rho(3, 1) == 0.0

    def test_rescaled_magnitudes_keep_directions(self):
        base = ParamSeq([np.array([0.0, 0.0]) for _ in range(6)])
        s1 = PredictionStream(base, 2, 0.1, seed=9)
        s2 = PredictionStream(base, 2, 0.2, seed=9)
        d1 = s1.predicted(1, 2) - base[3]
        d2 = s2.predicted(1, 2) - base[3]
        assert np.allclose(d2, 2.0 * d1, atol=1e-14)

    def test_negative_schedule_rejected(self):
        base = ParamSeq([np.array([0.0]) for _ in range(4)])
        with pytest.raises(ModelError):
            PredictionStream(base, 2, -0.1, seed=0)


class TestControllability:
    def test_identity_dynamics_single_step(self):
        As = [np.eye(2)] * 3
        Bs = [np.eye(2)] * 3
        assert np.array_equal(controllability_matrix(As, Bs, 0, 1), np.eye(2))

    def test_lti_reproduces_kalman_matrix(self):
        rng = np.random.default_rng(3)
        A = rng.normal(size=(3, 3))
        B = rng.normal(size=(3, 1))
        M = controllability_matrix([A] * 3, [B] * 3, 0, 3)
        kalman = np.hstack([A @ A @ B, A @ B, B])
        assert np.allclose(M, kalman, atol=1e-12)

    def test_transition_matrix_identity_for_empty_range(self):
        assert np.array_equal(transition_matrix([np.eye(2)], 1, 1), np.eye(2))

    def test_zero_A_identity_B_sigma_one(self):
        As = [np.zeros((2, 2))] * 4
        Bs = [np.eye(2)] * 4
        assert min_singular_controllability(As, Bs, 1) == pytest.approx(1.0)

    def test_zero_B_flags_uncontrollable(self):
        As = [np.eye(2)] * 4
        Bs = [np.zeros((2, 1))] * 4
        assert min_singular_controllability(As, Bs, 2) == 0.0

    def test_out_of_range_window_rejected(self):
        with pytest.raises(ModelError):
            controllability_matrix([np.eye(1)] * 2, [np.eye(1)] * 2, 1, 2)


class TestValidateAssumptions:
    def test_constant_system_passes(self):
        report = validate_assumptions(const_system(), samples=50, seed=0)
        assert report["ok"]
        assert report["cost_lower"]["worst"] == pytest.approx(1.0)

    def test_planted_cost_violation_named(self):
        sys_ = const_system()
        sys_.Q = lambda t, xi: 3.0 * np.eye(1)  # exceeds the declared ceiling
        report = validate_assumptions(sys_, samples=20, seed=0)
        assert not report["ok"]
        assert not report["cost_upper"]["ok"]

    def test_sampled_tracking_preset_within_bounds(self):
        inst = presets.tracking_rand(T=10, seed=7)
        report = validate_assumptions(inst.system, samples=300, seed=7)
        assert report["ok"], report


class TestInstances:
    def test_inventory_alternating_targets(self):
        inst = presets.build_preset("inventory-two-sided", T=8)
        targets = [float(inst.truth[t][0]) for t in range(9)]
        assert targets == [(-0.8 if t % 2 == 0 else 0.8) for t in range(9)]

    def test_inventory_needs_target_count(self):
        with pytest.raises(ModelError):
            InventorySystem(T=4, targets=np.zeros(3))

    def test_inventory_rejects_negative_action_weight(self):
        with pytest.raises(ModelError):
            InventorySystem(T=2, targets=np.zeros(3), action_weight=-1.0)

    def test_build_instance_unknown_kind(self):
        with pytest.raises(ModelError):
            build_instance({"kind": "no-such-system"})

    def test_build_instance_dispatch_and_overrides(self):
        inst = build_instance({"kind": "disturbance"}, T=10, seed=3)
        assert inst.T == 10 and inst.seed == 3

    def test_preset_determinism(self):
        a = presets.build_preset("tracking-rand", T=12, seed=4)
        b = presets.build_preset("tracking-rand", T=12, seed=4)
        for t in range(13):
            assert np.array_equal(a.truth[t], b.truth[t])
        assert np.array_equal(a.x0, b.x0)

    def test_config_hash_stable_and_order_free(self):
        h1 = config_hash({"a": 1, "b": [2, 3]})
        h2 = config_hash({"b": [2, 3], "a": 1})
        assert h1 == h2 and len(h1) == 16


class TestSystemFamilies:
    def test_disturbance_system_kind_and_zero_reference(self):
        inst = presets.build_preset("disturbance", T=10)
        sys_ = inst.system
        assert sys_.kind == "disturbance"
        xi = np.array([0.9])
        assert np.array_equal(sys_.xbar(3, xi), np.zeros(2))
        assert sys_.bounds.L_A == 0.0 and sys_.bounds.D_xbar == 0.0

    def test_lipschitz_dynamics_is_row_norm_bound(self):
        sys_ = const_system(a=0.6, b=0.8)
        assert sys_.lipschitz_dynamics() == pytest.approx(np.hypot(0.6, 0.8))

    def test_short_horizon_rejected(self):
        with pytest.raises(ModelError):
            const_system(T=1)
