"""Preset instances, physical examples, and chain perturbation studies."""

import numpy as np
import pytest

from mpclab import presets
from mpclab.model import controllability_matrix, validate_assumptions


class TestPendulum:
    def test_determinant_matches_closed_form(self):
        for M in (0.4, 0.5, 0.55, 0.6):
            A, B = presets.pendulum_matrices(M, **presets.PENDULUM_DEFAULTS)
            C = controllability_matrix([A] * 4, [B] * 4, 0, 4)
            det = abs(float(np.linalg.det(C)))
            closed = presets.pendulum_det_closed_form(
                M, **presets.PENDULUM_DEFAULTS)
            assert det == pytest.approx(closed, rel=1e-8)

    def test_point_parameter_box_zero_lipschitz(self):
        sys = presets.pendulum_system(M_lo=0.5, M_hi=0.5, T=10)
        assert sys.bounds.L_A == 0.0
        assert sys.bounds.L_B == 0.0

    def test_declared_bounds_validate(self):
        inst = presets.pendulum(T=10)
        assert validate_assumptions(inst.system, samples=100)["ok"]


class TestGrid:
    def test_two_step_determinant_lower_bound(self):
        d = presets.GRID_DEFAULTS
        L = presets.path_laplacian(d["n_nodes"])
        D = np.eye(d["n_nodes"])
        bound = presets.grid_det_lower_bound(d["n_nodes"], d["delta"],
                                             d["m_hi"])
        xs = np.linspace(d["m_lo"], d["m_hi"], 20)
        for m1, m2 in zip(xs[:-1], xs[1:]):
            A1, B1 = presets.grid_matrices(m1, L=L, D=D, delta=d["delta"])
            A2, B2 = presets.grid_matrices(m2, L=L, D=D, delta=d["delta"])
            C = controllability_matrix([A1, A2], [B1, B2], 0, 2)
            assert abs(float(np.linalg.det(C))) >= bound

    def test_declared_bounds_validate(self):
        inst = presets.grid(T=10)
        assert validate_assumptions(inst.system, samples=100)["ok"]


class TestChainStudies:
    def test_closed_form_alternates(self):
        states = presets.two_sided_closed_form(4, 0.0)
        assert np.allclose(states, [0.4, -0.4, 0.4, -0.4])
        states = presets.two_sided_closed_form(5, 0.1)
        assert np.allclose(states, [0.5, -0.3, 0.5, -0.3, 0.5])

    def test_suite_default_perturbations(self):
        rows = presets.inventory_counterexample_suite(ps=(4, 5))
        eps_by_p = {r.p: r.eps for r in rows}
        assert eps_by_p[4] == pytest.approx(2.0 / 15.0)
        assert eps_by_p[5] == pytest.approx(2.0 / 25.0)

    def test_suite_response_equals_perturbation(self):
        rows = presets.inventory_counterexample_suite(ps=(6,))
        for r in rows:
            assert abs(r.diff_minus_eps) <= 1e-9
            assert r.closed_form_err <= 1e-9

    def test_suite_explicit_eps(self):
        rows = presets.inventory_counterexample_suite(ps=(4,),
                                                      eps_values=2.0 / 35.0)
        assert all(r.eps == pytest.approx(2.0 / 35.0) for r in rows)
        assert all(abs(r.diff_minus_eps) <= 1e-9 for r in rows)

    def test_suite_csv(self):
        rows = presets.inventory_counterexample_suite(ps=(4,))
        text = presets.suite_to_csv(rows, ["h"])
        lines = text.strip().split("\n")
        assert lines[0] == "# h"
        assert lines[1] == "p,eps,h,diff,diff_minus_eps,closed_form_err"
        assert len(lines) == 2 + 4

    def test_two_sided_sensitivity_is_flat(self):
        offsets, profile, _ = presets.inventory_sensitivity_profile(
            8, one_sided=False)
        assert np.allclose(profile, 1.0, atol=1e-7)

    def test_one_sided_sensitivity_decays(self):
        offsets, profile, fit = presets.inventory_sensitivity_profile(
            12, one_sided=True)
        assert fit.lam <= 0.95
        assert fit.r2 >= 0.9
        assert profile[0] > profile[-1]  # response fades away from the pin


class TestRegistry:
    def test_all_presets_buildable(self):
        for name in presets.PRESETS:
            inst = presets.build_preset(name)
            assert inst.T >= 2

    def test_unknown_preset(self):
        with pytest.raises(KeyError):
            presets.build_preset("no-such-preset")

    def test_disturbance_validates(self):
        inst = presets.disturbance(T=15)
        assert validate_assumptions(inst.system, samples=200)["ok"]
