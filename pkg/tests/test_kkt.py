"""Saddle-matrix assembly, closed-form constants, decay fits, and measured
sensitivity envelopes."""

import math

import numpy as np
import pytest

import oracles
from mpclab import engine, ftocp, kkt, presets
from mpclab.ftocp import FtocpSpec
from mpclab.model import TerminalCost


def tracking_assembly(T=12, seed=5, terminal="quadratic", K=None):
    inst = presets.tracking_rand(T=T, seed=seed)
    K = T if K is None else K
    params = [inst.truth[t] for t in range(K + 1)]
    if terminal == "quadratic":
        term = inst.system.terminal_cost(params[-1])
    else:
        term = TerminalCost.indicator(np.zeros(2))
    spec = FtocpSpec(0, K, np.zeros(2), params, term)
    return inst, kkt.assemble(spec, inst.system)


class TestAssemblyStructure:
    def test_full_variant_blocks(self):
        _, asm = tracking_assembly(T=8, K=3)
        assert asm.variant == "full"
        assert asm.n_blocks == 4
        sizes = [s.stop - s.start for s in asm.block_slices]
        assert sizes == [5, 5, 5, 4]  # (y, v, eta) thrice, then (y_K, eta_K)

    def test_hat_variant_blocks(self):
        _, asm = tracking_assembly(T=8, K=3, terminal="indicator")
        assert asm.variant == "hat"
        sizes = [s.stop - s.start for s in asm.block_slices]
        assert sizes == [5, 5, 5, 2]  # last block is the final multiplier

    def test_hat_drops_last_state_columns(self):
        inst, full = tracking_assembly(T=8, K=3, terminal="quadratic")
        _, hat = tracking_assembly(T=8, K=3, terminal="indicator")
        ncol = hat.N.shape[1]
        assert np.array_equal(hat.N, full.N[:, :ncol])

    def test_upsilon_symmetric_block_tridiagonal(self):
        _, asm = tracking_assembly(T=10, K=6)
        U = asm.Upsilon
        assert np.allclose(U, U.T, atol=1e-12)
        for i, si in enumerate(asm.block_slices):
            for j, sj in enumerate(asm.block_slices):
                if abs(i - j) >= 2:
                    assert np.all(U[si, sj] == 0.0)

    def test_inverse_symmetric(self):
        _, asm = tracking_assembly(T=10, K=6)
        Uinv = np.linalg.inv(asm.Upsilon)
        assert np.allclose(Uinv, Uinv.T, atol=1e-10)

    def test_saddle_matrix_matches_oracle_layout(self):
        _, asm = tracking_assembly(T=8, K=3)
        assert np.array_equal(asm.H, oracles.saddle_matrix(asm.M, asm.N))


class TestClosedFormConstants:
    def test_tracking_spot_values(self):
        c = kkt.tracking_decay_constants(1.0, 1.0, 1.0, 1.0, 1.0)
        assert c.sigma_hi == pytest.approx(4.0 * math.sqrt(2.0))
        assert c.sigma_lo == pytest.approx(math.sqrt(3.0))
        assert 0.0 < c.decay_rate < 1.0
        assert c.decay_coef == pytest.approx(16.0 / (3.0 * c.decay_rate))

    def test_tracking_validation(self):
        with pytest.raises(ValueError):
            kkt.tracking_decay_constants(2.0, 1.0, 1.0, 1.0, 1.0)  # mu > ell
        with pytest.raises(ValueError):
            kkt.tracking_decay_constants(1.0, 1.0, 0.0, 1.0, 1.0)

    def test_general_spot_values(self):
        g = kkt.general_decay_constants(1.0, 1.0, 2.0)
        assert g.coef == pytest.approx(math.sqrt(2.0))
        assert g.rate == 0.0
        g2 = kkt.general_decay_constants(1.0, 2.0, 2.0)
        assert g2.coef == pytest.approx(2.0)
        assert g2.rate == pytest.approx((3.0 / 5.0) ** 0.125)

    def test_general_rate_scale_invariant(self):
        a = kkt.general_decay_constants(0.3, 1.1, 1.0).rate
        b = kkt.general_decay_constants(3.0, 11.0, 1.0).rate
        assert a == pytest.approx(b, rel=1e-12)

    def test_sensitivity_coef_monotone_in_radius(self):
        c = kkt.tracking_decay_constants(0.5, 2.0, 1.0, 1.0, 0.8, L_A=0.2)
        lo = kkt.tracking_sensitivity_coef(c, 2.0, 0.1, 0.1, 0.2, 1.0,
                                           0.2, 0.2, 0.0)
        hi = kkt.tracking_sensitivity_coef(c, 2.0, 0.1, 0.1, 0.2, 2.0,
                                           0.2, 0.2, 0.0)
        assert 0.0 < lo < hi


class TestSaddleBounds:
    def test_golden_ratio_case(self):
        # scalar M = N = 1: singular values are phi and 1/phi
        S = oracles.saddle_matrix(np.eye(1), np.eye(1))
        sv = np.linalg.svd(S, compute_uv=False)
        b = kkt.saddle_spectrum_bounds(1.0, 1.0, 1.0, 1.0)
        assert b.proof_lower <= sv.min() + 1e-12
        assert b.statement_lower <= sv.min() + 1e-12
        assert sv.max() <= b.upper + 1e-12
        assert b.proof_lower == pytest.approx(1.0 / math.sqrt(3.0))

    def test_validation(self):
        with pytest.raises(ValueError):
            kkt.saddle_spectrum_bounds(0.0, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            kkt.saddle_spectrum_bounds(2.0, 1.0, 1.0, 1.0)


class TestDecayFits:
    def test_loglinear_exact_geometric(self):
        x = np.arange(8, dtype=float)
        y = 3.0 * 0.6 ** x
        slope, intercept, r2 = kkt.loglinear_fit(x, y)
        assert slope == pytest.approx(math.log(0.6), abs=1e-12)
        assert intercept == pytest.approx(math.log(3.0), abs=1e-12)
        assert r2 == pytest.approx(1.0)

    def test_fit_dominates_profile(self):
        rng = np.random.default_rng(0)
        offs = np.arange(10, dtype=float)
        prof = 2.0 * 0.5 ** offs * rng.uniform(0.5, 1.0, size=10)
        fit = kkt.fit_decay(offs, prof)
        assert np.all(fit.C * fit.lam ** offs * (1 + 1e-9) >= prof)
        assert 0.0 < fit.lam < 1.0

    def test_zero_beyond_origin_reports_rate_zero(self):
        offs = np.arange(5, dtype=float)
        prof = np.array([2.0, 0.0, 0.0, 0.0, 0.0])
        fit = kkt.fit_decay(offs, prof)
        assert fit.lam == 0.0
        assert fit.C == pytest.approx(2.0)


class TestMeasuredQuantities:
    def test_measured_sigma_positive_and_pinned_min(self):
        inst = presets.tracking_rand(T=12, seed=3)
        full = kkt.measured_sigma(inst)
        both = kkt.measured_sigma(inst, k=5)
        assert full > 0.0
        assert both <= full + 1e-12

    def test_block_profile_dominated_by_closed_form(self):
        inst, asm = tracking_assembly(T=12, seed=5)
        norms, maxima, fit = kkt.block_inverse_profile(asm)
        bb = inst.system.bounds
        sigma = kkt.measured_sigma(inst)
        c = kkt.tracking_decay_constants(bb.mu, bb.ell, bb.a, bb.b, sigma,
                                         bb.L_A, bb.L_B, bb.L_Q, bb.L_R,
                                         bb.L_P)
        nb = asm.n_blocks
        for i in range(nb):
            for j in range(nb):
                bound = c.decay_coef * c.decay_rate ** abs(i - j)
                assert norms[i, j] <= bound * (1 + 1e-9)

    def test_disturbance_state_envelope_identically_zero(self):
        inst = presets.disturbance(T=12, seed=0)
        opt = engine.solve_opt(inst)
        tables = kkt.measure_gain_tables(
            inst, 4, engine.TerminalRule("zero"), opt.states,
            R=max(opt.max_state_norm, 1.0), t_stride=3)
        assert np.all(tables.gain_state == 0.0)
        assert np.all(np.diff(tables.gain_param) <= 1e-15)  # non-increasing
        assert tables.C3 >= 1.0

    def test_theory_tables_shapes_and_disturbance_zeros(self):
        inst = presets.disturbance(T=12, seed=0)
        tables = kkt.theory_gain_tables(inst, 4, R=1.0, D_xstar=0.2)
        assert tables.gain_state.shape == (5,)
        assert np.all(tables.gain_state == 0.0)
        assert tables.gain_param.shape == (5,)
        assert tables.gain_init.shape == (13,)
        assert tables.gain_init[0] >= 1.0

    def test_state_vs_param_decay_rate_ratio(self):
        # the state-coupled envelope should decay at roughly twice the rate
        # of the state-free one (rates measured without the terminal-target
        # response, which sits at a fixed offset and masks the trend)
        inst = presets.tracking_rand(T=15, seed=3)
        opt = engine.solve_opt(inst)
        tables = kkt.measure_gain_tables(
            inst, 6, engine.TerminalRule("zero"), opt.states,
            R=max(opt.max_state_norm, 1.0), state_samples=2,
            include_terminal_target=False)
        taus = np.arange(7, dtype=float)
        gs, gp = tables.gain_state, tables.gain_param
        ms, mp = gs > 1e-9, gp > 1e-9
        slope_s, _, _ = kkt.loglinear_fit(taus[ms], gs[ms])
        slope_p, _, _ = kkt.loglinear_fit(taus[mp], gp[mp])
        assert slope_s < 0.0 and slope_p < 0.0
        assert 1.6 <= slope_s / slope_p <= 2.4

    def test_singular_assembly_raises(self):
        inst, asm = tracking_assembly(T=8, K=3)
        asm.M[:, :] = 0.0
        asm.N[:, :] = 0.0
        with pytest.raises(ftocp.SingularKKT):
            kkt.block_inverse_profile(asm)


class TestExports:
    def test_profile_csv_headers_and_rows(self):
        text = kkt.profile_to_csv([0, 1], [1.0, 0.5], [2.0, 1.0],
                                  ["config_hash=abc"])
        lines = text.strip().split("\n")
        assert lines[0] == "# config_hash=abc"
        assert lines[1] == "offset,max_block_norm,theory_bound"
        assert len(lines) == 4

    def test_constants_text(self):
        text = kkt.constants_to_text({"sigma": 1.5, "mode": "theory"},
                                     ["h1"])
        assert text.startswith("# h1\n")
        assert "sigma = 1.5" in text
        assert "mode = theory" in text
