"""Saddle-matrix analysis: assembly, inverse block-decay profiles, closed-form
decay constants, and empirical sensitivity envelopes.
"""

from __future__ import annotations

import dataclasses
import io
import math
from typing import Sequence

import numpy as np

from . import _assembly, ftocp
from .model import Instance, TerminalCost

Array = np.ndarray

KktAssembly = _assembly.KktAssembly


def assemble(spec: ftocp.FtocpSpec, system) -> KktAssembly:
    """Assembled saddle system of a windowed problem, with initial state set."""
    wm = ftocp.window_matrices(spec, system)
    asm = _assembly.assemble_window(wm)
    _assembly.set_initial_state(asm, spec.z)
    return asm


# ---------------------------------------------------------------------------
# decay fits
# ---------------------------------------------------------------------------

def loglinear_fit(x: Array, y: Array) -> tuple[float, float, float]:
    """Least-squares fit of log(y) against x; returns (slope, intercept, r2)."""
    x = np.asarray(x, float)
    ly = np.log(np.asarray(y, float))
    if x.size < 2:
        return 0.0, float(ly[0]) if x.size else 0.0, 1.0
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(coef[0]), float(coef[1]), r2


@dataclasses.dataclass
class DecayFit:
    """Dominating geometric envelope C * lam^offset of a measured profile."""

    C: float
    lam: float
    r2: float
    offsets: Array
    profile: Array

    def __post_init__(self):
        # the reported envelope must dominate every measured value
        slack = self.C * self.lam ** self.offsets * (1 + 1e-9) - self.profile
        assert np.all(slack >= -1e-12 * max(1.0, self.profile.max())), \
            "envelope does not dominate the profile"


def fit_decay(offsets: Array, maxima: Array, floor: float = 1e-300) -> DecayFit:
    """Fit per-offset maxima with a geometric envelope.

    The rate comes from a log-linear least-squares fit; the coefficient is then
    inflated so the envelope dominates every measured value.  A profile that is
    zero beyond offset 0 reports rate 0.
    """
    offsets = np.asarray(offsets, float)
    maxima = np.asarray(maxima, float)
    pos = maxima > floor
    if not np.any(pos[offsets > 0]):
        C = float(maxima.max(initial=0.0))
        return DecayFit(C, 0.0, 1.0, offsets, maxima)
    slope, _, r2 = loglinear_fit(offsets[pos], maxima[pos])
    lam = float(np.exp(min(slope, 0.0)))
    lam = min(lam, 1.0 - 1e-12) if lam < 1.0 else lam
    with np.errstate(divide="ignore"):
        C = float(np.max(maxima[pos] / lam ** offsets[pos]))
    return DecayFit(C, lam, r2, offsets, maxima)


def block_inverse_profile(asm: KktAssembly):
    """Spectral norms of the blocks of the permuted inverse.

    Returns (norms matrix indexed by block pair, per-offset maxima, DecayFit).
    """
    U = asm.Upsilon
    try:
        Uinv = np.linalg.inv(U)
    except np.linalg.LinAlgError as exc:
        raise ftocp.SingularKKT(str(exc)) from exc
    nb = asm.n_blocks
    norms = np.zeros((nb, nb))
    for i, si in enumerate(asm.block_slices):
        for j, sj in enumerate(asm.block_slices):
            norms[i, j] = np.linalg.norm(Uinv[si, sj], 2)
    offsets = np.arange(nb)
    maxima = np.array([
        max(norms[i, j] for i in range(nb) for j in range(nb)
            if abs(i - j) == off)
        for off in offsets])
    return norms, maxima, fit_decay(offsets, maxima)


# ---------------------------------------------------------------------------
# closed-form constants
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class SaddleBounds:
    """Bounds on the singular spectrum of [[M, N'], [N, 0]] from the spectra
    of the blocks.  Two lower-bound variants are reported because the two
    published derivations disagree; the ``proof`` variant is the conservative
    one certified by measurement."""

    statement_lower: float
    proof_lower: float
    upper: float


def saddle_spectrum_bounds(sM_lo: float, sM_hi: float,
                           sN_lo: float, sN_hi: float) -> SaddleBounds:
    if min(sM_lo, sM_hi, sN_lo, sN_hi) <= 0:
        raise ValueError("spectra must be positive")
    if sM_lo > sM_hi or sN_lo > sN_hi:
        raise ValueError("lower bounds must not exceed upper bounds")
    statement = (min(sM_lo, 1.0) * sN_hi
                 * math.sqrt(sM_hi / (2 * sM_lo * sM_hi + sM_lo * sN_lo ** 2)))
    proof = (min(sM_lo, 1.0) * sN_lo
             * math.sqrt(sM_lo / (2 * sM_lo * sM_hi + sM_hi * sN_hi ** 2)))
    upper = math.sqrt(2.0) * (sM_hi + sN_hi)
    return SaddleBounds(statement, proof, upper)


@dataclasses.dataclass(frozen=True)
class SpectrumBounds:
    sigma_lo: float
    sigma_hi: float
    sigma_R_hi: float
    source: str  # "declared" | "measured"

    def __post_init__(self):
        if not (0 < self.sigma_lo <= self.sigma_hi):
            raise ValueError("need 0 < sigma_lo <= sigma_hi")


@dataclasses.dataclass(frozen=True)
class TrackingDecayConstants:
    """Closed-form decay constants of the tracking-setting saddle inverse."""

    sigma_lo: float
    sigma_hi: float
    decay_rate: float   # geometric rate of inverse-block decay
    decay_coef: float   # coefficient dominating every inverse block
    diff_coef: float    # coefficient of the inverse-difference bound
    degenerate: bool = False


def tracking_decay_constants(mu: float, ell: float, a: float, b: float,
                             sigma: float, L_A: float = 0.0, L_B: float = 0.0,
                             L_Q: float = 0.0, L_R: float = 0.0,
                             L_P: float = 0.0) -> TrackingDecayConstants:
    if min(mu, ell, a, b, sigma) <= 0:
        raise ValueError("inputs must be positive")
    if mu > ell:
        raise ValueError("need mu <= ell")
    sigma_lo = (min(mu, 1.0) * (a + b + 1.0)
                * math.sqrt(ell / (2 * mu * ell + mu * sigma ** 2)))
    sigma_hi = math.sqrt(2.0) * (ell + a + b + 1.0)
    if sigma_lo >= sigma_hi:
        return TrackingDecayConstants(sigma_lo, sigma_hi, 0.0, math.inf,
                                      math.inf, degenerate=True)
    rate = math.sqrt((sigma_hi - sigma_lo) / (sigma_hi + sigma_lo))
    coef = 4.0 * (ell + 1.0 + a + b) / (sigma_lo ** 2 * rate)
    diff = coef ** 2 * (max(L_Q + L_R, L_P) + (2.0 / rate) * (L_A + L_B))
    return TrackingDecayConstants(sigma_lo, sigma_hi, rate, coef, diff)


@dataclasses.dataclass(frozen=True)
class GeneralDecayConstants:
    coef: float
    rate: float


def general_decay_constants(sigma_lo: float, sigma_hi: float,
                            sigma_R_hi: float) -> GeneralDecayConstants:
    """Decay constants of the general constrained setting from declared or
    measured spectrum bounds."""
    if not (0 < sigma_lo <= sigma_hi) or sigma_R_hi <= 0:
        raise ValueError("need 0 < sigma_lo <= sigma_hi and sigma_R_hi > 0")
    coef = math.sqrt(sigma_hi * sigma_R_hi / sigma_lo ** 2)
    rate = ((sigma_hi ** 2 - sigma_lo ** 2)
            / (sigma_hi ** 2 + sigma_lo ** 2)) ** 0.125
    return GeneralDecayConstants(coef, rate)


def tracking_sensitivity_coef(consts: TrackingDecayConstants, ell: float,
                              D_xbar: float, D_w: float, D_xstar: float,
                              R: float, L_w: float, L_xbar: float,
                              L_Q: float) -> float:
    """Closed-form coefficient of the first-action sensitivity envelopes in
    the tracking setting (the tables gain_param(t) = H * rate^t,
    gain_state(t) = H * rate^{2t})."""
    c2, c2p, lam = consts.decay_coef, consts.diff_coef, consts.decay_rate
    return (c2p * (2 * (ell * D_xbar + D_w) / (1 - lam) + R + D_xstar + 1.0)
            + c2 * (L_w + ell * L_xbar + D_xbar * L_Q + 1.0))


def measured_sigma(instance: Instance, k: int | None = None) -> float:
    """sigma_min of the assembled dynamics blocks (full window and, when k is
    given, the pinned-terminal window), minimized over both."""
    sys = instance.system
    T = sys.T
    params = [instance.truth[t] for t in range(T + 1)]
    spec = ftocp.FtocpSpec(0, T, np.zeros(sys.n), params,
                           TerminalCost.zero(sys.n))
    asm = assemble(spec, sys)
    smin = float(np.linalg.svd(asm.N, compute_uv=False).min())
    if k is not None and k < T:
        spec_h = ftocp.FtocpSpec(0, k, np.zeros(sys.n), params[:k + 1],
                                 TerminalCost.indicator(np.zeros(sys.n)))
        asm_h = assemble(spec_h, sys)
        smin = min(smin,
                   float(np.linalg.svd(asm_h.N, compute_uv=False).min()))
    return smin


# ---------------------------------------------------------------------------
# empirical sensitivity envelopes
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class GainTables:
    """Envelopes of the windowed solution's sensitivities by temporal offset.

    gain_state(tau): coefficient multiplying ||z|| in the first-action
    response to a parameter change at offset tau; gain_param(tau): the
    state-independent part; gain_init(tau): response of states/actions at
    offset tau to an initial-state change.
    """

    gain_state: Array
    gain_param: Array
    gain_init: Array
    mode: str = "measured"

    @property
    def C3(self) -> float:
        return float(max(np.sum(self.gain_init), 1.0))

    def as_dict(self) -> dict:
        return {"mode": self.mode,
                "gain_state": self.gain_state.tolist(),
                "gain_param": self.gain_param.tolist(),
                "gain_init": self.gain_init.tolist()}


def _fd_first_action(spec_builder, base, idx, step, system):
    hi = base.copy()
    lo = base.copy()
    hi[idx] += step
    lo[idx] -= step
    sol_hi = ftocp.solve(spec_builder(hi), system)
    sol_lo = ftocp.solve(spec_builder(lo), system)
    return (sol_hi.first_action - sol_lo.first_action) / (2 * step)


def _window_action_jacobians(instance, t, t2, z, terminal_builder,
                             include_terminal_target=True):
    """Jacobians of the committed action w.r.t. each window parameter (and,
    for pinned terminals, the terminal target), as a dict offset -> norm.

    ``terminal_builder(params)`` rebuilds the terminal cost from the window
    parameters, so terminal data that depends on the forecast is
    differentiated through.
    """
    sys = instance.system
    truth = instance.truth
    base = np.concatenate([truth[s] for s in range(t, t2 + 1)])
    dims = [truth[s].shape[0] for s in range(t, t2 + 1)]
    splits = np.cumsum(dims)[:-1]

    def spec_from_params(flat):
        params = np.split(flat, splits)
        return ftocp.FtocpSpec(t, t2, z, params, terminal_builder(params))

    step = 1e-5 * (1.0 + float(np.linalg.norm(base)))
    out = {}
    pos = 0
    for tau, d in enumerate(dims):
        cols = [_fd_first_action(spec_from_params, base, pos + i, step, sys)
                for i in range(d)]
        J = np.stack(cols, axis=-1)
        out[tau] = max(out.get(tau, 0.0), float(np.linalg.norm(J, 2)))
        pos += d
    base_params = np.split(base, splits)
    terminal = terminal_builder(base_params)
    if include_terminal_target and terminal.kind == "indicator":
        # the pinned target itself is a perturbable datum at the far offset
        tgt = terminal.target
        stepz = 1e-5 * (1.0 + float(np.linalg.norm(tgt)))
        cols = []
        for i in range(tgt.shape[0]):
            hi = tgt.copy()
            lo = tgt.copy()
            hi[i] += stepz
            lo[i] -= stepz
            sh = ftocp.solve(ftocp.FtocpSpec(t, t2, z, base_params,
                                             TerminalCost.indicator(hi)), sys)
            sl = ftocp.solve(ftocp.FtocpSpec(t, t2, z, base_params,
                                             TerminalCost.indicator(lo)), sys)
            cols.append((sh.first_action - sl.first_action) / (2 * stepz))
        J = np.stack(cols, axis=-1)
        off = t2 - t
        out[off] = max(out.get(off, 0.0), float(np.linalg.norm(J, 2)))
    return out


def _init_state_jacobians(instance, t, opt_state):
    """Per-offset spectral norms of d(y_h, v_h)/dz for the window [t, T]."""
    sys = instance.system
    T = sys.T
    params = [instance.truth[s] for s in range(t, T + 1)]
    terminal = instance.terminal_cost()
    z = np.atleast_1d(opt_state)
    step = 1e-5 * (1.0 + float(np.linalg.norm(z)))
    sols_hi, sols_lo = [], []
    for i in range(z.shape[0]):
        hi = z.copy()
        lo = z.copy()
        hi[i] += step
        lo[i] -= step
        sols_hi.append(ftocp.solve(ftocp.FtocpSpec(t, T, hi, params, terminal),
                                   sys))
        sols_lo.append(ftocp.solve(ftocp.FtocpSpec(t, T, lo, params, terminal),
                                   sys))
    out = {}
    K = T - t
    for h in range(K + 1):
        Jy = np.stack([(sols_hi[i].states[h] - sols_lo[i].states[h])
                       / (2 * step) for i in range(z.shape[0])], axis=-1)
        nrm = float(np.linalg.norm(Jy, 2))
        if h < K:
            Jv = np.stack([(sols_hi[i].actions[h] - sols_lo[i].actions[h])
                           / (2 * step) for i in range(z.shape[0])], axis=-1)
            nrm = max(nrm, float(np.linalg.norm(Jv, 2)))
        out[h] = max(out.get(h, 0.0), nrm)
    return out


def _monotone_envelope(table: Array) -> Array:
    """Non-increasing upper envelope (running maximum from the right)."""
    return np.maximum.accumulate(table[::-1])[::-1]


def measure_gain_tables(instance: Instance, k: int, terminal_rule,
                        opt_states: Array, R: float, seed: int = 0,
                        t_stride: int = 1, state_samples: int = 1,
                        include_terminal_target: bool = True) -> GainTables:
    """Measure sensitivity envelopes on the family of solves the controller
    actually performs.

    The windowed solution of a linear-quadratic problem is affine in the
    stacked parameters, so per-coordinate central differences recover the
    exact Jacobians; the envelopes then upper-bound any realized deviation by
    the triangle inequality.
    """
    sys = instance.system
    T = sys.T
    rng = np.random.default_rng(seed)
    gp = np.zeros(k + 1)
    gs = np.zeros(k + 1)
    for t in range(0, T, t_stride):
        t2 = min(t + k, T)

        def terminal_builder(params, _t=t, _t2=t2):
            return terminal_rule.build(instance, _t, _t2, params)

        z0 = np.zeros(sys.n)
        base_jac = _window_action_jacobians(instance, t, t2, z0,
                                            terminal_builder,
                                            include_terminal_target)
        for off, val in base_jac.items():
            gp[off] = max(gp[off], val)
        if sys.kind == "disturbance":
            # the solution map is affine with a state-independent parameter
            # Jacobian, so the state-coupled envelope is identically zero
            continue
        xstar = np.atleast_1d(opt_states[t])
        z_list = [xstar] if np.linalg.norm(xstar) > 1e-12 else []
        for _ in range(max(0, state_samples - len(z_list))):
            d = rng.normal(size=sys.n)
            d *= R / max(np.linalg.norm(d), 1e-12)
            z_list.append(xstar + d)
        for z in z_list:
            znorm = float(np.linalg.norm(z))
            if znorm < 1e-12:
                continue
            jac = _window_action_jacobians(instance, t, t2, z,
                                           terminal_builder,
                                           include_terminal_target)
            for off, val in jac.items():
                gs[off] = max(gs[off], max(0.0, val - base_jac.get(off, 0.0))
                              / znorm)
    gi_map = {}
    for t in range(0, T + 1, t_stride):
        jac = _init_state_jacobians(instance, t, opt_states[t])
        for off, val in jac.items():
            gi_map[off] = max(gi_map.get(off, 0.0), val)
    gi = np.zeros(T + 1)
    for off, val in gi_map.items():
        gi[off] = val
    gi[0] = max(gi[0], 1.0)
    return GainTables(_monotone_envelope(gs), _monotone_envelope(gp),
                      _monotone_envelope(gi), mode="measured")


def theory_gain_tables(instance: Instance, k: int, *, R: float,
                       D_xstar: float, sigma: float | None = None) -> GainTables:
    """Closed-form envelopes from the declared system bounds."""
    sys = instance.system
    bb = sys.bounds
    if sigma is None:
        sigma = measured_sigma(instance, k)
    consts = tracking_decay_constants(bb.mu, bb.ell, bb.a, bb.b, sigma,
                                      bb.L_A, bb.L_B, bb.L_Q, bb.L_R, bb.L_P)
    H = tracking_sensitivity_coef(consts, bb.ell, bb.D_xbar, bb.D_w, D_xstar,
                                  R, bb.L_w, bb.L_xbar, bb.L_Q)
    lam = consts.decay_rate
    taus = np.arange(k + 1)
    gp = H * lam ** taus
    if sys.kind == "disturbance":
        gs = np.zeros(k + 1)
    else:
        gs = H * lam ** (2 * taus)
    gi = H * lam ** np.arange(sys.T + 1)
    gi[0] = max(gi[0], 1.0)
    return GainTables(gs, gp, gi, mode="theory")


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def profile_to_csv(offsets: Sequence[int], measured: Sequence[float],
                   theory: Sequence[float] | None,
                   header_lines: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    buf.write("offset,max_block_norm,theory_bound\n")
    for i, off in enumerate(offsets):
        tb = "" if theory is None else f"{theory[i]:.17g}"
        buf.write(f"{off},{measured[i]:.17g},{tb}\n")
    return buf.getvalue()


def constants_to_text(values: dict, header_lines: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    for key, val in values.items():
        buf.write(f"{key} = {val:.17g}\n" if isinstance(val, float)
                  else f"{key} = {val}\n")
    return buf.getvalue()
