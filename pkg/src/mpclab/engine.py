"""Receding-horizon controller: per-step windowed solves on forecasts,
closed-loop rollout on the true dynamics, and per-step error accounting.
"""

from __future__ import annotations

import dataclasses
import io
from typing import Sequence

import numpy as np

from . import ftocp
from .model import Instance, PredictionStream, TerminalCost

Array = np.ndarray


@dataclasses.dataclass
class TerminalRule:
    """How the controller caps each window.

    kinds:
      - "zero": pin the window's final state to the origin;
      - "predicted_tracking": pin it to the forecast reference point;
      - "reference": pin it to a precomputed nominal trajectory (the solve of
        the full horizon under all-zero parameters);
      - "true": always use the instance's own terminal cost.

    Whenever the window reaches the final step, the instance's terminal cost
    is used regardless of kind (with the forecast terminal parameter).
    """

    kind: str = "zero"
    reference_states: Array | None = None

    KINDS = ("zero", "predicted_tracking", "reference", "true")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown terminal rule {self.kind!r}")

    def prepare(self, instance: Instance) -> None:
        """Precompute the nominal trajectory for the "reference" kind."""
        if self.kind != "reference" or self.reference_states is not None:
            return
        sys = instance.system
        zero_params = [np.zeros_like(instance.truth[t])
                       for t in range(sys.T + 1)]
        terminal = (TerminalCost.indicator(instance.terminal_param)
                    if sys.kind == "inventory"
                    else sys.terminal_cost(zero_params[-1]))
        spec = ftocp.FtocpSpec(0, sys.T, np.atleast_1d(instance.x0),
                               zero_params, terminal)
        self.reference_states = ftocp.solve(spec, sys).states

    def build(self, instance: Instance, t: int, t2: int,
              params: Sequence[Array]) -> TerminalCost:
        sys = instance.system
        if t2 == sys.T or self.kind == "true":
            if sys.kind == "inventory":
                return TerminalCost.indicator(instance.terminal_param)
            return sys.terminal_cost(params[-1])
        if self.kind == "zero":
            return TerminalCost.indicator(np.zeros(sys.n))
        if self.kind == "predicted_tracking":
            if sys.kind == "inventory":
                return TerminalCost.indicator(np.atleast_1d(params[-1]))
            return TerminalCost.indicator(sys.xbar(t2, params[-1]))
        if self.reference_states is None:
            raise RuntimeError("reference rule not prepared")
        return TerminalCost.indicator(self.reference_states[t2])


@dataclasses.dataclass
class TrajectoryRecord:
    """One closed-loop run (or the hindsight-optimal run)."""

    states: Array        # (T+1, n)
    actions: Array       # (T, m)
    errors: Array        # (T,), distance to the clairvoyant action
    distances: Array     # (T+1,), distance to the hindsight-optimal state
    stage_costs: Array   # (T,) or (T+1,) with a counted terminal stage
    total_cost: float
    k: int | None = None
    rule_kind: str | None = None

    @property
    def T(self) -> int:
        return self.actions.shape[0]

    @property
    def sum_sq_errors(self) -> float:
        return float(np.sum(self.errors ** 2))

    @property
    def max_state_norm(self) -> float:
        return float(max(np.linalg.norm(x) for x in self.states))

    def dynamics_residual(self, instance: Instance) -> float:
        sys = instance.system
        worst = 0.0
        for t in range(self.T):
            nxt = sys.dynamics(t, self.states[t], self.actions[t],
                               instance.truth[t])
            worst = max(worst,
                        float(np.linalg.norm(self.states[t + 1] - nxt)))
        return worst


def _stage_costs_and_total(instance: Instance, states: Array,
                           actions: Array) -> tuple[Array, float]:
    sys = instance.system
    T = sys.T
    if sys.kind == "inventory":
        top = T + 1 if sys.include_terminal_stage else T
        costs = np.array([sys.stage_cost(t, float(states[t, 0]),
                                         float(instance.truth[t][0]))
                          for t in range(top)])
        if sys.action_weight > 0.0:
            costs[:T] += sys.action_weight * actions[:, 0] ** 2
        return costs, float(costs.sum())
    costs = np.zeros(T)
    for t in range(T):
        _, _, _, Q, R, xbar = sys.step_data(t, instance.truth[t])
        d = states[t] - xbar
        costs[t] = float(d @ Q @ d + actions[t] @ R @ actions[t])
    total = float(costs.sum()) + instance.terminal_cost().value(states[T])
    return costs, total


def solve_opt(instance: Instance) -> TrajectoryRecord:
    """Hindsight-optimal trajectory: the full-horizon solve under the true
    parameters."""
    sys = instance.system
    T = sys.T
    params = [instance.truth[t] for t in range(T + 1)]
    spec = ftocp.FtocpSpec(0, T, np.atleast_1d(instance.x0), params,
                           instance.terminal_cost())
    sol = ftocp.solve(spec, sys)
    stage, total = _stage_costs_and_total(instance, sol.states, sol.actions)
    return TrajectoryRecord(sol.states, sol.actions, np.zeros(T),
                            np.zeros(T + 1), stage, total, k=None,
                            rule_kind="opt")


def run_mpc(instance: Instance, stream: PredictionStream, k: int,
            rule: TerminalRule, opt: TrajectoryRecord | None = None
            ) -> TrajectoryRecord:
    """Closed-loop receding-horizon run.

    At each step t the controller solves the window [t, min(t+k, T)] on the
    forecasts, commits the first action, and the true dynamics advance the
    state.  Per-step errors compare the committed action with the optimal
    continuation from the same state under the true parameters.  Constrained
    infeasibility aborts the run with the step index attached.
    """
    if k < 1:
        raise ValueError("window length k must be >= 1")
    if stream.k < min(k, stream.base.T):
        raise ValueError("forecast stream shorter than the window")
    sys = instance.system
    T = sys.T
    rule.prepare(instance)
    if opt is None:
        opt = solve_opt(instance)

    states = np.zeros((T + 1, sys.n))
    actions = np.zeros((T, sys.m))
    errors = np.zeros(T)
    states[0] = np.atleast_1d(instance.x0)
    for t in range(T):
        t2 = min(t + k, T)
        params = stream.window(t, t2)
        terminal = rule.build(instance, t, t2, params)
        spec = ftocp.FtocpSpec(t, t2, states[t], params, terminal)
        try:
            sol = ftocp.solve(spec, sys)
        except ftocp.Infeasible as exc:
            raise ftocp.Infeasible(f"window at step {t} infeasible: {exc}",
                                   step=t) from exc
        u = sol.first_action
        actions[t] = u
        best, _ = ftocp.clairvoyant_action(t, states[t], instance)
        errors[t] = float(np.linalg.norm(u - best))
        states[t + 1] = np.atleast_1d(
            sys.dynamics(t, states[t], u, instance.truth[t]))
    distances = np.array([float(np.linalg.norm(states[t] - opt.states[t]))
                          for t in range(T + 1)])
    stage, total = _stage_costs_and_total(instance, states, actions)
    return TrajectoryRecord(states, actions, errors, distances, stage, total,
                            k=k, rule_kind=rule.kind)


# ---------------------------------------------------------------------------
# per-step error bound and admission
# ---------------------------------------------------------------------------

def per_step_error_bound_rhs(t: int, k: int, T: int, rho, gain_state,
                             gain_param, R: float, C3: float,
                             D_xstar: float) -> float:
    """Right-hand side of the per-step error bound at step t.

    rho(t, tau) is the forecast-error magnitude; the truncation term
    2R((R/C3 + D_xstar) gain_state(k) + gain_param(k)) applies only while the
    window is shorter than the remaining horizon (t < T - k).
    """
    gain_state = np.asarray(gain_state, float)
    gain_param = np.asarray(gain_param, float)
    if gain_state.shape[0] < k + 1 or gain_param.shape[0] < k + 1:
        raise ValueError("gain tables must cover offsets 0..k")
    coef = R / C3 + D_xstar
    acc = 0.0
    for tau in range(k + 1):
        acc += (coef * gain_state[tau] + gain_param[tau]) * float(rho(t, tau))
    if t < T - k:
        acc += 2.0 * R * (coef * gain_state[k] + gain_param[k])
    return acc


@dataclasses.dataclass(frozen=True)
class AdmissionReport:
    ok: bool
    worst_rhs: float
    threshold: float
    worst_t: int

    @property
    def margin(self) -> float:
        return self.threshold - self.worst_rhs


def pipeline_admission_check(k: int, T: int, rho, gain_state, gain_param,
                             R: float, C3: float, D_xstar: float,
                             L_g: float) -> AdmissionReport:
    """Smallness condition admitting a run into the error-to-regret pipeline:
    the per-step bound must stay below R / (C3^2 L_g) at every step."""
    threshold = R / (C3 ** 2 * L_g)
    worst, worst_t = -np.inf, 0
    for t in range(T):
        rhs = per_step_error_bound_rhs(t, k, T, rho, gain_state, gain_param,
                                       R, C3, D_xstar)
        if rhs > worst:
            worst, worst_t = rhs, t
    return AdmissionReport(worst <= threshold, float(worst), threshold,
                           worst_t)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def trajectory_to_csv(rec: TrajectoryRecord,
                      header_lines: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    n = rec.states.shape[1]
    m = rec.actions.shape[1]
    cols = (["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
            + ["e", "dist_opt", "stage_cost"])
    buf.write(",".join(cols) + "\n")
    for t in range(rec.T + 1):
        row = [str(t)]
        row += [f"{v:.17g}" for v in rec.states[t]]
        if t < rec.T:
            row += [f"{v:.17g}" for v in rec.actions[t]]
            row += [f"{rec.errors[t]:.17g}"]
        else:
            row += [""] * (m + 1)
        row += [f"{rec.distances[t]:.17g}"]
        row += [f"{rec.stage_costs[t]:.17g}"
                if t < rec.stage_costs.shape[0] else ""]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()
