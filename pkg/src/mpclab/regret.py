"""Dynamic-regret accounting: hindsight-optimal baselines, explicit-constant
regret inequalities, aggregate error budgets, and horizon/noise sweeps.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import io
import json
import os
from typing import Sequence

import numpy as np

from . import engine, kkt
from .engine import TrajectoryRecord, solve_opt  # noqa: F401  (re-export)
from .model import Instance, ParamSeq, PredictionStream

Array = np.ndarray

REGRET_FLOOR = 1e-10  # regrets below this are solver noise; excluded from fits


def worker_count() -> int:
    raw = os.environ.get("MPCLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# regret report
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class RegretReport:
    cost_alg: float
    cost_opt: float
    regret: float
    sum_sq_errors: float
    constant_c: float
    regret_bound: float
    regret_ok: bool
    distance_lhs: Array
    distance_rhs: Array
    distance_ok: bool
    aggregate_E: float | None = None

    def to_json(self) -> str:
        doc = {
            "cost_alg": self.cost_alg,
            "cost_opt": self.cost_opt,
            "regret": self.regret,
            "sum_sq_errors": self.sum_sq_errors,
            "constant_c": self.constant_c,
            "regret_bound": self.regret_bound,
            "regret_ok": self.regret_ok,
            "distance_worst_violation": float(
                np.max(self.distance_lhs - self.distance_rhs, initial=0.0)),
            "distance_ok": self.distance_ok,
            "aggregate_E": self.aggregate_E,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def regret_inequalities(run: TrajectoryRecord, opt: TrajectoryRecord,
                        ell: float, L_g: float, C3: float,
                        gain_init: Array, tol: float = 1e-9) -> RegretReport:
    """Evaluate the explicit-constant regret inequality and the state-distance
    bound on an executed run.

    regret <= sqrt(c * cost_opt * sum e^2) + c * sum e^2 with
    c = (ell/2)(1 + 2 C3 L_g^2)(1 + C3), and
    dist_t <= L_g * sum_{i<t} gain_init(i) e_{t-1-i}.
    """
    gain_init = np.asarray(gain_init, float)
    T = run.T
    if gain_init.shape[0] < T:
        raise ValueError("gain_init table must cover offsets 0..T-1")
    regret = run.total_cost - opt.total_cost
    ssq = run.sum_sq_errors
    c = (ell / 2.0) * (1.0 + 2.0 * C3 * L_g ** 2) * (1.0 + C3)
    bound = float(np.sqrt(c * max(opt.total_cost, 0.0) * ssq) + c * ssq)
    lhs = run.distances.copy()
    rhs = np.zeros(T + 1)
    for t in range(1, T + 1):
        rhs[t] = L_g * float(
            sum(gain_init[i] * run.errors[t - 1 - i] for i in range(t)))
    dist_ok = bool(np.all(lhs <= rhs + tol))
    return RegretReport(run.total_cost, opt.total_cost, float(regret), ssq,
                        c, bound, bool(regret <= bound + tol),
                        lhs, rhs, dist_ok)


def aggregate_E(k: int, gain_state: Array, gain_param: Array,
                power: Sequence[float], T: int) -> float:
    """Aggregate forecast-error budget:
    sum_{tau<k} (gain_state + gain_param)(tau) P(tau)
    + (gain_state(k)^2 + gain_param(k)^2) T."""
    gain_state = np.asarray(gain_state, float)
    gain_param = np.asarray(gain_param, float)
    if gain_state.shape[0] < k + 1 or gain_param.shape[0] < k + 1:
        raise ValueError("gain tables must cover offsets 0..k")
    if len(power) < k:
        raise ValueError("power table must cover offsets 0..k-1")
    acc = sum((gain_state[tau] + gain_param[tau]) * float(power[tau])
              for tau in range(k))
    acc += (gain_state[k] ** 2 + gain_param[k] ** 2) * T
    return float(acc)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class SweepResult:
    variable: str
    values: Array
    regrets: Array
    slope: float
    intercept: float
    r2: float
    excluded: list
    log_x: bool = False

    def to_csv(self, header_lines: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        buf.write(f"{self.variable},regret,excluded\n")
        for v, r in zip(self.values, self.regrets):
            flag = int(v in self.excluded)
            buf.write(f"{v:.17g},{r:.17g},{flag}\n")
        return buf.getvalue()


def _fit_positive(xs: Array, regrets: Array, log_x: bool):
    mask = regrets > REGRET_FLOOR
    if mask.sum() < 2:
        return 0.0, 0.0, 1.0
    x = np.log(xs[mask]) if log_x else xs[mask]
    return kkt.loglinear_fit(x, regrets[mask])


def _map(fn, args_list):
    nw = worker_count()
    if nw == 1 or len(args_list) <= 1:
        return [fn(a) for a in args_list]
    with concurrent.futures.ThreadPoolExecutor(max_workers=nw) as ex:
        return list(ex.map(fn, args_list))


def sweep_horizon(instance: Instance, k_values: Sequence[int],
                  rule: engine.TerminalRule, seed: int = 0) -> SweepResult:
    """Zero-noise regret as a function of the window length."""
    opt = solve_opt(instance)
    T = instance.T

    def one(k):
        stream = PredictionStream(instance.truth, min(k, T), 0.0, seed=seed)
        run = engine.run_mpc(instance, stream, k,
                             engine.TerminalRule(rule.kind), opt=opt)
        return run.total_cost - opt.total_cost

    regrets = np.array(_map(one, list(k_values)), float)
    ks = np.asarray(list(k_values), float)
    slope, intercept, r2 = _fit_positive(ks, regrets, log_x=False)
    return SweepResult("k", ks, regrets, slope, intercept, r2, [])


def sweep_noise(instance: Instance, base_rho, scales: Sequence[float],
                k: int, rule: engine.TerminalRule, seed: int = 0,
                admission: dict | None = None) -> SweepResult:
    """Regret as a function of the forecast-noise scale at fixed window
    length.  ``base_rho(t, tau)`` is scaled multiplicatively; when
    ``admission`` carries the pipeline inputs (gain tables, R, C3, D_xstar,
    L_g), scales failing the smallness condition are excluded from the fit.
    """
    opt = solve_opt(instance)
    T = instance.T
    excluded = []
    if admission is not None:
        for s in scales:
            rep = engine.pipeline_admission_check(
                k, T, lambda t, tau: s * float(base_rho(t, tau)),
                admission["gain_state"], admission["gain_param"],
                admission["R"], admission["C3"], admission["D_xstar"],
                admission["L_g"])
            if not rep.ok:
                excluded.append(float(s))

    def one(s):
        stream = PredictionStream(
            instance.truth, min(k, T),
            lambda t, tau: s * float(base_rho(t, tau)), seed=seed)
        run = engine.run_mpc(instance, stream, k,
                             engine.TerminalRule(rule.kind), opt=opt)
        return run.total_cost - opt.total_cost

    regrets = np.array(_map(one, list(scales)), float)
    xs = np.asarray(list(scales), float)
    keep = np.array([s not in excluded and s > 0 for s in xs])
    slope, intercept, r2 = _fit_positive(xs[keep], regrets[keep], log_x=True)
    return SweepResult("noise_scale", xs, regrets, slope, intercept, r2,
                       excluded, log_x=True)
