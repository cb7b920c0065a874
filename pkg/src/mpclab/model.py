"""Problem instances: parameter sequences, forecast streams, and system families.

A system maps a per-step parameter vector to cost/dynamics data.  Instances
are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


class ModelError(ValueError):
    """Raised for inconsistent instance descriptions."""


# ---------------------------------------------------------------------------
# parameter sequences and forecast streams
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class ParamBox:
    """Axis-aligned admissible set for the per-step parameter.

    The library convention normalizes the admissible set to diameter <= 1;
    ``normalized`` rescales a wider box and reports the scale factor applied.
    """

    lo: Array
    hi: Array

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, float))
        hi = np.atleast_1d(np.asarray(self.hi, float))
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ModelError("invalid parameter box")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def normalized(self) -> tuple["ParamBox", float]:
        d = self.diameter()
        if d <= 1.0 or d == 0.0:
            return self, 1.0
        c = (self.lo + self.hi) / 2.0
        return ParamBox(c + (self.lo - c) / d, c + (self.hi - c) / d), 1.0 / d

    def sample(self, rng: np.random.Generator) -> Array:
        return rng.uniform(self.lo, self.hi)

    def center(self) -> Array:
        return (self.lo + self.hi) / 2.0

    def contains(self, xi: Array, tol: float = 1e-12) -> bool:
        xi = np.atleast_1d(xi)
        return bool(np.all(xi >= self.lo - tol) and np.all(xi <= self.hi + tol))


class ParamSeq:
    """Sequence of per-step parameter vectors for steps 0..T."""

    def __init__(self, values: Sequence[Array]):
        if len(values) < 2:
            raise ModelError("need at least steps 0 and 1")
        self.values = [np.atleast_1d(np.asarray(v, float)) for v in values]

    @property
    def T(self) -> int:
        return len(self.values) - 1

    def dim(self, t: int) -> int:
        return self.values[t].shape[0]

    def __getitem__(self, t: int) -> Array:
        return self.values[t]

    def __len__(self) -> int:
        return len(self.values)


def _unit_direction(rng: np.random.Generator, d: int) -> Array:
    """Uniform direction on the unit sphere of R^d (the two points of S^0
    for d == 1)."""
    while True:
        v = rng.normal(size=d)
        nrm = np.linalg.norm(v)
        if nrm > 1e-12:
            return v / nrm


class PredictionStream:
    """Forecasts of future parameters with exactly prescribed error magnitudes.

    ``rho(t, tau)`` is the distance between the forecast of step t+tau made at
    step t and the true value; directions are drawn uniformly on the unit
    sphere with a dedicated generator so that rescaling magnitudes keeps the
    directions fixed.  rho is forced to 0 whenever t + tau > T.
    """

    def __init__(self, base: ParamSeq, k: int,
                 rho: Callable[[int, int], float] | Array | float,
                 seed: int = 0):
        if k < 1:
            raise ModelError("forecast horizon k must be >= 1")
        self.base = base
        self.k = k
        self.seed = seed
        T = base.T
        table = np.zeros((T + 1, k + 1))
        for t in range(T + 1):
            for tau in range(k + 1):
                if t + tau > T:
                    continue
                if callable(rho):
                    table[t, tau] = float(rho(t, tau))
                elif np.ndim(rho) == 0:
                    table[t, tau] = float(rho) if tau > 0 else 0.0
                else:
                    table[t, tau] = float(np.asarray(rho)[t, tau])
        if np.any(table < 0):
            raise ModelError("error magnitudes must be nonnegative")
        self.rho_table = table
        rng = np.random.default_rng(seed)
        self._pred: list[list[Array]] = []
        for t in range(T + 1):
            row = []
            for tau in range(k + 1):
                if t + tau > T:
                    row.append(None)
                    continue
                truth = base[t + tau]
                direction = _unit_direction(rng, truth.shape[0])
                row.append(truth + table[t, tau] * direction)
            self._pred.append(row)

    def rho(self, t: int, tau: int) -> float:
        if t + tau > self.base.T or tau > self.k:
            return 0.0
        return float(self.rho_table[t, tau])

    def predicted(self, t: int, tau: int) -> Array:
        if t + tau > self.base.T:
            raise ModelError("forecast beyond the final step")
        if tau > self.k:
            raise ModelError("forecast beyond the horizon k")
        return self._pred[t][tau]

    def window(self, t: int, t2: int) -> list[Array]:
        """Forecasts xi_{t..t2} made at step t (inclusive of both ends)."""
        return [self.predicted(t, tau) for tau in range(t2 - t + 1)]

    def power(self, tau: int) -> float:
        """Sum over t of the squared tau-step forecast error."""
        T = self.base.T
        return float(sum(self.rho_table[t, tau] ** 2 for t in range(T - tau + 1)))

    def power_measured(self, tau: int) -> float:
        T = self.base.T
        acc = 0.0
        for t in range(T - tau + 1):
            acc += float(np.linalg.norm(self._pred[t][tau] - self.base[t + tau]) ** 2)
        return acc


# ---------------------------------------------------------------------------
# terminal costs
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class TerminalCost:
    """Terminal cost: quadratic, a hard state pin (indicator), or zero."""

    kind: str
    P: Array | None = None
    xbar: Array | None = None
    target: Array | None = None

    @staticmethod
    def quadratic(P: Array, xbar: Array) -> "TerminalCost":
        return TerminalCost("quadratic", P=np.atleast_2d(np.asarray(P, float)),
                            xbar=np.atleast_1d(np.asarray(xbar, float)))

    @staticmethod
    def indicator(target: Array) -> "TerminalCost":
        return TerminalCost("indicator",
                            target=np.atleast_1d(np.asarray(target, float)))

    @staticmethod
    def zero(n: int) -> "TerminalCost":
        return TerminalCost("zero", P=np.zeros((n, n)), xbar=np.zeros(n))

    def value(self, x: Array) -> float:
        x = np.atleast_1d(x)
        if self.kind == "quadratic":
            d = x - self.xbar
            return float(d @ self.P @ d)
        if self.kind == "zero":
            return 0.0
        return 0.0  # indicator: zero at the (enforced) target


# ---------------------------------------------------------------------------
# system families
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class Bounds:
    """Declared uniform bounds and Lipschitz constants of the parameter maps."""

    mu: float
    ell: float
    a: float
    b: float
    D_w: float = 0.0
    D_xbar: float = 0.0
    L_A: float = 0.0
    L_B: float = 0.0
    L_Q: float = 0.0
    L_R: float = 0.0
    L_xbar: float = 0.0
    L_w: float = 0.0
    L_P: float = 0.0


class LinearQuadraticSystem:
    """Time-varying linear dynamics with quadratic tracking costs.

    Every per-step quantity is a map of (t, xi); the terminal data is a map of
    the final parameter alone.
    """

    kind = "tracking"

    def __init__(self, n: int, m: int, T: int, *,
                 A: Callable[[int, Array], Array],
                 B: Callable[[int, Array], Array],
                 w: Callable[[int, Array], Array],
                 Q: Callable[[int, Array], Array],
                 R: Callable[[int, Array], Array],
                 xbar: Callable[[int, Array], Array],
                 P_T: Callable[[Array], Array],
                 xbar_T: Callable[[Array], Array],
                 bounds: Bounds, param_box: ParamBox):
        if T < 2:
            raise ModelError("horizon T must be >= 2")
        self.n, self.m, self.T = n, m, T
        self.A, self.B, self.w = A, B, w
        self.Q, self.R, self.xbar = Q, R, xbar
        self.P_T, self.xbar_T = P_T, xbar_T
        self.bounds = bounds
        self.param_box = param_box

    def step_data(self, t: int, xi: Array):
        return (self.A(t, xi), self.B(t, xi), self.w(t, xi),
                self.Q(t, xi), self.R(t, xi), self.xbar(t, xi))

    def terminal_cost(self, xi_T: Array) -> TerminalCost:
        return TerminalCost.quadratic(self.P_T(xi_T), self.xbar_T(xi_T))

    def dynamics(self, t: int, x: Array, u: Array, xi: Array) -> Array:
        A, B, w, *_ = self.step_data(t, xi)
        return A @ x + B @ u + w

    def lipschitz_dynamics(self) -> float:
        """Norm bound on [A B], the state/action sensitivity of one step."""
        return float(np.hypot(self.bounds.a, self.bounds.b))


class QuadraticTrackingSystem(LinearQuadraticSystem):
    """General family: dynamics, costs and references all parameter-dependent."""

    kind = "tracking"


class DisturbanceOnlySystem(LinearQuadraticSystem):
    """Fixed known dynamics and costs minimized at 0; only the additive
    disturbance depends on the parameter."""

    kind = "disturbance"

    def __init__(self, n, m, T, *, A, B, w, Q, R, P_T, bounds, param_box):
        zero_vec = lambda t, xi: np.zeros(n)
        super().__init__(
            n, m, T,
            A=lambda t, xi: A(t), B=lambda t, xi: B(t), w=w,
            Q=lambda t, xi: Q(t), R=lambda t, xi: R(t),
            xbar=zero_vec, P_T=lambda xi: P_T(), xbar_T=lambda xi: np.zeros(n),
            bounds=dataclasses.replace(bounds, L_A=0.0, L_B=0.0, L_Q=0.0,
                                       L_R=0.0, L_xbar=0.0, L_P=0.0,
                                       D_xbar=0.0),
            param_box=param_box)


@dataclasses.dataclass(frozen=True)
class InventorySystem:
    """Scalar stock-tracking chain: x_{t+1} = x_t + u_t, x in [-1, 1].

    The action constraint is one-sided (u >= u_lo) when u_hi is None, else
    two-sided.  ``include_terminal_stage`` records whether the stage cost of
    the final state enters the reported objective value.  ``action_weight``
    adds a smooth action cost action_weight * u^2 per step (still convex and
    smooth, strongly convex in the state).
    """

    T: int
    targets: Array
    u_lo: float = -0.8
    u_hi: float | None = 0.8
    x_lo: float = -1.0
    x_hi: float = 1.0
    include_terminal_stage: bool = True
    action_weight: float = 0.0

    kind = "inventory"
    n = 1
    m = 1

    def __post_init__(self):
        targets = np.asarray(self.targets, float)
        if targets.shape[0] != self.T + 1:
            raise ModelError("need one target per step 0..T")
        object.__setattr__(self, "targets", targets)
        if self.u_hi is not None and self.u_hi < self.u_lo:
            raise ModelError("empty action interval")
        if self.action_weight < 0:
            raise ModelError("action weight must be nonnegative")

    @property
    def param_box(self) -> ParamBox:
        return ParamBox(np.array([-0.5]), np.array([0.5]))

    def dynamics(self, t, x, u, xi) -> Array:
        return np.atleast_1d(x) + np.atleast_1d(u)

    def stage_cost(self, t: int, x: float, target: float) -> float:
        return float((x - target) ** 2)

    def lipschitz_dynamics(self) -> float:
        return float(np.sqrt(2.0))  # norm of [1 1]


@dataclasses.dataclass(frozen=True)
class Instance:
    """A fully realized problem: system + true parameters + initial state."""

    system: object
    truth: ParamSeq
    x0: Array
    name: str = "instance"
    seed: int = 0
    terminal_param: Array | None = None

    @property
    def T(self) -> int:
        return self.system.T

    def terminal_cost(self) -> TerminalCost:
        if self.system.kind == "inventory":
            tgt = self.terminal_param
            if tgt is None:
                raise ModelError("inventory instance needs a terminal target")
            return TerminalCost.indicator(tgt)
        return self.system.terminal_cost(self.truth[self.T])


# ---------------------------------------------------------------------------
# controllability
# ---------------------------------------------------------------------------

def transition_matrix(As: Sequence[Array], t2: int, t1: int) -> Array:
    """Product A_{t2-1} ... A_{t1} (identity when t2 <= t1)."""
    n = As[0].shape[0]
    Phi = np.eye(n)
    for t in range(t1, t2):
        Phi = As[t] @ Phi
    return Phi


def controllability_matrix(As: Sequence[Array], Bs: Sequence[Array],
                           t: int, p: int) -> Array:
    """n x (m p) matrix [Phi(t+p, t+1) B_t, ..., Phi(t+p, t+p) B_{t+p-1}]."""
    if p < 1 or t < 0 or t + p > len(As):
        raise ModelError("controllability window out of range")
    cols = [transition_matrix(As, t + p, t + j + 1) @ Bs[t + j]
            for j in range(p)]
    return np.hstack(cols)


def system_matrices(instance: Instance) -> tuple[list[Array], list[Array]]:
    """True dynamics matrices A_t, B_t, t = 0..T-1, of an instance."""
    sys = instance.system
    if sys.kind == "inventory":
        ones = [np.eye(1) for _ in range(sys.T)]
        return ones, [np.eye(1) for _ in range(sys.T)]
    As, Bs = [], []
    for t in range(sys.T):
        A, B, *_ = sys.step_data(t, instance.truth[t])
        As.append(A)
        Bs.append(B)
    return As, Bs


def min_singular_controllability(As, Bs, d: int) -> float:
    """min over valid t of sigma_min(M(t, d)); 0 flags loss of rank."""
    T = len(As)
    if d < 1 or d > T:
        raise ModelError("controllability index out of range")
    worst = np.inf
    for t in range(T - d + 1):
        M = controllability_matrix(As, Bs, t, d)
        s = np.linalg.svd(M, compute_uv=False)
        smin = float(s.min()) if M.shape[0] <= M.shape[1] else 0.0
        worst = min(worst, smin)
    return float(worst if np.isfinite(worst) else 0.0)


# ---------------------------------------------------------------------------
# assumption validation
# ---------------------------------------------------------------------------

def validate_assumptions(system: LinearQuadraticSystem, samples: int = 200,
                         seed: int = 0) -> dict:
    """Empirically check declared bounds on sampled parameters.

    Returns a report mapping each declared bound to its worst sampled value,
    the declared limit and a pass flag.
    """
    rng = np.random.default_rng(seed)
    bb = system.bounds
    worst = {
        "cost_eig_min": np.inf, "cost_eig_max": -np.inf,
        "A_norm": 0.0, "B_norm": 0.0, "w_norm": 0.0, "xbar_norm": 0.0,
    }
    for _ in range(samples):
        t = int(rng.integers(0, system.T))
        xi = system.param_box.sample(rng)
        A, B, w, Q, R, xbar = system.step_data(t, xi)
        for Mx in (Q, R):
            ev = np.linalg.eigvalsh(np.atleast_2d(Mx))
            worst["cost_eig_min"] = min(worst["cost_eig_min"], float(ev.min()))
            worst["cost_eig_max"] = max(worst["cost_eig_max"], float(ev.max()))
        worst["A_norm"] = max(worst["A_norm"], float(np.linalg.norm(A, 2)))
        worst["B_norm"] = max(worst["B_norm"], float(np.linalg.norm(B, 2)))
        worst["w_norm"] = max(worst["w_norm"], float(np.linalg.norm(w)))
        worst["xbar_norm"] = max(worst["xbar_norm"], float(np.linalg.norm(xbar)))
    xiT = system.param_box.sample(rng)
    ev = np.linalg.eigvalsh(np.atleast_2d(system.P_T(xiT)))
    worst["cost_eig_min"] = min(worst["cost_eig_min"], float(ev.min()))
    worst["cost_eig_max"] = max(worst["cost_eig_max"], float(ev.max()))

    tol = 1e-9
    checks = {
        "cost_lower": (worst["cost_eig_min"], bb.mu,
                       worst["cost_eig_min"] >= bb.mu - tol),
        "cost_upper": (worst["cost_eig_max"], bb.ell,
                       worst["cost_eig_max"] <= bb.ell + tol),
        "A_bound": (worst["A_norm"], bb.a, worst["A_norm"] <= bb.a + tol),
        "B_bound": (worst["B_norm"], bb.b, worst["B_norm"] <= bb.b + tol),
        "w_bound": (worst["w_norm"], bb.D_w, worst["w_norm"] <= bb.D_w + tol),
        "xbar_bound": (worst["xbar_norm"], bb.D_xbar,
                       worst["xbar_norm"] <= bb.D_xbar + tol),
    }
    report = {name: {"worst": v, "limit": lim, "ok": bool(ok)}
              for name, (v, lim, ok) in checks.items()}
    report["ok"] = all(c["ok"] for c in report.values() if isinstance(c, dict))
    return report


# ---------------------------------------------------------------------------
# instance descriptions (files / dicts)
# ---------------------------------------------------------------------------

def config_hash(config: dict) -> str:
    """Stable hash of a JSON-serializable configuration."""
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_instance_file(path: str):
    with open(path) as fh:
        desc = json.load(fh)
    return desc


def build_instance(desc: dict, T: int | None = None,
                   seed: int | None = None) -> Instance:
    """Construct an instance from a description dict (or file contents).

    Dispatches on ``desc["kind"]``; the named builders live in
    :mod:`mpclab.presets`.  T and seed override the description when given.
    """
    from . import presets

    desc = dict(desc)
    if T is not None:
        desc["T"] = T
    if seed is not None:
        desc["seed"] = seed
    kind = desc.pop("kind", None)
    if kind not in presets.BUILDERS:
        raise ModelError(f"unknown instance kind {kind!r}")
    return presets.BUILDERS[kind](**desc)
