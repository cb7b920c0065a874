"""Exact solvers for the windowed optimal control problem.

Two problem classes are supported exactly:

- time-varying linear dynamics with quadratic costs (saddle-point solve on
  the permuted block-tridiagonal system), and
- the constrained scalar stock chain (primal active-set QP).
"""

from __future__ import annotations

import dataclasses
import io
from typing import Sequence

import numpy as np

from . import _assembly
from .model import Instance, InventorySystem, TerminalCost

Array = np.ndarray


class SingularKKT(RuntimeError):
    """The saddle system is singular (e.g. the instance is uncontrollable)."""


class Infeasible(RuntimeError):
    """No trajectory satisfies the constraints of the window."""

    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step


@dataclasses.dataclass(frozen=True)
class FtocpSpec:
    """One windowed problem: steps t1..t2, initial state z, parameters
    xi_{t1..t2} (the last entry parameterizes the terminal data), and the
    terminal cost."""

    t1: int
    t2: int
    z: Array
    params: Sequence[Array]
    terminal: TerminalCost

    def __post_init__(self):
        if not (0 <= self.t1 <= self.t2):
            raise ValueError("window must satisfy 0 <= t1 <= t2")
        if len(self.params) != self.t2 - self.t1 + 1:
            raise ValueError("need one parameter vector per step of the window")
        object.__setattr__(self, "z", np.atleast_1d(np.asarray(self.z, float)))

    @property
    def K(self) -> int:
        return self.t2 - self.t1


@dataclasses.dataclass
class FtocpSolution:
    t1: int
    t2: int
    states: Array      # (K+1, n)
    actions: Array     # (K, m)
    duals: Array       # (K+1, n)
    value: float
    kkt_residual: float
    active_set: list | None = None

    @property
    def first_action(self) -> Array:
        return self.actions[0]

    def dynamics_residual(self, system, params) -> float:
        worst = 0.0
        for i in range(self.t2 - self.t1):
            nxt = system.dynamics(self.t1 + i, self.states[i],
                                  self.actions[i], params[i])
            worst = max(worst, float(np.linalg.norm(self.states[i + 1] - nxt)))
        return worst


# ---------------------------------------------------------------------------
# quadratic solver
# ---------------------------------------------------------------------------

def window_matrices(spec: FtocpSpec, system) -> _assembly.WindowMatrices:
    A, B, w, Q, R, xbar = [], [], [], [], [], []
    for i in range(spec.K):
        Ai, Bi, wi, Qi, Ri, xbi = system.step_data(spec.t1 + i, spec.params[i])
        A.append(np.atleast_2d(Ai))
        B.append(np.atleast_2d(Bi))
        w.append(np.atleast_1d(wi))
        Q.append(np.atleast_2d(Qi))
        R.append(np.atleast_2d(Ri))
        xbar.append(np.atleast_1d(xbi))
    return _assembly.WindowMatrices(A, B, w, Q, R, xbar, spec.terminal,
                                    system.n, system.m)


def solve_quadratic(spec: FtocpSpec, system) -> FtocpSolution:
    """Exact minimizer of the windowed linear-quadratic problem."""
    n = system.n
    if spec.K == 0:
        return FtocpSolution(
            spec.t1, spec.t2, np.array([spec.z]),
            np.zeros((0, system.m)), np.zeros((1, n)),
            spec.terminal.value(spec.z), 0.0)
    wm = window_matrices(spec, system)
    asm = _assembly.assemble_window(wm)
    _assembly.set_initial_state(asm, spec.z)
    try:
        chi, residual = _assembly.solve_assembly(asm)
    except np.linalg.LinAlgError as exc:
        raise SingularKKT(str(exc)) from exc
    if not np.all(np.isfinite(chi)):
        raise SingularKKT("non-finite solution")
    states, actions, duals = _assembly.extract_primal_dual(asm, chi)
    if asm.variant == "hat":
        last = wm.A[-1] @ states[-1] + wm.B[-1] @ actions[-1] + wm.w[-1]
        states = states + [last]
    states = np.array(states)
    actions = np.array(actions)
    value = 0.0
    for i in range(spec.K):
        d = states[i] - wm.xbar[i]
        value += float(d @ wm.Q[i] @ d + actions[i] @ wm.R[i] @ actions[i])
    if spec.terminal.kind == "quadratic":
        value += spec.terminal.value(states[-1])
    return FtocpSolution(spec.t1, spec.t2, states, actions,
                         np.array(duals), value, residual)


# ---------------------------------------------------------------------------
# stock-chain solver (primal active set)
# ---------------------------------------------------------------------------

def _active_set_qp(Hm, g, G, h, x, max_iter, tol=1e-9):
    """Primal active-set method for min 0.5 x'Hx + g'x s.t. Gx <= h, with a
    feasible start.  Returns (x, lam, working_set)."""
    nc = G.shape[0]
    work = [i for i in range(nc) if G[i] @ x >= h[i] - tol]
    lam = np.zeros(nc)
    for _ in range(max_iter):
        GW = G[work] if work else np.zeros((0, x.size))
        kkt = np.block([[Hm, GW.T],
                        [GW, np.zeros((len(work), len(work)))]])
        rhs = np.concatenate([-(Hm @ x + g), np.zeros(len(work))])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        p = sol[:x.size]
        lam_w = sol[x.size:]
        if np.linalg.norm(p) <= tol:
            lam[:] = 0.0
            for idx, i in enumerate(work):
                lam[i] = lam_w[idx]
            if all(lam_w >= -tol):
                return x, lam, list(work)
            drop = work[int(np.argmin(lam_w))]
            work.remove(drop)
            continue
        alpha = 1.0
        blocking = None
        for i in range(nc):
            if i in work:
                continue
            gi_p = G[i] @ p
            if gi_p > tol:
                a_i = (h[i] - G[i] @ x) / gi_p
                if a_i < alpha - tol:
                    alpha = max(a_i, 0.0)
                    blocking = i
        x = x + alpha * p
        if blocking is not None:
            work.append(blocking)
    raise Infeasible("active-set iteration cap exceeded")


def solve_inventory(spec: FtocpSpec, system: InventorySystem) -> FtocpSolution:
    """Exact minimizer of the constrained scalar chain window.

    Requires an indicator terminal; states are pinned at both ends and the
    problem is solved over the interior states.
    """
    if spec.terminal.kind != "indicator":
        raise ValueError("chain solver requires a pinned terminal state")
    K = spec.K
    z = float(spec.z[0])
    target = float(spec.terminal.target[0])
    targets = np.array([float(np.atleast_1d(p)[0]) for p in spec.params])
    u_lo, u_hi = system.u_lo, system.u_hi
    x_lo, x_hi = system.x_lo, system.x_hi
    gam = system.action_weight
    if K == 0:
        if abs(z - target) > 1e-9:
            raise Infeasible("empty window cannot move the state", spec.t1)
        val = system.stage_cost(0, z, targets[0]) if system.include_terminal_stage else 0.0
        return FtocpSolution(spec.t1, spec.t2, np.array([[z]]),
                             np.zeros((0, 1)), np.zeros((1, 1)), val, 0.0)
    lo_needed = (target - z) / K
    if lo_needed < u_lo - 1e-12 or (u_hi is not None and lo_needed > u_hi + 1e-12):
        raise Infeasible("terminal state unreachable under action bounds",
                         spec.t1)
    if not (x_lo - 1e-12 <= z <= x_hi + 1e-12) or not (
            x_lo - 1e-12 <= target <= x_hi + 1e-12):
        raise Infeasible("endpoint outside the state interval", spec.t1)

    nfree = K - 1
    if nfree == 0:
        x_full = np.array([z, target])
        lam = np.zeros(0)
        work = []
        G = np.zeros((0, 0))
        h = np.zeros(0)
        resid = 0.0
    else:
        Hm = 2.0 * np.eye(nfree)
        g = -2.0 * targets[1:K]
        if gam > 0.0:
            # smooth action cost gam * (x_{t+1} - x_t)^2 couples the chain
            Hm += 4.0 * gam * np.eye(nfree)
            idx = np.arange(nfree - 1)
            Hm[idx, idx + 1] -= 2.0 * gam
            Hm[idx + 1, idx] -= 2.0 * gam
            g = g.copy()
            g[0] -= 2.0 * gam * z
            g[-1] -= 2.0 * gam * target
        rows, rhs, names = [], [], []
        for t in range(1, K):
            r = np.zeros(nfree)
            r[t - 1] = 1.0
            rows.append(r.copy())
            rhs.append(x_hi)
            names.append(f"x{t}<=hi")
            rows.append(-r)
            rhs.append(-x_lo)
            names.append(f"x{t}>=lo")
        for t in range(K):
            r = np.zeros(nfree)
            c = 0.0
            if t >= 1:
                r[t - 1] = -1.0
            else:
                c -= z
            if t + 1 <= K - 1:
                r[t] = 1.0
            else:
                c += target
            # u_t = x_{t+1} - x_t = r @ xfree + c
            if u_hi is not None:
                rows.append(r.copy())
                rhs.append(u_hi - c)
                names.append(f"u{t}<=hi")
            rows.append(-r)
            rhs.append(-(u_lo - c))
            names.append(f"u{t}>=lo")
        G = np.array(rows)
        h = np.array(rhs)
        x0 = np.linspace(z, target, K + 1)[1:K]
        x_free, lam, work = _active_set_qp(Hm, g, G, h, x0,
                                           max_iter=10 * K * K)
        x_full = np.concatenate([[z], x_free, [target]])
        grad = Hm @ x_free + g
        resid = float(np.linalg.norm(grad + G.T @ lam))
        feas = float(np.max(G @ x_free - h, initial=0.0))
        comp = float(np.max(np.abs(lam * (G @ x_free - h)), initial=0.0))
        resid = max(resid, feas, comp)
        name_index = {nm: i for i, nm in enumerate(names)}
        work = [names[i] for i in sorted(work)]

    actions = np.diff(x_full)
    # multipliers of the dynamics equalities, reconstructed from the
    # action-bound multipliers (stationarity in u)
    duals = np.zeros((K + 1, 1))
    if nfree > 0:
        for t in range(K):
            hi_i = name_index.get(f"u{t}<=hi")
            lo_i = name_index.get(f"u{t}>=lo")
            val = 0.0
            if hi_i is not None:
                val += lam[hi_i]
            if lo_i is not None:
                val -= lam[lo_i]
            duals[t + 1, 0] = val
    value = 0.0
    top = K + 1 if system.include_terminal_stage else K
    for t in range(min(top, targets.shape[0])):
        value += system.stage_cost(spec.t1 + t, x_full[t], targets[t])
    if gam > 0.0:
        value += gam * float(np.sum(actions ** 2))
    return FtocpSolution(spec.t1, spec.t2, x_full.reshape(-1, 1),
                         actions.reshape(-1, 1), duals, value, resid,
                         active_set=work)


# ---------------------------------------------------------------------------
# dispatch and the exact-hindsight solve
# ---------------------------------------------------------------------------

def solve(spec: FtocpSpec, system) -> FtocpSolution:
    if getattr(system, "kind", None) == "inventory":
        return solve_inventory(spec, system)
    return solve_quadratic(spec, system)


def clairvoyant_action(t: int, x_t: Array, instance: Instance):
    """Optimal continuation from x_t under the true parameters.

    Returns (first action, full solution) of the window [t, T] with the
    instance's own terminal cost.
    """
    T = instance.T
    params = [instance.truth[s] for s in range(t, T + 1)]
    spec = FtocpSpec(t, T, np.atleast_1d(x_t), params,
                     instance.terminal_cost())
    sol = solve(spec, instance.system)
    return sol.first_action, sol


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def solution_to_csv(sol: FtocpSolution, header_lines: Sequence[str] = ()) -> str:
    """Per-step rows (t, y_t, v_t, eta_t) at 17 significant digits."""
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    n = sol.states.shape[1]
    m = sol.actions.shape[1] if sol.actions.size else sol.actions.shape[1]
    cols = (["t"] + [f"y{i}" for i in range(n)] + [f"v{i}" for i in range(m)]
            + [f"eta{i}" for i in range(n)])
    buf.write(",".join(cols) + "\n")
    K = sol.t2 - sol.t1
    for i in range(K + 1):
        row = [str(sol.t1 + i)]
        row += [f"{v:.17g}" for v in sol.states[i]]
        if i < K:
            row += [f"{v:.17g}" for v in sol.actions[i]]
        else:
            row += [""] * m
        row += [f"{v:.17g}" for v in sol.duals[i]]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()
