"""Ready-made problem instances: randomized tracking, disturbance-only
rotation dynamics, stock chains with alternating targets, the cart-pendulum
linearization, and multi-area frequency regulation.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import ftocp, kkt
from .model import (Bounds, DisturbanceOnlySystem, Instance, InventorySystem,
                    ParamBox, ParamSeq, QuadraticTrackingSystem, TerminalCost)

Array = np.ndarray


def _scaled(rng: np.random.Generator, shape, norm: float) -> Array:
    M = rng.normal(size=shape)
    return M * (norm / np.linalg.norm(M, 2))


def _unit_vec(rng: np.random.Generator, d: int) -> Array:
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def _random_spd(rng: np.random.Generator, d: int, lo: float,
                hi: float) -> Array:
    Qo, _ = np.linalg.qr(rng.normal(size=(d, d)))
    eigs = rng.uniform(lo, hi, size=d)
    return Qo @ np.diag(eigs) @ Qo.T


# ---------------------------------------------------------------------------
# randomized tracking
# ---------------------------------------------------------------------------

def tracking_rand(T: int = 40, seed: int = 7, n: int = 2,
                  m: int = 1) -> Instance:
    """Random controllable tracking instance: every per-step map depends
    Lipschitz-continuously on a scalar parameter in [0, 1]."""
    rng = np.random.default_rng(seed)
    A0 = [_scaled(rng, (n, n), 0.8) for _ in range(T)]
    Ad = [_scaled(rng, (n, n), 1.0) for _ in range(T)]
    B0 = [_scaled(rng, (n, m), 0.8) for _ in range(T)]
    Bd = [_scaled(rng, (n, m), 1.0) for _ in range(T)]
    Qs = [_random_spd(rng, n, 0.5, 2.0) for _ in range(T)]
    Rs = [_random_spd(rng, m, 0.5, 2.0) for _ in range(T)]
    PT = _random_spd(rng, n, 0.5, 2.0)
    wd = [_unit_vec(rng, n) for _ in range(T)]
    xd = [_unit_vec(rng, n) for _ in range(T)]

    def dev(xi):
        return float(np.atleast_1d(xi)[0]) - 0.5

    system = QuadraticTrackingSystem(
        n, m, T,
        A=lambda t, xi: A0[t] + dev(xi) * 0.2 * Ad[t],
        B=lambda t, xi: B0[t] + dev(xi) * 0.2 * Bd[t],
        w=lambda t, xi: dev(xi) * 0.2 * wd[t],
        Q=lambda t, xi: Qs[t], R=lambda t, xi: Rs[t],
        xbar=lambda t, xi: dev(xi) * 0.2 * xd[t],
        P_T=lambda xi: PT, xbar_T=lambda xi: np.zeros(n),
        bounds=Bounds(mu=0.5, ell=2.0, a=1.0, b=1.0, D_w=0.1, D_xbar=0.1,
                      L_A=0.2, L_B=0.2, L_xbar=0.2, L_w=0.2),
        param_box=ParamBox(np.array([0.0]), np.array([1.0])))
    truth = ParamSeq([rng.uniform(0.0, 1.0, size=1) for _ in range(T + 1)])
    x0 = 0.3 * _unit_vec(rng, n)
    return Instance(system, truth, x0, name="tracking-rand", seed=seed)


# ---------------------------------------------------------------------------
# disturbance-only rotation dynamics
# ---------------------------------------------------------------------------

def disturbance(T: int = 60, seed: int = 0) -> Instance:
    """Known stable rotation dynamics; only the additive disturbance is
    forecast (scalar parameter in [0, 1])."""
    rng = np.random.default_rng(seed)
    thetas = rng.uniform(0.0, 2.0 * np.pi, size=T)
    As = [0.7 * np.array([[np.cos(th), -np.sin(th)],
                          [np.sin(th), np.cos(th)]]) for th in thetas]
    dirs = [_unit_vec(rng, 2) for _ in range(T)]
    eye2 = np.eye(2)

    def dev(xi):
        return float(np.atleast_1d(xi)[0]) - 0.5

    system = DisturbanceOnlySystem(
        2, 2, T,
        A=lambda t: As[t], B=lambda t: eye2,
        w=lambda t, xi: dev(xi) * 0.4 * dirs[t],
        Q=lambda t: eye2, R=lambda t: eye2, P_T=lambda: eye2,
        bounds=Bounds(mu=1.0, ell=1.0, a=0.7, b=1.0, D_w=0.2, L_w=0.4),
        param_box=ParamBox(np.array([0.0]), np.array([1.0])))
    truth = ParamSeq([rng.uniform(0.0, 1.0, size=1) for _ in range(T + 1)])
    return Instance(system, truth, np.zeros(2), name="disturbance", seed=seed)


# ---------------------------------------------------------------------------
# stock chains
# ---------------------------------------------------------------------------

def _alternating_targets(T: int) -> Array:
    return np.array([4.0 / 5.0 if t % 2 else -4.0 / 5.0
                     for t in range(T + 1)])


def _inventory_instance(T: int, u_hi: float | None, name: str,
                        seed: int) -> Instance:
    targets = _alternating_targets(T)
    system = InventorySystem(T=T, targets=targets, u_lo=-0.8, u_hi=u_hi)
    truth = ParamSeq([np.array([v]) for v in targets])
    terminal = np.array([2.0 / 5.0 if T % 2 else -2.0 / 5.0])
    return Instance(system, truth, np.zeros(1), name=name, seed=seed,
                    terminal_param=terminal)


def inventory_two_sided(T: int = 8, seed: int = 0) -> Instance:
    return _inventory_instance(T, 0.8, "inventory-two-sided", seed)


def inventory_one_sided(T: int = 12, seed: int = 0) -> Instance:
    return _inventory_instance(T, None, "inventory-one-sided", seed)


# ---------------------------------------------------------------------------
# cart-pendulum linearization
# ---------------------------------------------------------------------------

PENDULUM_DEFAULTS = dict(m=0.2, l=0.3, I=0.006, b=0.1, g=9.8, delta=0.02)


def pendulum_matrices(M: float, *, m: float, l: float, I: float, b: float,
                      g: float, delta: float) -> tuple[Array, Array]:
    """Discretized linearization around the upright equilibrium; the cart
    mass M is the uncertain parameter."""
    den = I * (M + m) + M * m * l ** 2
    A = np.array([
        [1.0, delta, 0.0, 0.0],
        [0.0, 1.0 - (I + m * l ** 2) * b * delta / den,
         m ** 2 * g * l ** 2 * delta / den, 0.0],
        [0.0, 0.0, 1.0, delta],
        [0.0, -m * l * b * delta / den,
         m * g * l * (M + m) * delta / den, 1.0]])
    B = np.array([[0.0], [(I + m * l ** 2) * delta / den],
                  [0.0], [m * l * delta / den]])
    return A, B


def pendulum_det_closed_form(M: float, *, m: float, l: float, I: float,
                             g: float, delta: float, **_ignored) -> float:
    den = I * M + m * (I + l ** 2 * M)
    return delta ** 10 * g ** 2 * l ** 4 * m ** 4 / den ** 4


def _norm_bounds_over_box(mat_fn, box: ParamBox, grid: int = 50):
    """(max matrix norm, max difference-quotient norm) over a parameter grid."""
    xs = np.linspace(float(box.lo[0]), float(box.hi[0]), grid)
    mats = [mat_fn(np.array([x])) for x in xs]
    a = max(float(np.linalg.norm(Mx, 2)) for Mx in mats)
    lip = 0.0
    for i in range(grid - 1):
        step = xs[i + 1] - xs[i]
        if step > 0.0:
            lip = max(lip,
                      float(np.linalg.norm(mats[i + 1] - mats[i], 2)) / step)
    return a, lip


def pendulum_system(M_lo: float = 0.4, M_hi: float = 0.6, T: int = 30,
                    **phys) -> QuadraticTrackingSystem:
    p = {**PENDULUM_DEFAULTS, **phys}
    box = ParamBox(np.array([M_lo]), np.array([M_hi]))

    def Afn(xi):
        return pendulum_matrices(float(np.atleast_1d(xi)[0]), **p)[0]

    def Bfn(xi):
        return pendulum_matrices(float(np.atleast_1d(xi)[0]), **p)[1]

    a, L_A = _norm_bounds_over_box(Afn, box)
    b, L_B = _norm_bounds_over_box(Bfn, box)
    eye4 = np.eye(4)
    return QuadraticTrackingSystem(
        4, 1, T,
        A=lambda t, xi: Afn(xi), B=lambda t, xi: Bfn(xi),
        w=lambda t, xi: np.zeros(4),
        Q=lambda t, xi: eye4, R=lambda t, xi: np.eye(1),
        xbar=lambda t, xi: np.zeros(4),
        P_T=lambda xi: eye4, xbar_T=lambda xi: np.zeros(4),
        bounds=Bounds(mu=1.0, ell=1.0, a=a, b=b, L_A=L_A, L_B=L_B),
        param_box=box)


def pendulum(T: int = 30, seed: int = 0, M: float = 0.5) -> Instance:
    system = pendulum_system(T=T)
    truth = ParamSeq([np.array([M]) for _ in range(T + 1)])
    x0 = np.array([0.1, 0.0, 0.05, 0.0])
    return Instance(system, truth, x0, name="pendulum", seed=seed)


# ---------------------------------------------------------------------------
# frequency regulation on a network
# ---------------------------------------------------------------------------

def path_laplacian(n: int) -> Array:
    L = np.zeros((n, n))
    for i in range(n - 1):
        L[i, i] += 1.0
        L[i + 1, i + 1] += 1.0
        L[i, i + 1] -= 1.0
        L[i + 1, i] -= 1.0
    return L


GRID_DEFAULTS = dict(n_nodes=3, delta=0.1, m_lo=1.0, m_hi=2.0)


def grid_matrices(m_val: float, *, L: Array, D: Array,
                  delta: float) -> tuple[Array, Array]:
    """Swing-equation discretization; the shared inertia m is the parameter."""
    n = L.shape[0]
    Ahat = np.block([[np.zeros((n, n)), np.eye(n)],
                     [-L / m_val, -D / m_val]])
    Bhat = np.vstack([np.zeros((n, n)), np.eye(n) / m_val])
    return np.eye(2 * n) + delta * Ahat, delta * Bhat


def grid_system(n_nodes: int = 3, delta: float = 0.1, m_lo: float = 1.0,
                m_hi: float = 2.0, T: int = 30) -> QuadraticTrackingSystem:
    L = path_laplacian(n_nodes)
    D = np.eye(n_nodes)
    box = ParamBox(np.array([m_lo]), np.array([m_hi]))

    def Afn(xi):
        return grid_matrices(float(np.atleast_1d(xi)[0]), L=L, D=D,
                             delta=delta)[0]

    def Bfn(xi):
        return grid_matrices(float(np.atleast_1d(xi)[0]), L=L, D=D,
                             delta=delta)[1]

    a, L_A = _norm_bounds_over_box(Afn, box)
    b, L_B = _norm_bounds_over_box(Bfn, box)
    n2 = 2 * n_nodes
    eyeN = np.eye(n2)
    return QuadraticTrackingSystem(
        n2, n_nodes, T,
        A=lambda t, xi: Afn(xi), B=lambda t, xi: Bfn(xi),
        w=lambda t, xi: np.zeros(n2),
        Q=lambda t, xi: eyeN, R=lambda t, xi: np.eye(n_nodes),
        xbar=lambda t, xi: np.zeros(n2),
        P_T=lambda xi: eyeN, xbar_T=lambda xi: np.zeros(n2),
        bounds=Bounds(mu=1.0, ell=1.0, a=a, b=b, L_A=L_A, L_B=L_B),
        param_box=box)


def grid(T: int = 30, seed: int = 0, n_nodes: int = 3) -> Instance:
    system = grid_system(n_nodes=n_nodes, T=T)
    rng = np.random.default_rng(seed)
    truth = ParamSeq([rng.uniform(GRID_DEFAULTS["m_lo"],
                                  GRID_DEFAULTS["m_hi"], size=1)
                      for _ in range(T + 1)])
    x0 = np.zeros(2 * n_nodes)
    x0[:n_nodes] = 0.1
    return Instance(system, truth, x0, name="grid", seed=seed)


def grid_det_lower_bound(n_nodes: int, delta: float, m_hi: float) -> float:
    return delta ** (3 * n_nodes) / m_hi ** (2 * n_nodes)


# ---------------------------------------------------------------------------
# stock-chain studies
# ---------------------------------------------------------------------------

def _chain_window(p: int, u_hi: float | None):
    targets = _alternating_targets(p)
    system = InventorySystem(T=p, targets=targets, u_lo=-0.8, u_hi=u_hi)
    params = [np.array([v]) for v in targets]
    return system, params


def two_sided_closed_form(p: int, eps: float) -> Array:
    """Optimal interior/terminal states of the alternating two-sided chain
    with the perturbed terminal pin: 2/5 + eps at odd steps, -2/5 + eps at
    even steps (steps 1..p)."""
    return np.array([2.0 / 5.0 + eps if h % 2 else -2.0 / 5.0 + eps
                     for h in range(1, p + 1)])


@dataclasses.dataclass(frozen=True)
class SuiteRow:
    p: int
    eps: float
    h: int
    diff: float
    diff_minus_eps: float
    closed_form_err: float


def inventory_counterexample_suite(ps=(4, 5, 6, 7, 8),
                                   eps_values=None) -> list[SuiteRow]:
    """Terminal-pin perturbation study on the two-sided alternating chain.

    For each length p the terminal pin moves from its base value (-2/5 for
    even p, +2/5 for odd p) by eps; the per-step response is recorded along
    with the distance to the alternating closed form.
    """
    rows = []
    for idx, p in enumerate(ps):
        base = -2.0 / 5.0 if p % 2 == 0 else 2.0 / 5.0
        if eps_values is None:
            eps = 2.0 / (5.0 * (p - 1)) if p % 2 == 0 else 2.0 / (5.0 * p)
        elif np.ndim(eps_values) == 0:
            eps = float(eps_values)
        else:
            eps = float(eps_values[idx])
        system, params = _chain_window(p, u_hi=0.8)
        z = np.zeros(1)
        sol0 = ftocp.solve(ftocp.FtocpSpec(
            0, p, z, params, TerminalCost.indicator(np.array([base]))),
            system)
        sol1 = ftocp.solve(ftocp.FtocpSpec(
            0, p, z, params,
            TerminalCost.indicator(np.array([base + eps]))), system)
        closed = two_sided_closed_form(p, eps)
        for h in range(1, p + 1):
            diff = abs(float(sol1.states[h, 0]) - float(sol0.states[h, 0]))
            cerr = abs(float(sol1.states[h, 0]) - closed[h - 1])
            rows.append(SuiteRow(p, eps, h, diff, diff - eps, cerr))
    return rows


def suite_to_csv(rows, header_lines=()) -> str:
    import io

    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    buf.write("p,eps,h,diff,diff_minus_eps,closed_form_err\n")
    for r in rows:
        buf.write(f"{r.p},{r.eps:.17g},{r.h},{r.diff:.17g},"
                  f"{r.diff_minus_eps:.17g},{r.closed_form_err:.17g}\n")
    return buf.getvalue()


def inventory_sensitivity_profile(p: int = 12, one_sided: bool = True,
                                  step: float = 1e-5,
                                  action_weight: float | None = None):
    """Forward-difference sensitivity of each state to the terminal pin on
    the alternating chain; returns (offsets, profile, DecayFit).

    The perturbation is one-sided (toward the interior) because the
    closed-form responses only cover nonnegative terminal shifts.  The
    one-sided-constraint study adds a smooth action cost (default weight 2)
    so the steps couple smoothly: the pure tracking cost makes the solution
    map block-separable and its sensitivity support finite, which certifies
    decay trivially but carries no rate information.  Two-sided constraints
    at the alternating optimum give a flat profile.
    """
    if action_weight is None:
        action_weight = 2.0 if one_sided else 0.0
    targets = _alternating_targets(p)
    system = InventorySystem(T=p, targets=targets, u_lo=-0.8,
                             u_hi=None if one_sided else 0.8,
                             action_weight=action_weight)
    params = [np.array([v]) for v in targets]
    base = -2.0 / 5.0 if p % 2 == 0 else 2.0 / 5.0
    z = np.zeros(1)

    def states_at(target):
        sol = ftocp.solve(ftocp.FtocpSpec(
            0, p, z, params,
            TerminalCost.indicator(np.array([target]))), system)
        return sol.states[:, 0]

    sens = np.abs(states_at(base + step) - states_at(base)) / step
    offsets = np.array([p - h for h in range(1, p + 1)], float)
    profile = sens[1:]
    order = np.argsort(offsets)
    offsets, profile = offsets[order], profile[order]
    fit = kkt.fit_decay(offsets, np.maximum(profile, 1e-300))
    return offsets, profile, fit


# ---------------------------------------------------------------------------
# registries
# ---------------------------------------------------------------------------

PRESETS = {
    "tracking-rand": tracking_rand,
    "disturbance": disturbance,
    "inventory-two-sided": inventory_two_sided,
    "inventory-one-sided": inventory_one_sided,
    "pendulum": pendulum,
    "grid": grid,
}

BUILDERS = dict(PRESETS)


def build_preset(name: str, T: int | None = None,
                 seed: int | None = None) -> Instance:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; "
                       f"available: {sorted(PRESETS)}")
    kwargs = {}
    if T is not None:
        kwargs["T"] = T
    if seed is not None:
        kwargs["seed"] = seed
    return PRESETS[name](**kwargs)
