"""Command-line front end: load presets or instance files, run solves, MPC,
sweeps, and certifications, and emit reproducible CSV/JSON artifacts.

Exit codes: 0 success; 2 configuration error; 3 solver failure;
4 certification failure (a tested inequality did not hold).
"""

from __future__ import annotations

import fractions
import json
import os
import sys

import click
import numpy as np

from . import engine, ftocp, kkt, presets, regret
from .model import (Instance, ModelError, PredictionStream, build_instance,
                    config_hash, load_instance_file)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CERT = 4


def parse_number(text: str) -> float:
    """Parse a decimal or an exact fraction like 2/35."""
    try:
        return float(fractions.Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise click.UsageError(f"cannot parse number {text!r}") from exc


class NumberParam(click.ParamType):
    name = "number"

    def convert(self, value, param, ctx):
        if isinstance(value, (int, float)):
            return float(value)
        return parse_number(value)


NUMBER = NumberParam()


def _load(preset: str | None, instance_file: str | None, T: int | None,
          seed: int | None) -> Instance:
    if (preset is None) == (instance_file is None):
        raise click.UsageError("give exactly one of --preset / --instance")
    try:
        if preset is not None:
            return presets.build_preset(preset, T=T, seed=seed)
        return build_instance(load_instance_file(instance_file), T=T,
                              seed=seed)
    except (KeyError, ModelError, OSError, TypeError, ValueError) as exc:
        raise click.UsageError(str(exc)) from exc


def _default_rule(instance: Instance) -> engine.TerminalRule:
    kind = instance.system.kind
    return engine.TerminalRule(
        "zero" if kind == "disturbance" else "predicted_tracking")


def _headers(ctx_name: str, config: dict) -> list[str]:
    return [f"command={ctx_name}", f"config_hash={config_hash(config)}"]


def _write(out: str, name: str, body: str) -> str:
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, name)
    with open(path, "w") as fh:
        fh.write(body)
    return path


def _json_body(doc: dict, headers: list[str]) -> str:
    doc = dict(doc)
    doc["_headers"] = headers
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# shared options
def _instance_options(fn):
    fn = click.option("--preset", type=str, default=None,
                      help=f"preset name: {', '.join(sorted(presets.PRESETS))}"
                      )(fn)
    fn = click.option("--instance", "instance_file",
                      type=click.Path(), default=None,
                      help="instance description file (JSON)")(fn)
    fn = click.option("--T", "T", type=int, default=None,
                      help="override the horizon")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="override the instance seed")(fn)
    fn = click.option("--out", type=click.Path(), default="out",
                      help="output directory")(fn)
    return fn


@click.group()
def main():
    """Receding-horizon control experiments and certifications."""


@main.command()
@_instance_options
def solve(preset, instance_file, T, seed, out):
    """Solve the full-horizon problem under the true parameters."""
    inst = _load(preset, instance_file, T, seed)
    cfg = {"cmd": "solve", "preset": preset, "instance": instance_file,
           "T": T, "seed": seed}
    hdr = _headers("solve", cfg)
    try:
        opt = engine.solve_opt(inst)
    except (ftocp.Infeasible, ftocp.SingularKKT) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    _write(out, "solve_trajectory.csv", engine.trajectory_to_csv(opt, hdr))
    _write(out, "solve_summary.json", _json_body(
        {"total_cost": opt.total_cost,
         "max_state_norm": opt.max_state_norm,
         "dynamics_residual": opt.dynamics_residual(inst)}, hdr))
    click.echo(f"total_cost={opt.total_cost:.12g}")


@main.command()
@_instance_options
@click.option("--k", type=int, default=8, help="window length")
@click.option("--noise-scale", type=NUMBER, default=0.0,
              help="constant forecast-error magnitude")
def mpc(preset, instance_file, T, seed, out, k, noise_scale):
    """Run the receding-horizon controller and report regret."""
    inst = _load(preset, instance_file, T, seed)
    if k < 1 or k > inst.T:
        raise click.UsageError("need 1 <= k <= T")
    cfg = {"cmd": "mpc", "preset": preset, "instance": instance_file,
           "T": T, "seed": seed, "k": k, "noise_scale": noise_scale}
    hdr = _headers("mpc", cfg)
    stream = PredictionStream(inst.truth, k, noise_scale, seed=inst.seed)
    try:
        opt = engine.solve_opt(inst)
        run = engine.run_mpc(inst, stream, k, _default_rule(inst), opt=opt)
    except (ftocp.Infeasible, ftocp.SingularKKT) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    _write(out, "mpc_trajectory.csv", engine.trajectory_to_csv(run, hdr))
    _write(out, "mpc_report.json", _json_body(
        {"cost_alg": run.total_cost, "cost_opt": opt.total_cost,
         "regret": run.total_cost - opt.total_cost,
         "sum_sq_errors": run.sum_sq_errors,
         "max_error": float(run.errors.max(initial=0.0))}, hdr))
    click.echo(f"regret={run.total_cost - opt.total_cost:.12g}")


@main.command("sweep-horizon")
@_instance_options
@click.option("--k", "k_max", type=int, default=12,
              help="largest window length in the sweep")
def sweep_horizon(preset, instance_file, T, seed, out, k_max):
    """Zero-noise regret as a function of the window length."""
    inst = _load(preset, instance_file, T, seed)
    ks = list(range(2, min(k_max, inst.T) + 1))
    if not ks:
        raise click.UsageError("sweep range is empty")
    cfg = {"cmd": "sweep-horizon", "preset": preset,
           "instance": instance_file, "T": T, "seed": seed, "k_max": k_max}
    hdr = _headers("sweep-horizon", cfg)
    try:
        res = regret.sweep_horizon(inst, ks, _default_rule(inst),
                                   seed=inst.seed)
    except (ftocp.Infeasible, ftocp.SingularKKT) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    _write(out, "sweep_horizon.csv", res.to_csv(hdr))
    _write(out, "sweep_horizon.json", _json_body(
        {"slope": res.slope, "r2": res.r2}, hdr))
    click.echo(f"slope={res.slope:.6g} r2={res.r2:.6g}")


@main.command("sweep-noise")
@_instance_options
@click.option("--k", type=int, default=8, help="window length")
@click.option("--noise-scale", type=NUMBER, default=0.2,
              help="base noise magnitude; swept over fixed multiples")
def sweep_noise(preset, instance_file, T, seed, out, k, noise_scale):
    """Regret as a function of the forecast-noise scale."""
    inst = _load(preset, instance_file, T, seed)
    if k < 1 or k > inst.T:
        raise click.UsageError("need 1 <= k <= T")
    scales = [noise_scale * f for f in
              (0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)]
    cfg = {"cmd": "sweep-noise", "preset": preset, "instance": instance_file,
           "T": T, "seed": seed, "k": k, "noise_scale": noise_scale}
    hdr = _headers("sweep-noise", cfg)
    try:
        res = regret.sweep_noise(inst, lambda t, tau: 1.0 if tau > 0 else 0.0,
                                 scales, k, _default_rule(inst),
                                 seed=inst.seed)
    except (ftocp.Infeasible, ftocp.SingularKKT) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    _write(out, "sweep_noise.csv", res.to_csv(hdr))
    _write(out, "sweep_noise.json", _json_body(
        {"slope": res.slope, "r2": res.r2}, hdr))
    click.echo(f"loglog_slope={res.slope:.6g} r2={res.r2:.6g}")


@main.command("certify-decay")
@_instance_options
def certify_decay(preset, instance_file, T, seed, out):
    """Check the closed-form geometric bound on the inverse saddle blocks."""
    inst = _load(preset, instance_file, T, seed)
    sys_ = inst.system
    if sys_.kind == "inventory":
        raise click.UsageError("decay certification needs a quadratic system")
    cfg = {"cmd": "certify-decay", "preset": preset,
           "instance": instance_file, "T": T, "seed": seed}
    hdr = _headers("certify-decay", cfg)
    params = [inst.truth[t] for t in range(sys_.T + 1)]
    spec = ftocp.FtocpSpec(0, sys_.T, np.zeros(sys_.n), params,
                           inst.terminal_cost())
    try:
        asm = kkt.assemble(spec, sys_)
        norms, maxima, fit = kkt.block_inverse_profile(asm)
        sigma = kkt.measured_sigma(inst)
        bb = sys_.bounds
        consts = kkt.tracking_decay_constants(
            bb.mu, bb.ell, bb.a, bb.b, sigma, bb.L_A, bb.L_B, bb.L_Q,
            bb.L_R, bb.L_P)
    except (ftocp.SingularKKT, np.linalg.LinAlgError) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    offsets = np.arange(maxima.shape[0])
    theory = consts.decay_coef * consts.decay_rate ** offsets
    _write(out, "decay_profile.csv",
           kkt.profile_to_csv(offsets, maxima, theory, hdr))
    _write(out, "decay_constants.txt", kkt.constants_to_text(
        {"sigma": sigma, "sigma_lo": consts.sigma_lo,
         "sigma_hi": consts.sigma_hi, "decay_rate": consts.decay_rate,
         "decay_coef": consts.decay_coef, "diff_coef": consts.diff_coef,
         "fit_coef": fit.C, "fit_rate": fit.lam, "fit_r2": fit.r2}, hdr))
    ok = bool(np.all(maxima <= theory * (1 + 1e-9)))
    click.echo(f"dominated={ok} worst_ratio="
               f"{float(np.max(maxima / np.maximum(theory, 1e-300))):.6g}")
    if not ok:
        sys.exit(EXIT_CERT)


@main.command("inventory-suite")
@click.option("--p", "p_values", type=int, multiple=True,
              help="chain lengths (default 4 5 6 7 8)")
@click.option("--eps", type=NUMBER, default=None,
              help="terminal perturbation (fractions like 2/35 accepted)")
@click.option("--out", type=click.Path(), default="out")
def inventory_suite(p_values, eps, out):
    """Terminal-perturbation response table for the alternating chain."""
    ps = list(p_values) or [4, 5, 6, 7, 8]
    cfg = {"cmd": "inventory-suite", "p": ps, "eps": eps}
    hdr = _headers("inventory-suite", cfg)
    try:
        rows = presets.inventory_counterexample_suite(ps, eps)
    except (ftocp.Infeasible, ftocp.SingularKKT) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    _write(out, "inventory_suite.csv", presets.suite_to_csv(rows, hdr))
    worst = max(max(abs(r.diff_minus_eps), r.closed_form_err) for r in rows)
    click.echo(f"worst_deviation={worst:.3g}")
    if worst > 1e-6:
        sys.exit(EXIT_CERT)


@main.command()
@_instance_options
@click.option("--k", type=int, default=8, help="window length")
@click.option("--mode", type=click.Choice(["theory", "measured"]),
              default="theory")
def constants(preset, instance_file, T, seed, out, k, mode):
    """Report the decay/sensitivity constants of an instance."""
    inst = _load(preset, instance_file, T, seed)
    sys_ = inst.system
    if sys_.kind == "inventory":
        raise click.UsageError("constants need a quadratic system")
    if k < 1 or k > inst.T:
        raise click.UsageError("need 1 <= k <= T")
    cfg = {"cmd": "constants", "preset": preset, "instance": instance_file,
           "T": T, "seed": seed, "k": k, "mode": mode}
    hdr = _headers("constants", cfg)
    try:
        sigma = kkt.measured_sigma(inst, k)
        bb = sys_.bounds
        consts = kkt.tracking_decay_constants(
            bb.mu, bb.ell, bb.a, bb.b, sigma, bb.L_A, bb.L_B, bb.L_Q,
            bb.L_R, bb.L_P)
        values = {"mode": mode, "sigma": sigma,
                  "sigma_lo": consts.sigma_lo, "sigma_hi": consts.sigma_hi,
                  "decay_rate": consts.decay_rate,
                  "decay_coef": consts.decay_coef,
                  "diff_coef": consts.diff_coef}
        if mode == "measured":
            opt = engine.solve_opt(inst)
            tables = kkt.measure_gain_tables(
                inst, k, _default_rule(inst), opt.states,
                R=max(opt.max_state_norm, 1.0), seed=inst.seed)
        else:
            opt = engine.solve_opt(inst)
            tables = kkt.theory_gain_tables(
                inst, k, R=max(opt.max_state_norm, 1.0),
                D_xstar=opt.max_state_norm, sigma=sigma)
        values["C3"] = tables.C3
        for tau in range(k + 1):
            values[f"gain_state_{tau}"] = float(tables.gain_state[tau])
            values[f"gain_param_{tau}"] = float(tables.gain_param[tau])
        gen = kkt.general_decay_constants(consts.sigma_lo, consts.sigma_hi,
                                          bb.ell)
        values["general_coef"] = gen.coef
        values["general_rate"] = gen.rate
    except (ftocp.Infeasible, ftocp.SingularKKT) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    body = kkt.constants_to_text(values, hdr)
    _write(out, "constants.txt", body)
    click.echo(body, nl=False)


if __name__ == "__main__":
    main()
