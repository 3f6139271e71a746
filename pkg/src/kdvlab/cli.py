"""``kdv <command> --config <path> [--seed u64] [--threads n] [--out dir]``.

Every command writes ``series.csv`` and ``summary.json`` into the output
directory (plus ``final_state.json`` when the ``final_state`` format is
requested). Exit codes: 0 success, 1 invalid input, 2 blow-up, 3 failed
``verify`` oracle.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from .config import RunConfig, ValidationError, load_config
from .deterministic import determining_modes_experiment, one_point_attractor_check, steady_state_check
from .ergodics import (
    EnsembleConfig,
    coupling_distance_series,
    ensemble_mean,
    kb_average,
    log_slope,
    mean_l2_oracle,
    run_ensemble,
    run_pair_ensemble,
)
from .integrator import BlowUpError, ConfigurationError, IndependentCopy, Nudged, integrate, integrate_pair
from .nudging import NudgeParams, calibrate_N, decay_ratio, run_cutoff_coupling, run_foias_prodi
from .spectral import sobolev_norm
from .verify import format_report, run_oracles

COMMANDS = ("simulate", "invariants", "nudge", "couple", "ensemble", "deterministic", "verify", "calibrate-N")

EXIT_OK, EXIT_INVALID, EXIT_BLOWUP, EXIT_VERIFY = 0, 1, 2, 3


class Outcome:
    """Everything a command produces before it is written to disk."""

    def __init__(self, times=(), columns=None, observables=None, fits=None, flags=None, final=None):
        self.times = np.asarray(times, dtype=float)
        self.columns = columns or {}
        self.observables = observables or {}
        self.fits = fits or {}
        self.flags = flags or {}
        self.final = final
        self.status = EXIT_OK


# output -----------------------------------------------------------------


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


def write_series(path, times, columns):
    names = list(columns)
    rows = ["t" + "".join("," + n for n in names)]
    data = [np.asarray(columns[n], dtype=float) for n in names]
    for i, t in enumerate(times):
        rows.append(",".join(["%.17g" % t] + ["%.17g" % c[i] for c in data]))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")


def run_id(command, cfg: RunConfig) -> str:
    canonical = json.dumps({"command": command, "config": cfg.echo()}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha1(canonical.encode()).hexdigest()


def write_outputs(out_dir, command, cfg: RunConfig, res: Outcome):
    os.makedirs(out_dir, exist_ok=True)
    if "csv" in cfg.formats:
        write_series(os.path.join(out_dir, "series.csv"), res.times, res.columns)
    if "json" in cfg.formats:
        summary = {
            "config": cfg.echo(),
            "run_id": run_id(command, cfg),
            "observables": res.observables,
            "fits": res.fits,
            "flags": res.flags,
        }
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n")
    if "final_state" in cfg.formats and res.final is not None:
        state = {"K": res.final.grid.K, "modes": [[k, c.real, c.imag] for k, c in res.final.modes()]}
        with open(os.path.join(out_dir, "final_state.json"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(_clean(state), indent=2) + "\n")


def _blowup(exc: BlowUpError) -> Outcome:
    res = Outcome(flags={"blowup": True}, fits={"blowup_time": exc.time, "blowup_step": exc.step})
    if exc.member is not None:
        res.fits["blowup_member"] = exc.member
    res.status = EXIT_BLOWUP
    return res


# commands -----------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, threads: int) -> Outcome:
    obs = list(dict.fromkeys(("l2",) + cfg.experiment.observables))
    rec = integrate(cfg.u0, cfg.solver, cfg.f, cfg.noise, cfg.T, observers=obs)
    slope, _, _ = log_slope(rec.times, rec.series["l2"], (rec.times[0], rec.times[-1]))
    return Outcome(
        rec.times, rec.series,
        observables={n: rec.series[n][-1] for n in obs},
        fits={"measured_decay_rate": -slope, "gamma": cfg.solver.gamma},
        flags={"blowup": False},
        final=rec.final,
    )


def cmd_invariants(cfg: RunConfig, threads: int) -> Outcome:
    names = ("I0", "I1", "I2", "I0+", "I1+", "I2+")
    rec = integrate(cfg.u0, cfg.solver, cfg.f, cfg.noise, cfg.T, observers=names)
    drift = {}
    for n in ("I0", "I1", "I2"):
        s = rec.series[n]
        drift[f"drift_{n}"] = float(np.max(np.abs(s / s[0] - 1))) if s[0] else float(np.max(np.abs(s)))
    conservative = (cfg.solver.gamma == 0 and cfg.solver.epsilon == 0
                    and not cfg.f.modes() and not cfg.noise.channels)
    return Outcome(
        rec.times, rec.series,
        observables={n: rec.series[n][-1] for n in names},
        fits=drift,
        flags={"blowup": False, "conservative_setting": conservative,
               "conserved": conservative and max(drift.values()) < 1e-6},
        final=rec.final,
    )


def _need_nudging(e):
    for key, v in (("lambda", e.lam), ("N", e.N)):
        if v is None:
            raise ValidationError(f"experiment.{key}", "required for this command (number or \"auto\")")


def cmd_nudge(cfg: RunConfig, threads: int) -> Outcome:
    e = cfg.experiment
    _need_nudging(e)
    budget = math.inf if e.K_budget is None else e.K_budget
    np_ = NudgeParams(e.lam, e.N, e.c0, budget, e.R, e.beta)
    run = run_foias_prodi if e.K_budget is None else run_cutoff_coupling
    rec = run(cfg.u0, cfg.v0, np_, cfg.solver, cfg.f, cfg.noise, cfg.T, fparams=cfg.fparams)
    keep = ("diff_l2", "diff_h1", "diff_h2", "u_h1", "v_h1", "fp", "Gamma", "weighted_h1_sq",
            "cutoff_integral", "novikov", "nudging_active")
    cols = {k: rec.series[k] for k in keep}
    ratio = decay_ratio(rec)
    fits = {"lambda": e.lam, "N": e.N, "decay_ratio": ratio, "tau_R": rec.tau_R,
            "tau_star": rec.tau_star, "novikov_bound": rec.novikov_bound,
            "last_increment": rec.last_increment}
    flags = {"blowup": False, "decay_ok": ratio <= e.target,
             "fp_sandwich_all": bool(np.all(rec.series["fp_sandwich_ok"] == 1))}
    if e.K_budget is not None:
        final_int = rec.series["cutoff_integral"][-1]
        flags["cutoff_overshoot_ok"] = bool(final_int <= budget + rec.last_increment)
        flags["novikov_ok"] = bool(rec.series["novikov"][-1] <= rec.novikov_bound * (1 + 1e-12))
    return Outcome(rec.times, cols, {k: v[-1] for k, v in cols.items()}, fits, flags, rec.v_final)


def cmd_couple(cfg: RunConfig, threads: int) -> Outcome:
    e = cfg.experiment
    recs = run_pair_ensemble(e.pairs, cfg.u0, cfg.v0, cfg.solver, cfg.f, cfg.noise, cfg.T,
                             IndependentCopy(), cfg.solver.seed, cfg.fparams, threads)
    alive = [r for r in recs if r is not None]
    if not alive:
        raise BlowUpError(-1, None)
    est = coupling_distance_series(alive, e.k, cfg.fparams, e.window)
    mean_l2 = np.mean([r.series["diff_l2"] for r in alive], axis=0)
    slope_l2, _, window = log_slope(est.times, mean_l2, e.window)
    rate = cfg.solver.gamma / 2
    cols = {"mean_diff_l2": mean_l2, f"mean_d{e.k}": est.mean, f"stderr_d{e.k}": est.stderr}
    return Outcome(
        est.times, cols,
        observables={k: v[-1] for k, v in cols.items()},
        fits={"slope_diff_l2": slope_l2, f"slope_d{e.k}": est.slope, "target_slope": -rate,
              "window": list(window), "pairs_used": len(alive)},
        flags={"blowup": len(alive) < len(recs), "diff_l2_rate_ok": slope_l2 <= -rate,
               f"d{e.k}_rate_ok": est.slope <= -0.9 * rate},
    )


def cmd_ensemble(cfg: RunConfig, threads: int) -> Outcome:
    e = cfg.experiment
    ec = EnsembleConfig(e.members, cfg.solver.seed, cfg.T, cfg.burn_in, e.observables, threads)
    u0 = cfg.u0_list if len(cfg.u0_list) == e.members else cfg.u0
    res = run_ensemble(ec, u0, cfg.solver, cfg.f, cfg.noise)
    if not res.survivors:
        raise next(iter(res.failures.values()))
    cols, obs, fits = {}, {}, {"members_used": len(res.survivors), "failures": len(res.failures)}
    t = res.survivors[0].times
    for name in e.observables:
        _, mean, se = ensemble_mean(res, name)
        cols[f"mean_{name}"] = mean
        cols[f"stderr_{name}"] = se
        obs[f"mean_{name}"] = mean[-1]
        kb = np.array([kb_average(r, name, cfg.T - cfg.burn_in, cfg.burn_in) for r in res.survivors])
        fits[f"kb_{name}"] = float(kb.mean())
        fits[f"kb_stderr_{name}"] = float(kb.std(ddof=1) / math.sqrt(len(kb))) if len(kb) > 1 else 0.0
    flags = {"blowup": bool(res.failures)}
    if "l2_sq" in e.observables and not cfg.f.modes() and cfg.solver.gamma > 0:
        e0 = np.array([r.series["l2_sq"][0] for r in res.survivors]).mean()
        oracle = mean_l2_oracle(cfg.solver.gamma, cfg.noise.sigma_l2_sq, e0, t)
        cols["oracle_l2_sq"] = oracle
        se = cols["stderr_l2_sq"][1:]
        z = np.abs(cols["mean_l2_sq"][1:] - oracle[1:]) / np.where(se > 0, se, np.inf)
        fits["mean_l2_max_z"] = float(z.max()) if z.size else 0.0
        flags["mean_l2_within_3se"] = bool(z.size and z.max() <= 3.0)
    return Outcome(t, cols, obs, fits, flags)


def cmd_deterministic(cfg: RunConfig, threads: int) -> Outcome:
    e = cfg.experiment
    s = cfg.solver
    if e.mode == "determining":
        if s.gamma <= 0 and (e.lam is None or e.N is None):
            raise ValidationError("experiment.N", "give lambda and N explicitly when gamma = 0")
        lam = None if e.lam_auto else e.lam
        N = None if e.N_auto else e.N
        rep = determining_modes_experiment(cfg.u0, cfg.v0, N, s.gamma, cfg.f, cfg.T, lam, s.dt, e.c,
                                           e.threshold, s.sample_every)
        ctl = determining_modes_experiment(cfg.u0, cfg.v0, 0, s.gamma, cfg.f, cfg.T, lam, s.dt, e.c,
                                           e.threshold, s.sample_every)
        cols = {"diff_h1": rep.diff_h1, "diff_h1_control": ctl.diff_h1}
        return Outcome(
            rep.times, cols, {k: v[-1] for k, v in cols.items()},
            fits={"lambda": rep.lam, "N": rep.N, "ratio": rep.ratio, "control_ratio": ctl.ratio},
            flags={"blowup": False, "decay_ok": rep.passed,
                   "control_separated": ctl.ratio >= 10 * rep.ratio},
        )
    if e.mode == "steady":
        rep = steady_state_check(s.gamma, cfg.f, cfg.T, s.dt, cfg.u0)
        cols = {"l2": [rep.l2]}
        return Outcome(
            [cfg.T], cols, {"l2": rep.l2},
            fits={"residual": rep.residual, "identity_gap": rep.identity_gap,
                  "norm_bound_gap": rep.norm_bound_gap,
                  "forcing_over_gamma": sobolev_norm(cfg.f) / s.gamma if s.gamma else math.inf},
            flags={"blowup": False, "steady": rep.status == "steady",
                   "identity_ok": rep.identity_gap <= e.tol},
            final=rep.final,
        )
    starts = [cfg.u0, cfg.v0] + list(cfg.u0_list)
    rep = one_point_attractor_check(s.gamma, cfg.f, starts, cfg.T, s.dt, e.tol)
    worst = max(rep.distances.values())
    return Outcome(
        [cfg.T], {"max_distance": [worst]}, {"max_distance": worst},
        fits={f"distance_{i}_{j}": d for (i, j), d in rep.distances.items()},
        flags={"blowup": False, "single_point": rep.passed},
    )


def cmd_verify(cfg: RunConfig, threads: int) -> Outcome:
    results = run_oracles(cfg.solver.seed)
    print(format_report(results))
    res = Outcome(
        [0.0], {r.name: [r.measured] for r in results},
        observables={r.name: r.measured for r in results},
        fits={r.name: r.as_dict() for r in results},
        flags={r.name: r.passed for r in results},
    )
    res.flags["all_passed"] = all(r.passed for r in results)
    if not res.flags["all_passed"]:
        res.status = EXIT_VERIFY
    return res


def cmd_calibrate(cfg: RunConfig, threads: int) -> Outcome:
    e = cfg.experiment
    if e.lam is None:
        raise ValidationError("experiment.lambda", "required for this command (number or \"auto\")")
    N, c = calibrate_N(cfg.u0, cfg.v0, e.lam, cfg.solver, cfg.f, cfg.noise, cfg.T, e.seeds,
                       e.target, e.N_max)
    fits = {"lambda": e.lam, "N": N, "c": c, "target": e.target}
    if N is None:
        return Outcome([], {}, {}, fits, {"blowup": False, "found": False})
    rec = integrate_pair(cfg.u0, cfg.v0, Nudged(e.lam, N), cfg.solver, cfg.f, cfg.noise, cfg.T)
    cols = {"diff_h1": rec.series["diff_h1"]}
    return Outcome(rec.times, cols, {"decay_ratio": decay_ratio(rec)}, fits,
                   {"blowup": False, "found": True})


HANDLERS = {
    "simulate": cmd_simulate,
    "invariants": cmd_invariants,
    "nudge": cmd_nudge,
    "couple": cmd_couple,
    "ensemble": cmd_ensemble,
    "deterministic": cmd_deterministic,
    "verify": cmd_verify,
    "calibrate-N": cmd_calibrate,
}


def run_command(name: str, cfg: RunConfig, threads: int = 1, out_dir: str | None = None) -> int:
    """Run one command and write its files; returns the exit status."""
    if name not in HANDLERS:
        raise ValidationError("command", f"unknown command {name!r}")
    try:
        res = HANDLERS[name](cfg, threads)
    except BlowUpError as exc:
        res = _blowup(exc)
        print(f"blow-up at t={exc.time} (step {exc.step})", file=sys.stderr)
    write_outputs(out_dir or cfg.out_dir, name, cfg, res)
    return res.status


# entry point ---------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    p = _Parser(prog="kdv", description="Damped stochastic KdV experiments")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="strict JSON configuration file")
    p.add_argument("--seed", type=_u64, help="override solver.seed")
    p.add_argument("--threads", type=_positive, help="worker threads (default: $THREADS or 1)")
    p.add_argument("--out", help="output directory (default: output.dir)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads
    if threads is None:
        env = os.environ.get("THREADS")
        if env is not None:
            try:
                threads = _positive(env)
            except (ValueError, argparse.ArgumentTypeError):
                print(f"kdv: error: THREADS must be a positive integer, got {env!r}", file=sys.stderr)
                return EXIT_INVALID
        else:
            threads = 1
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        return run_command(args.command, cfg, threads, args.out)
    except (ValidationError, ConfigurationError, ValueError, OSError) as exc:
        print(f"kdv: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
