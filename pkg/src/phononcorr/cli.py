"""Command-line entry point: ``phononcorr VERB [--config PATH] [--out DIR] ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance check failed (``reproduce`` only).
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, _backend
from .analytic import (
    AnalyticParams,
    SweepConfig,
    mode_count_table,
    power_sweep,
    stokes_autocorrelation,
)
from .config import ConfigError, RunConfig, load_config
from .counting import (
    RNG_ALGORITHM,
    ClickModel,
    CountingError,
    click_model_from_analytic,
    extract_g2,
    simulate_histogram,
    subtract_crosstalk,
)
from .fitting import DelayCurve, FitError, FitResult, fit_decay, normalize_curve
from .fock import TruncationError
from .lindblad import (
    MODES,
    NumericalError,
    delay_sweep_g2,
    evolve,
    g2_power_sweep,
    initial_state,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 2, 3, 4
TARGETS = ("fig3c", "fig5", "decay")


@dataclass
class Outcome:
    files: dict[str, str] = field(default_factory=dict)
    sections: tuple[str, ...] = ()
    failures: list[str] = field(default_factory=list)
    summary: list[str] = field(default_factory=list)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def data_path(name: str) -> Path:
    return Path(str(resources.files("phononcorr") / "data" / name))


# --- analytic -------------------------------------------------------------------

def _sweep_config(sec) -> SweepConfig:
    rates = np.geomspace(sec["stokes_rate_min_hz"], sec["stokes_rate_max_hz"], sec["n_rates"])
    try:
        return SweepConfig(sec["eta"], sec["alpha_r"], tuple(float(r) for r in rates),
                           sec["rep_rate_hz"], sec["read_stokes_probs"], sec["q_a"], sec["q_b"])
    except ValueError as exc:
        raise ConfigError(f"[analytic] {exc}") from None


def cmd_analytic(cfg: RunConfig, args) -> Outcome:
    sec = cfg.section("analytic")
    sweep = _sweep_config(sec)
    rows = power_sweep(sweep)
    out = Outcome(sections=("run", "analytic"))
    out.files["analytic_sweep.csv"] = _csv(
        ("read_setting", "read_stokes_prob", "stokes_rate_hz") + rows[0].CSV_COLUMNS,
        [(r.read_setting, sweep.read_stokes_prob[r.read_setting], r.p_bar * sweep.eta * sweep.rep_rate)
         + r.csv_row() for r in rows])
    out.files["conditional_g2.csv"] = _csv(
        ("read_setting", "p_bar", "g_bb_given_a"),
        [(r.read_setting, r.p_bar, r.g_aa_cond_bound) for r in rows])
    table = mode_count_table(sec["mode_count_p_bar"], sec["mode_count_modes"],
                             sec["mode_count_eta"], sec["mode_count_q"])
    out.files["mode_count.csv"] = _csv(
        ("n_modes", "g_aa", "g_aa_fixed_mean", "one_plus_inv_n"), table)
    out.summary.append(f"{len(rows)} sweep points, {len(table)} mode counts")
    return out


# --- simulate -------------------------------------------------------------------

def _simulate(cfg: RunConfig, threads: int, out: Outcome, config=None):
    sec = cfg.section("simulate")
    sim = config or cfg.sim_config()
    if sec["trajectory"]:
        traj = evolve(initial_state(sim), sim)
        out.files["trajectory.csv"] = _csv(
            ("time_ps",) + tuple(f"n_{m}" for m in MODES),
            zip(traj.times, *(traj.occupancies[m] for m in MODES)))
    rows = []
    if sec["write_amplitudes"] and sec["read_amplitudes"]:
        rows = g2_power_sweep(sim, sec["write_amplitudes"], sec["read_amplitudes"],
                              sec["g2_mode"], threads)
        ceiling = 1.0 / sim.phonon_occupancy
        out.files["sweep.csv"] = _csv(
            ("write_amplitude", "read_amplitude", "n_s1", "g2", "inv_n_th", "below_ceiling"),
            [(r.write_amplitude, r.read_amplitude, r.n_s1, r.g2, ceiling, int(r.g2 < ceiling))
             for r in rows])
    curve = None
    if sec["delays_ps"]:
        delays = sorted(sec["delays_ps"])
        curve = delay_sweep_g2(sim, delays, sec["delay_g2_mode"], threads)
        out.files["delay_curve.csv"] = curve.to_csv()
    return rows, curve


def cmd_simulate(cfg: RunConfig, args) -> Outcome:
    out = Outcome(sections=("run", "simulate"))
    rows, curve = _simulate(cfg, cfg.section("run")["threads"], out)
    out.summary.append(f"{len(rows)} sweep rows" + (f", {len(curve)} delays" if curve else ""))
    return out


# --- counts ---------------------------------------------------------------------

def _click_model(sec, seed: int) -> ClickModel:
    try:
        if sec["probabilities"] == "analytic":
            prm = AnalyticParams(sec["p_bar"], sec["n_modes"], sec["eta_a"], sec["eta_b"],
                                 sec["q_a"], sec["q_b"])
            return click_model_from_analytic(prm, sec["n_reps"], seed, sec["rep_period_ns"])
        return ClickModel(sec["p_s"], sec["p_as"], sec["p_joint"], sec["n_reps"],
                          sec["rep_period_ns"], seed)
    except ValueError as exc:
        raise ConfigError(f"[counts] {exc}") from None


def cmd_counts(cfg: RunConfig, args) -> Outcome:
    sec = cfg.section("counts")
    run = cfg.section("run")
    model = _click_model(sec, run["seed"])
    leak = sec["crosstalk_p_as"]
    if leak > 0:
        # write-pulse leakage adds uncorrelated aS clicks to the full measurement
        p_as = model.p_as + leak - model.p_as * leak
        p_joint = model.p_joint + model.p_s * leak - model.p_joint * leak
        model = model.with_(p_as=p_as, p_joint=p_joint)
    hist = simulate_histogram(model, sec["bin_width_ns"], sec["n_side_peaks"] + 1,
                              sec["analysis_bin_ns"], run["threads"])
    if leak > 0:
        write_only = ClickModel(model.p_s, leak, model.p_s * leak, model.n_reps,
                                model.rep_period_ns, run["seed"] + 1)
        hist_w = simulate_histogram(write_only, sec["bin_width_ns"], sec["n_side_peaks"] + 1,
                                    sec["analysis_bin_ns"], run["threads"])
        hist = subtract_crosstalk(hist, hist_w)
    est = extract_g2(hist, sec["analysis_bin_ns"], sec["n_side_peaks"],
                     sec["dark_floor_subtraction"], sec["side_error"])
    out = Outcome(sections=("run", "counts"))
    out.files["histogram.csv"] = hist.to_csv()
    expected = model.expected_g2 if leak == 0 else math.nan
    out.files["g2.csv"] = _csv(
        ("g2", "delta_g2", "central_area", "side_mean", "side_std", "negative_g2",
         "background_per_bin", "p_s", "p_as", "p_joint", "expected_g2", "n_reps", "seed", "rng"),
        [(est.g2, est.delta_g2, est.central_area, est.side_mean, est.side_std, est.negative_g2,
          est.background_per_bin, model.p_s, model.p_as, model.p_joint, expected,
          model.n_reps, model.seed, RNG_ALGORITHM)])
    out.summary.append(f"g2 = {est.g2:.4g} +- {est.delta_g2:.2g}")
    return out


# --- fit ------------------------------------------------------------------------

def _fit_options(sec) -> dict:
    fixed = {}
    if sec["fix_sigma"]:
        fixed["sigma"] = sec["sigma_ps"]
    if sec["fix_baseline"]:
        fixed["C"] = sec["baseline"]
    return dict(fixed=fixed, weighted=sec["weighted"], max_iter=sec["max_iter"],
                ci_method=sec["ci_method"], n_boot=sec["n_boot"])


def _fit_curve(curve: DelayCurve, sec, seed: int, label: str) -> FitResult:
    opts = _fit_options(sec)
    # free sigma / C start from the configured values
    opts["initial"] = {k: v for k, v in (("sigma", sec["sigma_ps"]), ("C", sec["baseline"]))
                       if k not in opts["fixed"]}
    try:
        return fit_decay(curve, seed=seed, **opts)
    except FitError as exc:
        raise FitError(f"{label}: {exc}") from exc


def _fit_outputs(curves: list[tuple[str, DelayCurve]], sec, seed: int, out: Outcome):
    rows, results = [], []
    for label, curve in curves:
        res = _fit_curve(curve, sec, seed, label)
        results.append(res)
        rows.append([label] + res.csv_row())
        resid = res.model(curve.delays) - curve.g2
        out.files[f"residuals_{label}.csv"] = _csv(
            ("delay_ps", "g2", "sigma_g2", "model", "residual"),
            zip(curve.delays, curve.g2, curve.sigma_g2, res.model(curve.delays), resid))
        out.files[f"fit_{label}.txt"] = res.to_text()
        if sec["normalize"]:
            norm = normalize_curve(curve, baseline=res.C, sigma=res.sigma, fit=res)
            out.files[f"normalized_{label}.csv"] = norm.to_csv()
    out.files["fit_results.csv"] = _csv(("curve",) + FitResult.CSV_COLUMNS, rows)
    if sec["normalize"] and len(curves) > 1:
        out.files["normalized_overlay.csv"] = _overlay(curves, results)
    return results


def _overlay(curves, results) -> str:
    rows = []
    for (label, curve), res in zip(curves, results):
        norm = normalize_curve(curve, baseline=res.C, sigma=res.sigma, fit=res)
        rows += [(label, d, g, s) for d, g, s in zip(norm.delays, norm.g2, norm.sigma_g2)]
    return _csv(("curve", "delay_ps", "g2_normalized", "sigma"), rows)


def _labels(paths) -> list[str]:
    labels, seen = [], {}
    for p in paths:
        stem = Path(p).stem
        n = seen.get(stem, 0)
        seen[stem] = n + 1
        labels.append(stem if n == 0 else f"{stem}_{n}")
    return labels


def cmd_fit(cfg: RunConfig, args) -> Outcome:
    sec = cfg.section("fit")
    paths = list(sec["curves"])
    if getattr(args, "curves", None):
        paths = [str(Path(p).resolve()) for p in args.curves]
        cfg.set("fit", "curves", tuple(paths))
    if not paths:
        raise ConfigError("[fit] curves: no delay-curve files given")
    curves = []
    for label, p in zip(_labels(paths), paths):
        try:
            text = Path(p).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {p}: {exc.strerror}") from None
        try:
            curves.append((label, DelayCurve.from_csv(text)))
        except ValueError as exc:
            raise ConfigError(f"{p}: {exc}") from None
    out = Outcome(sections=("run", "fit"))
    results = _fit_outputs(curves, sec, cfg.section("run")["seed"], out)
    out.summary += [f"{label}: tau = {r.tau:.4g} ps [{r.tau_ci[0]:.3g}, {r.tau_ci[1]:.3g}]"
                    for (label, _), r in zip(curves, results)]
    return out


# --- reproduce ------------------------------------------------------------------

def _check(out: Outcome, target: str, metric: str, value: float, threshold: str, ok: bool):
    out.files.setdefault("_report", [])
    out.files["_report"].append((target, metric, value, threshold, "PASS" if ok else "FAIL"))
    if not ok:
        out.failures.append(f"{target}: {metric} = {value!r} fails {threshold}")


def _reproduce_fig3c(cfg: RunConfig, args, out: Outcome):
    sec = cfg.section("analytic")
    res = cmd_analytic(cfg, args)
    out.files.update(res.files)
    sweep = _sweep_config(sec)
    rows = power_sweep(sweep)
    peaks = []
    monotone = True
    for s in range(len(sweep.read_stokes_prob)):
        g = np.array([r.g_ab for r in rows if r.read_setting == s])
        k = int(np.argmax(g))
        peaks.append(g[k])
        monotone &= bool(np.all(np.diff(g[k:]) < 0))
    _check(out, "fig3c", "g_ab decreasing above plateau", float(monotone), "== 1", monotone)
    order = np.argsort(sweep.noise_b)
    ordered = bool(np.all(np.diff(np.asarray(peaks)[order]) < 0))
    _check(out, "fig3c", "plateau ordered inversely with q_b", float(ordered), "== 1", ordered)
    cond = max(r.g_aa_cond_bound for r in rows)
    _check(out, "fig3c", "max conditional g_bb|a", cond, "< 0.1", cond < 0.1)
    for N in (1, 2, 4, 10):
        g = stokes_autocorrelation(AnalyticParams(1e-3, N))
        _check(out, "fig3c", f"g_aa(N={N})", g, f"within 1e-2 of {1 + 1 / N:g}",
               abs(g - (1 + 1 / N)) < 1e-2)
    return ("run", "analytic")


def _reproduce_fig5(cfg: RunConfig, args, out: Outcome):
    sim = cfg.sim_config()
    sec = cfg.section("simulate")
    threads = cfg.section("run")["threads"]
    ceiling = 1.0 / sim.phonon_occupancy
    amps1, amps2 = sorted(sec["write_amplitudes"]), sorted(sec["read_amplitudes"])
    if len(amps1) < 3 or not amps2:
        raise ConfigError("[simulate] fig5 needs >= 3 write and >= 1 read amplitudes")
    quiet = sim.with_(c1=0.0, c2=0.0)
    rows_q = g2_power_sweep(quiet, amps1, amps2, sec["g2_mode"], threads)
    rows_n = g2_power_sweep(sim, amps1, amps2, sec["g2_mode"], threads)
    header = ("noise", "write_amplitude", "read_amplitude", "n_s1", "g2", "inv_n_th")
    out.files["sweep.csv"] = _csv(header, [("thermal_only", r.write_amplitude, r.read_amplitude,
                                            r.n_s1, r.g2, ceiling) for r in rows_q]
                                  + [("full", r.write_amplitude, r.read_amplitude, r.n_s1, r.g2,
                                      ceiling) for r in rows_n])
    top = max(r.g2 for r in rows_q + rows_n)
    _check(out, "fig5", "max g2 over grid", top, f"< 1/n_th = {ceiling:.6g}", top < ceiling)
    plateau = max(r.g2 for r in rows_q)
    _check(out, "fig5", "thermal-only plateau", plateau, f">= 1/(3 n_th) = {ceiling / 3:.6g}",
           plateau >= ceiling / 3)
    for a2 in amps2:
        g = [r.g2 for r in rows_n if r.read_amplitude == a2]
        k = int(np.argmax(g))
        down = k > 0 and g[0] < g[k]
        _check(out, "fig5", f"dark-count downturn at A2={a2:g}", g[0] / g[k],
               "< 1 (lowest write below maximum)", down)
    return ("run", "simulate")


def _reproduce_decay(cfg: RunConfig, args, out: Outcome):
    sim = cfg.sim_config()
    sec = cfg.section("simulate")
    if len(sec["delays_ps"]) < 5:
        raise ConfigError("[simulate] decay needs >= 5 delays_ps")
    curve = delay_sweep_g2(sim, sorted(sec["delays_ps"]), sec["delay_g2_mode"],
                           cfg.section("run")["threads"])
    out.files["delay_curve.csv"] = curve.to_csv()
    fsec = cfg.section("fit")
    results = _fit_outputs([("simulated", curve)], fsec, cfg.section("run")["seed"], out)
    tau = results[0].tau
    truth = sim.tau_m_ps
    _check(out, "decay", "fitted tau_ps", tau, f"within 10% of {truth:g}",
           abs(tau - truth) <= 0.1 * truth)
    return ("run", "simulate", "fit")


def cmd_reproduce(cfg: RunConfig, args) -> Outcome:
    out = Outcome()
    runner = {"fig3c": _reproduce_fig3c, "fig5": _reproduce_fig5, "decay": _reproduce_decay}
    out.sections = runner[args.target](cfg, args, out)
    report = out.files.pop("_report", [])
    out.files["report.csv"] = _csv(("target", "metric", "value", "threshold", "result"), report)
    out.summary += [f"{r[4]:4s} {r[1]} = {r[2]:.6g} ({r[3]})" for r in report]
    return out


COMMANDS = {"analytic": cmd_analytic, "simulate": cmd_simulate, "counts": cmd_counts,
            "fit": cmd_fit, "reproduce": cmd_reproduce}


# --- driver ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI run configuration")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides [run] out_dir)")
    common.add_argument("--seed", type=int, help="RNG seed (overrides [run] seed)")
    common.add_argument("--threads", type=int, help="worker processes (overrides [run] threads)")
    p = argparse.ArgumentParser(prog="phononcorr", description=__doc__.splitlines()[0],
                                parents=[common])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("analytic", parents=[common], help="closed-form detector-model tables")
    sub.add_parser("simulate", parents=[common], help="Lindblad trajectories and g2 sweeps")
    sub.add_parser("counts", parents=[common], help="Monte-Carlo coincidence histogram and g2")
    f = sub.add_parser("fit", parents=[common], help="fit delay curves")
    f.add_argument("curves", nargs="*", help="delay-curve CSV files (override [fit] curves)")
    r = sub.add_parser("reproduce", parents=[common], help="run a figure target with checks")
    r.add_argument("target", choices=TARGETS)
    return p


def _default_config(args) -> Path:
    if args.verb == "reproduce":
        return data_path(f"{args.target}.ini")
    return data_path("default.ini")


def _manifest(cfg: RunConfig, args, out: Outcome, files: list[str]) -> str:
    head = ["[manifest]", f"command = {args.verb}"]
    if args.verb == "reproduce":
        head.append(f"target = {args.target}")
    head += [f"version = {__version__}", f"kernel_backend = {_backend.BACKEND}",
             f"rng = {RNG_ALGORITHM}", f"outputs = {', '.join(files)}", ""]
    return "\n".join(head) + "\n" + cfg.to_text(out.sections)


def _write_outputs(out_dir: Path, files: dict[str, str]) -> None:
    """Write every file or none: stage in a sibling temp dir, then move."""
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        for name, text in files.items():
            (stage / name).write_text(text)
        for name in files:
            os.replace(stage / name, out_dir / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config or _default_config(args))
        if args.out is not None:
            cfg.set("run", "out_dir", args.out)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be >= 0")
            cfg.set("run", "seed", args.seed)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            cfg.set("run", "threads", args.threads)
        out = COMMANDS[args.verb](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, TruncationError, FitError, ZeroDivisionError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CountingError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    files = dict(out.files)
    names = sorted(files) + ["manifest.ini"]
    files["manifest.ini"] = _manifest(cfg, args, out, names)
    out_dir = Path(cfg.section("run")["out_dir"])
    _write_outputs(out_dir, files)
    for line in out.summary:
        print(line)
    print(f"wrote {len(files)} files to {out_dir}")
    if out.failures:
        for f in out.failures:
            print(f"acceptance failure: {f}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
