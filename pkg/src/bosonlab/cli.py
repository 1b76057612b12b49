"""Command-line runner: one subcommand per pipeline, outputs plus a manifest.

Exit codes: 0 success, 2 validation failure, 3 tolerance failure,
4 internal fault.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import math
import platform
import sys
import time
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy
import yaml

from . import __version__, config as config_mod
from .asymptotics import LimitCGF, cgf_convergence_study, finite_cgf_curve, grid_legendre, rate_function
from .audit import lemma_audit
from .config import ExperimentConfig
from .errors import ConfigError, NotCondensed, UnderResolved, BadFugacity, BadTestFunction
from .experiments import (
    clt_experiment,
    clt_normalizer,
    ks_critical_1pct,
    ks_statistic,
    lln_experiment,
    normal_cgf_value,
    normal_density_at_scale,
    normal_phase_cgf,
    normal_rate_proxy,
)
from .functionals import laplace_functional, mean_variance
from .model import Det, NormalDet
from .sampler import RngSpec, estimate_from_pairings, sample_configurations, sample_statistics, write_sample_dump

EXIT_OK, EXIT_INVALID, EXIT_TOLERANCE, EXIT_FAULT = 0, 2, 3, 4

CONVEXITY_TOL = 1e-8
SELF_TEST_FAMILY = 2**32  # RNG family reserved for the KS harness self-test
CLT_BANDS = {8.0: (0.6, 1.4), 16.0: (0.75, 1.25)}  # condensed phase, d = 3


# ---------------------------------------------------------------------------
# Output helpers


def fmt(x) -> str:
    """CSV cell: ``inf`` for infinities, shortest round-trip repr otherwise."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def jsonable(obj):
    """Convert to JSON types; non-finite floats become ``{"finite": false}``."""
    if isinstance(obj, dict):
        return {_key(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return {"finite": False, "nan": True}
        if math.isinf(x):
            return {"finite": False} if x > 0 else {"finite": False, "sign": -1}
        return x
    return obj


def _key(k) -> str:
    if isinstance(k, (float, np.floating)):
        return fmt(k)
    return str(k)


class Run:
    """Collects the files written by one subcommand."""

    def __init__(self, cfg: ExperimentConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.outdir = Path(cfg.output.directory)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []
        self.seeds: list[int] = []
        self.checks: dict[str, bool] = {}

    def enabled(self, fmt_name: str) -> bool:
        return fmt_name in self.cfg.output.formats

    def csv(self, name: str, header: list, rows) -> Optional[Path]:
        if not self.enabled("csv"):
            return None
        path = self.outdir / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])
        self.files.append(path)
        return path

    def json(self, name: str, payload: dict) -> Optional[Path]:
        if not self.enabled("json"):
            return None
        path = self.outdir / name
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(jsonable(payload), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.files.append(path)
        return path

    def add(self, path: Path) -> None:
        self.files.append(Path(path))

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(run: Run, started: str, seconds: float, status: int) -> Path:
    path = run.outdir / "manifest.json"
    manifest = {}
    if path.exists():
        try:
            manifest = json.loads(path.read_text())
        except json.JSONDecodeError:
            manifest = {}
    if manifest.get("config_sha256") != run.cfg.digest():
        manifest = {}
    manifest["config_sha256"] = run.cfg.digest()
    manifest["versions"] = {
        "bosonlab": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pyyaml": yaml.__version__,
    }
    runs = manifest.setdefault("runs", {})
    runs[run.command] = {
        "outputs": [{"file": p.name, "sha256": _sha256(p)} for p in run.files],
        "seeds": run.seeds,
        "checks": run.checks,
        "exit_code": status,
        "wall_clock": {"started": started, "seconds": round(seconds, 3)},
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(jsonable(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# Subcommands


def _bec(cfg: ExperimentConfig):
    if cfg.model.phase != "bec":
        raise ConfigError("model.phase", "this subcommand needs phase 'bec'")
    params = cfg.make_params()
    return params, cfg.make_profile(params.grid)


def _convex(values_t, values) -> bool:
    t = np.asarray(values_t, dtype=float)
    v = np.asarray(values, dtype=float)
    mask = np.isfinite(v)
    t, v = t[mask], v[mask]
    if len(t) < 3:
        return True
    left = (v[1:-1] - v[:-2]) / (t[1:-1] - t[:-2])
    right = (v[2:] - v[1:-1]) / (t[2:] - t[1:-1])
    return bool(np.all(2 * (right - left) / (t[2:] - t[:-2]) >= -CONVEXITY_TOL))


def cmd_audit(cfg: ExperimentConfig, run: Run) -> None:
    params, f = _bec(cfg)
    report = lemma_audit(params, f, cfg.audit_kappas)
    run.checks.update(report.checks())
    run.json("audit.json", report.to_dict())


def _t_values(cfg: ExperimentConfig, pole: float) -> list:
    scale = pole if cfg.t_units == "pole" else 1.0
    return sorted(float(t) * scale for t in cfg.t_panel)


def cmd_cgf(cfg: ExperimentConfig, run: Run) -> None:
    params, f = _bec(cfg)
    P = LimitCGF(params, f)
    ts = _t_values(cfg, P.pole)
    rows, poles = [], {}
    for kappa in cfg.kappas:
        curve = finite_cgf_curve(params, f, kappa, ts)
        poles[kappa] = curve.pole
        run.checks[f"convex_kappa_{kappa:g}"] = _convex(curve.t_values, curve.values)
        for t, v in zip(curve.t_values, curve.values):
            rows.append((kappa, t, v, math.isfinite(v)))
            if t == 0:
                run.checks[f"zero_at_origin_kappa_{kappa:g}"] = v == 0
            if t > 0 and abs(t - curve.pole) > 1e-8 * curve.pole:
                run.checks.setdefault("dichotomy", True)
                run.checks["dichotomy"] &= math.isfinite(v) == (t < curve.pole)
    limit = P.curve(ts)
    for t, v in zip(limit.t_values, limit.values):
        rows.append((math.inf, t, v, math.isfinite(v)))
    run.checks["convex_limit"] = _convex(limit.t_values, limit.values)
    run.checks["limit_components"] = bool(
        np.all(np.abs(limit.values - limit.det_part - limit.shift_part)[limit.finite] <= 1e-12 * (1 + np.abs(limit.values[limit.finite])))
    )
    run.checks["limit_slope_at_origin"] = abs(P.mean - params.density * f.integral) <= 1e-10 * P.mean
    run.csv("cgf.csv", ["kappa", "t", "value", "finite_flag"], rows)

    summary = {"limit_pole": P.pole, "finite_scale_poles": poles, "mean": P.mean}
    inside = [t for t in ts if t != 0 and P.is_finite(t)]
    if len(cfg.kappas) >= 2 and inside:
        table = cgf_convergence_study(params, f, cfg.kappas, inside)
        summary["errors"] = {t: table.errors(t).tolist() for t in inside}
        summary["fitted_orders"] = table.orders
    summary["checks"] = run.checks
    run.json("cgf_summary.json", summary)


def _s_values(cfg: ExperimentConfig, mean: float) -> list:
    scale = mean if cfg.s_units == "mean" else 1.0
    return [float(s) * scale for s in cfg.s_grid]


def dense_sup_check(P: LimitCGF, s: float, t_star: float, n: int = 4001) -> float:
    """Grid-search value of ``sup_t (s t - P(t))`` around the bisection root."""
    lo = min(-1.0, 2 * t_star - 1.0) if math.isfinite(t_star) else -1.0
    hi = P.pole * (1 - 1e-9)
    t = np.linspace(lo, hi, n)
    return grid_legendre(P, s, t)


def cmd_rate(cfg: ExperimentConfig, run: Run) -> None:
    params, f = _bec(cfg)
    P = LimitCGF(params, f)
    s_vals = _s_values(cfg, P.mean)
    table = rate_function(params, f, s_vals)
    rows, gaps = [], []
    for s, I, t in zip(table.s_values, table.I_values, table.t_star):
        rows.append((s, I, math.isfinite(I), t))
        if math.isfinite(I) and math.isfinite(t):
            gaps.append(abs(dense_sup_check(P, s, t) - I))
    run.csv("rate.csv", ["s", "I", "finite_flag", "t_star"], rows)
    at_mean = [I for s, I in zip(table.s_values, table.I_values) if abs(s - table.s_star) <= 1e-12 * table.s_star]
    finite_I = table.I_values[table.finite]
    run.checks["zero_at_mean"] = all(abs(I) <= 1e-8 for I in at_mean)
    run.checks["nonnegative"] = bool(np.all(finite_I >= -1e-12))
    run.checks["convex"] = bool(np.all(table.second_differences() >= -CONVEXITY_TOL))
    run.checks["infinite_below_boundary"] = bool(
        np.all(~table.finite[table.s_values < table.boundary - 1e-12])
    )
    run.checks["grid_search_agreement"] = (max(gaps) if gaps else 0.0) <= 1e-6
    run.json(
        "rate_summary.json",
        {
            "s_star": table.s_star,
            "pole": table.pole,
            "infinite_below": table.boundary,
            "max_grid_search_gap": max(gaps) if gaps else 0.0,
            "checks": run.checks,
        },
    )


def cmd_clt(cfg: ExperimentConfig, run: Run) -> None:
    params = cfg.make_params()
    f = cfg.make_profile(params.grid)
    n = cfg.mc.n_samples
    seed = cfg.mc.seed
    run.seeds.append(seed)
    rows = []
    for j, kappa in enumerate(cfg.kappas):
        rep = clt_experiment(params, f, kappa, n, RngSpec(seed, 0, j))
        rows.append(
            (kappa, n, rep.mean, rep.variance, rep.skewness, rep.excess_kurtosis, rep.ks_statistic,
             rep.ks_critical, rep.normalizer, rep.exact_variance_ratio)
        )
        run.checks[f"mean_kappa_{kappa:g}"] = abs(rep.mean) <= 4 / math.sqrt(n)
        if params.is_bec and params.d == 3 and kappa in CLT_BANDS:
            lo, hi = CLT_BANDS[kappa]
            run.checks[f"variance_band_kappa_{kappa:g}"] = lo <= rep.variance <= hi
    gen = RngSpec(seed, 0, SELF_TEST_FAMILY).generator()
    injected = gen.standard_normal(n)
    self_ks = ks_statistic(injected)
    run.checks["ks_self_test"] = self_ks < ks_critical_1pct(n)
    run.csv(
        "clt.csv",
        ["kappa", "n", "mean", "var", "skew", "kurt", "ks", "ks_critical", "normalizer", "exact_var_ratio"],
        rows,
    )
    run.json("clt_summary.json", {"ks_self_test": self_ks, "ks_critical": ks_critical_1pct(n), "checks": run.checks})


def cmd_lln(cfg: ExperimentConfig, run: Run) -> None:
    params = cfg.make_params()
    f = cfg.make_profile(params.grid)
    run.seeds.append(cfg.mc.seed)
    rows = lln_experiment(params, f, cfg.kappas, cfg.mc.n_samples, RngSpec(cfg.mc.seed))
    for r in rows:
        run.checks[f"mean_kappa_{r.kappa:g}"] = abs(r.mean - r.target) <= 4 * r.stderr + 1e-15
    for a, b in zip(rows, rows[1:]):
        if b.kappa == 2 * a.kappa and a.l2_error > 0:
            run.checks[f"l2_ratio_{a.kappa:g}_{b.kappa:g}"] = b.l2_error / a.l2_error <= 0.8
    run.csv(
        "lln.csv",
        ["kappa", "n", "mean", "stderr", "target", "l2_error"],
        [(r.kappa, r.n_samples, r.mean, r.stderr, r.target, r.l2_error) for r in rows],
    )


def cmd_sample(cfg: ExperimentConfig, run: Run) -> None:
    params = cfg.make_params()
    f = cfg.make_profile(params.grid)
    which = cfg.sample.measure
    if which == "bec":
        if not params.is_bec:
            raise ConfigError("sample.measure", "'bec' needs model.phase 'bec'")
        measure = params.measure()
    elif which == "normal":
        if params.is_bec:
            raise ConfigError("sample.measure", "'normal' needs model.phase 'normal'")
        measure = NormalDet(params.phase.z)
    else:
        measure = Det()
    rng = RngSpec(cfg.mc.seed)
    run.seeds.append(cfg.mc.seed)
    n = cfg.mc.n_samples
    grid = params.grid
    if cfg.sample.counts_sidecar:
        confs = sample_configurations(measure, params.beta, grid, n, rng, cfg.sample.variant)
        pairs = np.array([xi.pair(f) for xi in confs])
        totals = np.array([xi.total for xi in confs])
        counts = np.stack([xi.counts for xi in confs])
    else:
        p, totals = sample_statistics(measure, params.beta, grid, [f], n, rng, cfg.sample.variant)
        pairs, counts = p[:, 0], None
    if run.enabled("csv"):
        for path in write_sample_dump(run.outdir / "samples.csv", pairs, totals, counts):
            run.add(path)
    mean, var = mean_variance(measure, params.beta, f)
    lap = laplace_functional(measure, params.beta, f)
    est = estimate_from_pairings(pairs, "laplace")
    se_mean = pairs.std(ddof=1) / math.sqrt(n)
    run.checks["mean"] = abs(pairs.mean() - mean) <= 4 * se_mean + 1e-15
    run.checks["laplace"] = abs(est.estimate - math.exp(lap.log_value)) <= 3 * est.stderr + 1e-15
    run.json(
        "samples_summary.json",
        {
            "measure": which,
            "variant": cfg.sample.variant,
            "empirical_mean": float(pairs.mean()),
            "exact_mean": mean,
            "empirical_variance": float(pairs.var(ddof=1)),
            "exact_variance": var,
            "laplace_estimate": est.estimate,
            "laplace_stderr": est.stderr,
            "laplace_exact": math.exp(lap.log_value),
            "checks": run.checks,
        },
    )


def cmd_normal(cfg: ExperimentConfig, run: Run) -> None:
    if cfg.model.phase != "normal":
        raise ConfigError("model.phase", "the normal-phase suite needs phase 'normal'")
    params = cfg.make_params()
    f = cfg.make_profile(params.grid)
    kappas = cfg.kappas
    top = max(kappas)
    ref_pole = normal_phase_cgf(params, f, top, [0.0]).pole
    ts = _t_values(cfg, ref_pole)
    rows, summary = [], {"kappas": {}}
    curve = None
    for kappa in kappas:
        curve = normal_phase_cgf(params, f, kappa, ts)
        for t, v in zip(curve.t_values, curve.values):
            rows.append((kappa, t, v, math.isfinite(v)))
        step = 1e-3 * min(1.0, curve.pole)
        vals = {k: normal_cgf_value(params, f, kappa, k * step) for k in (-2, -1, 1, 2)}
        slope = (8 * (vals[1] - vals[-1]) - (vals[2] - vals[-2])) / (12 * step)
        expected = normal_density_at_scale(params, kappa) * f.integral
        run.checks[f"slope_kappa_{kappa:g}"] = abs(slope - expected) <= 1e-4 * expected
        run.checks[f"convex_kappa_{kappa:g}"] = _convex(curve.t_values, curve.values)
        summary["kappas"][kappa] = {
            "pole": curve.pole,
            "slope_at_origin": slope,
            "density_times_integral": expected,
            "clt_normalizer": clt_normalizer(params, f, kappa),
        }
        if kappa == top:
            top_curve = curve
    run.csv("normal_cgf.csv", ["kappa", "t", "value", "finite_flag"], rows)
    proxy = normal_rate_proxy(top_curve)
    run.csv("normal_rate_proxy.csv", ["kappa", "s", "I_proxy"], [(proxy.kappa, s, I) for s, I in zip(proxy.s_values, proxy.I_values)])
    summary["rate_proxy_note"] = "numeric Legendre transform of the largest-scale curve; finite-scale only"
    summary["checks"] = run.checks
    run.json("normal_summary.json", summary)


COMMANDS: dict[str, Callable[[ExperimentConfig, Run], None]] = {
    "audit": cmd_audit,
    "cgf": cmd_cgf,
    "rate": cmd_rate,
    "clt": cmd_clt,
    "lln": cmd_lln,
    "sample": cmd_sample,
    "normal": cmd_normal,
}


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS, help="YAML experiment file")
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--seed", metavar="U64", type=int, default=argparse.SUPPRESS, help="Monte-Carlo seed")
    common.add_argument(
        "--override", metavar="KEY=VALUE", action="append", default=argparse.SUPPRESS,
        help="set a config key by dotted path (repeatable)",
    )
    parser = argparse.ArgumentParser(prog="bosonlab", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).strip().splitlines()[0] if fn.__doc__ else None)
    return parser


def _diagnostic(kind: str, path: Optional[str], message: str) -> None:
    print(json.dumps({"error": kind, "path": path, "message": message}), file=sys.stderr)


_VALIDATION_ERRORS = (NotCondensed, UnderResolved, BadFugacity, BadTestFunction)


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    settings = {}
    if getattr(args, "out", None) is not None:
        settings["output.directory"] = args.out
    if getattr(args, "seed", None) is not None:
        settings["mc.seed"] = args.seed
    try:
        cfg = config_mod.load(getattr(args, "config", None), getattr(args, "override", []), settings)
    except ConfigError as exc:
        _diagnostic("ConfigError", exc.path, exc.message)
        return EXIT_INVALID

    started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    clock = time.perf_counter()
    run = Run(cfg, args.command)
    try:
        COMMANDS[args.command](cfg, run)
        status = EXIT_OK if run.ok else EXIT_TOLERANCE
    except ConfigError as exc:
        _diagnostic("ConfigError", exc.path, exc.message)
        status = EXIT_INVALID
    except _VALIDATION_ERRORS as exc:
        _diagnostic(type(exc).__name__, None, str(exc))
        status = EXIT_INVALID
    except Exception as exc:  # internal fault
        _diagnostic(type(exc).__name__, None, str(exc))
        status = EXIT_FAULT
    write_manifest(run, started, time.perf_counter() - clock, status)
    failed = [k for k, v in run.checks.items() if not v]
    if failed:
        print("tolerance failures: " + ", ".join(failed), file=sys.stderr)
    return status


def run_main() -> None:  # pragma: no cover
    sys.exit(main())
