"""Command-line front end.

Subcommands: fit, predict, tolerance, curve, simulate, recruit, survival.
Each accepts an optional JSON config (``--config``) whose keys mirror the
flags; explicit flags win.  CSV tables are always written next to any SVG so
plots are reproducible externally.

Exit codes: 0 success, 1 configuration error, 2 parse error,
3 fit/numeric error, 4 simulation-budget error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import applications, curves, intervals, simlab
from .dist import ParameterDomainError
from .fit import (FitError, FitResult, fit_binomial_logit, fit_gamma_intercept,
                  fit_quasipoisson, fit_weibull_censored, km_estimator)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARSE = 2
EXIT_FIT = 3
EXIT_BUDGET = 4


class ConfigError(Exception):
    pass


class ParseError(Exception):
    pass


class BudgetError(Exception):
    pass


# ---------------------------------------------------------------------------
# minimal deterministic SVG line plots

def _svg_polyline(xs, ys, x0, x1, y0, y1, color, width=600.0, height=400.0,
                  margin=50.0):
    def sx(x):
        return margin + (x - x0) / (x1 - x0 or 1.0) * (width - 2 * margin)

    def sy(y):
        return height - margin - (y - y0) / (y1 - y0 or 1.0) * (height - 2 * margin)

    pts = " ".join(f"{sx(x):.3f},{sy(y):.3f}" for x, y in zip(xs, ys))
    return (f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{pts}"/>')


def write_svg_lines(path, series, xlabel="", ylabel=""):
    """Write a fixed-size multi-line SVG plot; ``series`` is a list of
    (xs, ys, color) triples.  Deterministic output for byte comparison."""
    xs_all = np.concatenate([np.asarray(s[0], dtype=float) for s in series])
    ys_all = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = float(ys_all.min()), float(ys_all.max())
    body = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 600 400">',
            '<rect x="50" y="50" width="500" height="300" fill="none" stroke="black"/>']
    for xs, ys, color in series:
        body.append(_svg_polyline(xs, ys, x0, x1, y0, y1, color))
    if xlabel:
        body.append(f'<text x="300" y="390" text-anchor="middle" font-size="12">{xlabel}</text>')
    if ylabel:
        body.append(f'<text x="15" y="200" text-anchor="middle" font-size="12" '
                    f'transform="rotate(-90 15 200)">{ylabel}</text>')
    body.append("</svg>")
    Path(path).write_text("\n".join(body) + "\n")


# ---------------------------------------------------------------------------
# config / parsing helpers

def _load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw.pop("schema_version", None)
    return raw


def _merge(args: argparse.Namespace, config_keys: set) -> None:
    """Fill unset flags from --config; flags win over config values."""
    if not getattr(args, "config", None):
        return
    cfg = _load_config(args.config)
    unknown = set(cfg) - config_keys
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key, val in cfg.items():
        if getattr(args, key, None) is None:
            setattr(args, key, val)


def _read_values_csv(path, column="value") -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or column not in reader.fieldnames:
                raise ParseError(f"{path}: missing column {column!r}")
            vals = []
            for i, row in enumerate(reader, start=2):
                try:
                    vals.append(float(row[column]))
                except (TypeError, ValueError) as exc:
                    raise ParseError(f"{path}: unparseable row at line {i}") from exc
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if not vals:
        raise ParseError(f"{path}: no data rows")
    return np.asarray(vals)


def _fit_from_args(args) -> FitResult:
    fam = args.family
    if fam == "gamma":
        return fit_gamma_intercept(_read_values_csv(args.input),
                                   link=args.link or "log")
    if fam == "quasipoisson":
        arr = applications._read_rows(args.input, ["events", "exposure"])
        return fit_quasipoisson(arr[:, 0], arr[:, 1], link=args.link or "log")
    if fam == "binomial":
        arr = applications._read_rows(args.input, ["y", "trt"])
        return fit_binomial_logit(arr[:, 0].astype(int), arr[:, 1].astype(int))
    if fam == "weibull":
        return fit_weibull_censored(applications.load_survival_csv(args.input))
    raise ConfigError(f"unknown family {fam!r}")


def _fit_to_dict(fit: FitResult) -> dict:
    out = {}
    for name in ("family", "link", "mu_hat", "n_obs", "k_hat", "phi_hat",
                 "se_mu", "se_g_mu_model", "se_g_mu_sandwich", "se_k",
                 "cov_mu_k", "exposure_total", "loglik", "lam_hat"):
        val = getattr(fit, name)
        if val is not None:
            out[name] = val
    if fit.phi_hat is not None:
        out["dispersion_scale"] = fit.dispersion_scale
    return out


def _interval_to_dict(iv: intervals.IntervalEstimate) -> dict:
    d = {"lower": iv.lower, "upper": iv.upper, "level": iv.level,
         "method": iv.method, "target": iv.target, "sided": iv.sided}
    if iv.content_p is not None:
        d["content_p"] = iv.content_p
    return d


def _emit(args, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if getattr(args, "out", None):
        Path(args.out).write_text(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------------------
# subcommands

def cmd_fit(args) -> int:
    fit = _fit_from_args(args)
    _emit(args, _fit_to_dict(fit))
    return EXIT_OK


def _target(fit, args) -> intervals.PredictionTarget:
    if args.n_future is None:
        raise ConfigError("n_future is required")
    return intervals.PredictionTarget(fit.n_obs, float(args.n_future))


def cmd_predict(args) -> int:
    fit = _fit_from_args(args)
    level = float(args.level)
    out = {}
    for method in args.method:
        if method == "eq1":
            iv = intervals.predict_sum_link(fit, _target(fit, args), level,
                                            se_kind=args.se_kind)
        elif method == "eq2":
            iv = intervals.predict_sum_plugci(fit, _target(fit, args), level,
                                              se_kind=args.se_kind)
        elif method == "fpivot":
            iv = intervals.predict_sum_fpivot(fit.mu_hat, fit.n_obs,
                                              float(args.n_future), fit.k_hat, level)
        elif method == "fpivot_k1":
            iv = intervals.predict_sum_fpivot(fit.mu_hat, fit.n_obs,
                                              float(args.n_future), 1.0, level)
        elif method == "plugin":
            iv = intervals.predict_sum_plugin(fit, _target(fit, args), level)
        elif method == "kris":
            iv = intervals.predict_count_kris(fit, float(args.n_future), level)
        else:
            raise ConfigError(f"unknown prediction method {method!r}")
        out[method] = _interval_to_dict(iv)
    _emit(args, out)
    return EXIT_OK


def cmd_tolerance(args) -> int:
    fit = _fit_from_args(args)
    level, p, n_fut = float(args.level), float(args.content), float(args.n_future)
    out = {}
    for method in args.method:
        if method == "eq3":
            iv = intervals.tolerance_delta(fit, p, level, n_fut)
        elif method == "eq4":
            iv = intervals.tolerance_nct(fit, p, level, n_fut)
        elif method == "eq5":
            iv = intervals.tolerance_plugci(fit, p, level, n_fut,
                                            se_kind=args.se_kind)
        else:
            raise ConfigError(f"unknown tolerance method {method!r}")
        out[method] = _interval_to_dict(iv)
    _emit(args, out)
    return EXIT_OK


CURVE_COLORS = {"link_pivot": "#1f77b4", "ci_plug": "#d62728",
                "f_pivot": "#2ca02c", "f_pivot_k1": "#9467bd",
                "or_prediction": "#ff7f0e"}


def cmd_curve(args) -> int:
    fit = _fit_from_args(args)
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    series = []
    for method in args.method:
        table = curves.build_curve(fit, method, float(args.n_future),
                                   se_kind=args.se_kind)
        path = out_dir / f"curve_{method}.csv"
        table.write_csv(path)
        series.append((table.grid, table.C, CURVE_COLORS.get(method, "#000000")))
    if args.svg:
        write_svg_lines(out_dir / "curves.svg", series,
                        xlabel="hypothesised total", ylabel="confidence curve")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if not args.scenario:
        raise ConfigError("a scenario file is required")
    try:
        spec = simlab.ScenarioSpec.from_json(args.scenario)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad scenario: {exc}") from exc
    overrides = {}
    if args.runs is not None:
        overrides["n_runs"] = int(args.runs)
    if args.seed is not None:
        overrides["seed"] = int(args.seed)
    if overrides:
        spec = simlab.ScenarioSpec(**{**spec.__dict__, **overrides})
    max_runs = int(args.max_runs) if args.max_runs is not None else 1_000_000
    if spec.n_runs > max_runs:
        raise BudgetError(f"{spec.n_runs} runs exceed the budget of {max_runs}")
    runner = (simlab.run_gamma_coverage if spec.data_process == "gamma_fixed"
              else simlab.run_poisson_gamma)
    report = runner(spec)
    text = simlab.emit_table(report, fmt=args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if report.failure_flagged:
        raise BudgetError("more than 0.1% of runs failed to fit")
    return EXIT_OK


def cmd_recruit(args) -> int:
    series = applications.load_recruitment_csv(args.input, args.schedule)
    level = float(args.level)
    out = {}
    if args.mode == "sitedays":
        fit = applications.site_day_fit(series)
        out["fit"] = _fit_to_dict(fit)
        out["diagnostic"] = applications.site_dispersion_diagnostic(series)
        if series.future_sites is not None:
            iv = applications.predict_sitedays(fit, series, level)
            out["prediction"] = _interval_to_dict(iv)
            out["prediction_rounded"] = list(iv.rounded())
    elif args.mode == "trend":
        trend = applications.fit_trend(series, transform=args.transform,
                                       link=args.link or "identity")
        out["coef"] = list(trend.coef)
        out["phi"] = trend.phi
        d = trend.fit_window[1]
        horizon = int(args.horizon or 18)
        iv = applications.predict_sum_rate(trend, range(d + 1, d + horizon + 1), level)
        out["sum_prediction"] = _interval_to_dict(iv)
        out["sum_prediction_rounded"] = list(iv.rounded())
    elif args.mode == "window":
        trend = applications.fit_trend(series, transform=args.transform,
                                       link=args.link or "identity")
        if args.target is None:
            raise ConfigError("window mode requires --target")
        point, (lo, hi) = applications.solve_target_window(trend, float(args.target), level)
        out["horizon_point"] = point
        out["horizon_interval"] = [lo, hi]
    else:
        raise ConfigError(f"unknown recruit mode {args.mode!r}")
    _emit(args, out)
    return EXIT_OK


def cmd_survival(args) -> int:
    data = applications.load_survival_csv(args.input)
    fit = fit_weibull_censored(data)
    km = km_estimator(data)
    level = float(args.level)
    m = int(args.events_future or 100)
    p_grid = np.round(np.arange(0.05, 0.96, 0.05), 10)
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    band_path = out_dir / "survival_bands.csv"
    with open(band_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "quantile", "tol_lower", "tol_upper",
                    "pred_lower", "pred_upper"])
        rows = []
        for p in p_grid:
            q = intervals._sum_quantile(fit, float(p), 1)
            tol = applications.weibull_band_at(fit, float(p), level, "tolerance")
            pred = applications.weibull_band_at(fit, float(p), level, "repeated",
                                               events_future=m)
            row = [p, q, tol.lower, tol.upper, pred.lower, pred.upper]
            rows.append(row)
            w.writerow([f"{v:.10g}" for v in row])
    km_path = out_dir / "survival_km.csv"
    with open(km_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "survival"])
        for t, s in zip(km.times, km.survival):
            w.writerow([f"{t:.10g}", f"{s:.10g}"])
    if args.svg:
        arr = np.asarray(rows, dtype=float)
        surv_levels = 1.0 - arr[:, 0]
        write_svg_lines(out_dir / "survival.svg",
                        [(arr[:, 1], surv_levels, "#1f77b4"),
                         (arr[:, 2], surv_levels, "#ff7f0e"),
                         (arr[:, 3], surv_levels, "#ff7f0e"),
                         (arr[:, 4], surv_levels, "#2ca02c"),
                         (arr[:, 5], surv_levels, "#2ca02c"),
                         (np.repeat(km.times, 2)[1:],
                          np.repeat(np.concatenate([[1.0], km.survival]), 2)[:-1],
                          "#000000")],
                        xlabel="time", ylabel="survival")
    _emit(args, {"fit": _fit_to_dict(fit), "bands_csv": str(band_path),
                 "km_csv": str(km_path)})
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="tolpred")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_keys):
        p.add_argument("--config")
        p.add_argument("--out")
        p.set_defaults(_config_keys=config_keys)

    p = sub.add_parser("fit")
    p.add_argument("--input")
    p.add_argument("--family", choices=["gamma", "quasipoisson", "binomial", "weibull"])
    p.add_argument("--link")
    common(p, {"input", "family", "link", "out"})
    p.set_defaults(func=cmd_fit)

    for name, func, extra in (
        ("predict", cmd_predict, False),
        ("tolerance", cmd_tolerance, True),
    ):
        p = sub.add_parser(name)
        p.add_argument("--input")
        p.add_argument("--family", choices=["gamma", "quasipoisson", "binomial", "weibull"])
        p.add_argument("--link")
        p.add_argument("--method", nargs="+")
        p.add_argument("--level", type=float)
        p.add_argument("--n-future", dest="n_future", type=float)
        p.add_argument("--se-kind", dest="se_kind", default=None,
                       choices=["model", "sandwich"])
        if extra:
            p.add_argument("--content", type=float)
        common(p, {"input", "family", "link", "method", "level", "n_future",
                   "se_kind", "out"} | ({"content"} if extra else set()))
        p.set_defaults(func=func)

    p = sub.add_parser("curve")
    p.add_argument("--input")
    p.add_argument("--family", choices=["gamma", "quasipoisson", "binomial", "weibull"])
    p.add_argument("--link")
    p.add_argument("--method", nargs="+")
    p.add_argument("--n-future", dest="n_future", type=float)
    p.add_argument("--se-kind", dest="se_kind", default=None,
                   choices=["model", "sandwich"])
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--svg", action="store_true")
    common(p, {"input", "family", "link", "method", "n_future", "se_kind",
               "out_dir", "out"})
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("simulate")
    p.add_argument("--scenario")
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-runs", dest="max_runs", type=int)
    p.add_argument("--format", choices=["text", "csv"], default="text")
    common(p, {"scenario", "runs", "seed", "max_runs", "format", "out"})
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("recruit")
    p.add_argument("--input")
    p.add_argument("--schedule")
    p.add_argument("--mode", choices=["sitedays", "trend", "window"])
    p.add_argument("--transform", default="log", choices=list(applications.TRANSFORMS))
    p.add_argument("--link")
    p.add_argument("--level", type=float)
    p.add_argument("--horizon", type=int)
    p.add_argument("--target", type=float)
    common(p, {"input", "schedule", "mode", "transform", "link", "level",
               "horizon", "target", "out"})
    p.set_defaults(func=cmd_recruit)

    p = sub.add_parser("survival")
    p.add_argument("--input")
    p.add_argument("--level", type=float)
    p.add_argument("--events-future", dest="events_future", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--svg", action="store_true")
    common(p, {"input", "level", "events_future", "out_dir", "out"})
    p.set_defaults(func=cmd_survival)

    return parser


_DEFAULTS = {"level": 0.95, "se_kind": "sandwich", "method": ["eq1"],
             "mode": "sitedays", "content": 0.5}


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        _merge(args, getattr(args, "_config_keys", set()))
        for key, default in _DEFAULTS.items():
            if getattr(args, key, "missing") is None:
                setattr(args, key, default)
        for req in ("input", "family"):
            if hasattr(args, req) and getattr(args, req) is None \
                    and args.command not in ("simulate", "recruit", "survival"):
                raise ConfigError(f"--{req} is required")
        if args.command in ("recruit", "survival") and getattr(args, "input", None) is None:
            raise ConfigError("--input is required")
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetError as exc:
        print(f"simulation budget error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (FitError, ArithmeticError, np.linalg.LinAlgError, ParameterDomainError) as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (ParseError, ValueError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
