"""Command-line front end.

Every subcommand reads an optional JSON config, runs one experiment and
writes CSV files into ``--out``. Exit codes: 0 success, 2 bad configuration,
3 failed numerical invariant.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .opalg import NumericalError

log = logging.getLogger("damlab")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3

DEFAULTS: dict[str, Any] = {
    "theta": 0.5,
    "gamma": 5.0,
    "sigma": 0.2,
    "t": 0.01,
    "theta_list": None,
    "gamma_list": [5.0, 15.0, 25.0, 35.0],
    "sigma_list": None,
    "t_list": None,
    "inv_t_list": None,
    "x_nodes": 1001,
    "p_nodes": 257,
    "p_span": 8.0,
    "n": 100,
    "trials": 4000,
    "scheme": ["pm", "dam"],
    "tolerance": 0.01,
    "cqed_tolerance": 1e-5,
    "copies": [1, 2],
    "n_random": 200,
    "rabi_mhz": 2.0,
    "alpha": 0.0,
    "delta_omega": 0.0,
    "nbar": 16.0,
    "n_max": 48,
    "criteria": None,
}


class ConfigError(ValueError):
    pass


class InvariantError(RuntimeError):
    pass


def _number_list(cfg, key, default):
    val = cfg[key] if cfg[key] is not None else default
    if isinstance(val, (int, float)):
        val = [val]
    try:
        return [float(v) for v in val]
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a number or a list of numbers") from None


def load_config(path: str | None, overrides: dict[str, Any]) -> dict[str, Any]:
    raw: dict[str, Any] = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = {**DEFAULTS, **raw, **{k: v for k, v in overrides.items() if v is not None}}
    _validate(cfg)
    return cfg


def _validate(cfg):
    def num(key, lo=None, hi=None, lo_open=False, integer=False):
        v = cfg[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{key} must be numeric")
        if integer and int(v) != v:
            raise ConfigError(f"{key} must be an integer")
        if lo is not None and (v <= lo if lo_open else v < lo):
            raise ConfigError(f"{key}={v} below its allowed range")
        if hi is not None and v > hi:
            raise ConfigError(f"{key}={v} above its allowed range")

    num("theta", 0.0, 1.0, lo_open=True)
    if cfg["theta"] >= 1.0:
        raise ConfigError("theta must lie in (0, 1)")
    num("gamma", 0.0, lo_open=True)
    num("sigma", 0.0)
    num("t", 0.0)
    num("x_nodes", 3, integer=True)
    num("p_nodes", 3, integer=True)
    if int(cfg["p_nodes"]) % 2 == 0:
        raise ConfigError("p_nodes must be odd")
    num("p_span", 0.0, lo_open=True)
    num("n", 1, integer=True)
    num("trials", 1, integer=True)
    num("tolerance", 0.0, lo_open=True)
    num("cqed_tolerance", 0.0, lo_open=True)
    num("n_random", 1, integer=True)
    num("nbar", 0.0)
    num("n_max", 1, integer=True)
    for key in ("rabi_mhz", "alpha", "delta_omega"):
        num(key)
    schemes = cfg["scheme"] if isinstance(cfg["scheme"], list) else [cfg["scheme"]]
    if not schemes or any(s not in ("pm", "dam", "finite") for s in schemes):
        raise ConfigError("scheme must be pm, dam or finite")
    cfg["scheme"] = schemes
    for key in ("theta_list", "gamma_list", "sigma_list", "t_list", "inv_t_list"):
        if cfg[key] is not None:
            vals = _number_list(cfg, key, None)
            if any(v < 0 for v in vals):
                raise ConfigError(f"{key} entries must be non-negative")
            cfg[key] = vals
    if cfg["theta_list"] and any(not 0 < v < 1 for v in cfg["theta_list"]):
        raise ConfigError("theta_list entries must lie in (0, 1)")
    copies = cfg["copies"] if isinstance(cfg["copies"], list) else [cfg["copies"]]
    if any(c not in (1, 2) for c in copies):
        raise ConfigError("copies must be 1 or 2")
    cfg["copies"] = copies
    if cfg["criteria"] is not None:
        from .acceptance import CRITERIA

        crit = cfg["criteria"] if isinstance(cfg["criteria"], list) else [cfg["criteria"]]
        if any(c not in CRITERIA for c in crit):
            raise ConfigError(f"criteria must be drawn from {sorted(CRITERIA)}")
        cfg["criteria"] = crit


def config_hash(cfg: dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.12g" % (v + 0.0)  # folds -0.0 into 0
    return str(v)


def write_csv(path: Path, header: list[str], rows, comment: str) -> Path:
    """Write atomically: render into a temp file in the target dir, then rename."""
    buf = io.StringIO()
    buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


@dataclass
class Context:
    cfg: dict[str, Any]
    out: Path
    seed: int
    threads: int
    strict: bool
    command: str

    def emit(self, name: str, header: list[str], rows) -> Path:
        comment = f"damlab {self.command} config_sha256={config_hash(self.cfg)} seed={self.seed}"
        path = write_csv(self.out / f"{name}.csv", header, rows, comment)
        log.info("wrote %s", path)
        return path


# -- subcommands -------------------------------------------------------------

def _setup(ctx, **kw):
    from .pointer import GadMeasurementSetup

    c = ctx.cfg
    args = dict(theta=c["theta"], gamma=c["gamma"], sigma=c["sigma"],
                nodes=int(c["p_nodes"]), span=float(c["p_span"]))
    args.update(kw)
    if args["sigma"] <= 0:
        raise ConfigError("sigma must be positive for this experiment")
    return GadMeasurementSetup(**args)


def cmd_steady(ctx):
    from .liouville import gad_liouvillian
    from .metrology import gad_qfi
    from .opalg import spectral_info, steady_state

    c = ctx.cfg
    rows = []
    for th in _number_list(c, "theta_list", [round(0.1 * k, 1) for k in range(1, 10)]):
        for g in _number_list(c, "gamma_list", [c["gamma"]]):
            lv = gad_liouvillian(th, g)
            rho = steady_state(lv)
            if abs(rho[0, 0].real - th) > 1e-10:
                raise InvariantError(f"steady state population {rho[0, 0].real} differs from theta={th}")
            rows.append((th, g, rho[0, 0].real, rho[1, 1].real, rho[0, 1].real, rho[0, 1].imag,
                         spectral_info(lv).gap, gad_qfi(th)))
    ctx.emit("steady", ["theta", "gamma", "rho00", "rho11", "rho01_re", "rho01_im", "gap", "qfi"], rows)


def cmd_pointer_dist(ctx):
    from .pointer import count_peaks, default_x_grid

    s = _setup(ctx)
    x = default_x_grid(s.observable, s.rho, s.sigma, int(ctx.cfg["x_nodes"]))
    t_list = _number_list(ctx.cfg, "t_list", [0.0, 0.2, 0.4, 0.6, 1.0, 2.0, 5.0, 30.0, 90.0])
    dists = [s.profile(t, x, ctx.threads) for t in t_list]
    ctx.emit("pointer_dist", ["x"] + [f"p_T={t:g}" for t in t_list],
             zip(x, *[d.density for d in dists]))
    ctx.emit("pointer_peaks", ["T", "peaks", "normalization", "mean"],
             [(t, count_peaks(d), d.normalization(), d.mean()) for t, d in zip(t_list, dists)])


def cmd_fig2(ctx):
    c = ctx.cfg
    inv_t = _number_list(c, "inv_t_list", list(np.geomspace(20.0, 2000.0, 9)))
    t_list = _number_list(c, "t_list", list(np.geomspace(2.0, 200.0, 9)))
    sweep, cross = [], []
    for g in _number_list(c, "gamma_list", [c["gamma"]]):
        s = _setup(ctx, gamma=g)
        for v in inv_t:
            sweep.append((g, "pm", v, 1.0 / v, s.pm_measure(1.0 / v, workers=ctx.threads)))
        for t in t_list:
            sweep.append((g, "dam", 1.0 / t, t, s.dam_measure(t, workers=ctx.threads)))
        cross.append((g, c["tolerance"], s.pm_crossing(c["tolerance"], workers=ctx.threads),
                      s.dam_crossing(c["tolerance"], workers=ctx.threads)))
    ctx.emit("fig2_sweep", ["gamma", "measure", "inv_T", "T", "deviation"], sweep)
    ctx.emit("fig2_crossings", ["gamma", "tolerance", "pm_inv_T", "dam_T"], cross)


def cmd_povm(ctx):
    from .metrology import (povm_adiabatic, povm_analytic_gad, povm_impulsive, povm_numeric,
                            povm_small_t)
    from .pointer import default_x_grid

    c = ctx.cfg
    s = _setup(ctx)
    x = default_x_grid(s.observable, s.rho, s.sigma, int(c["x_nodes"]))
    t = float(c["t"])
    paths = {
        "impulsive": povm_impulsive(s.sigma, x),
        "small_t": povm_small_t(s.theta, s.gamma, t, s.sigma, x),
        "numeric": povm_numeric(s.liouvillian(), s.observable, s.apparatus, t, x),
        "analytic": povm_analytic_gad(s.theta, s.gamma, t, s.sigma, x),
        "adiabatic": povm_adiabatic(s.theta, s.sigma, x),
    }
    cols, data = ["x"], [x]
    for name, pov in paths.items():
        cols += [f"{name}_00", f"{name}_11"]
        data += [pov.elements[:, 0, 0].real, pov.elements[:, 1, 1].real]
    ctx.emit("povm_elements", cols, zip(*data))
    report = [(name, 0.0 if name == "impulsive" else (np.inf if name == "adiabatic" else t),
               pov.completeness_error(), pov.min_eigenvalue(), pov.asymmetry)
              for name, pov in paths.items()]
    ctx.emit("povm_completeness", ["path", "T", "completeness_error", "min_eigenvalue", "asymmetry"],
             report)
    worst = max(r[2] for r in report)
    if worst > 1e-3:
        raise InvariantError(f"POVM completeness error {worst:.2e} exceeds 1e-3")


def cmd_fisher(ctx):
    from .metrology import as_distribution, cfi, dam_density, fisher_x_grid, gad_qfi, pm_density

    c = ctx.cfg
    rows = []
    for sigma in _number_list(c, "sigma_list", [0.4, 0.3, 0.2, 0.1]):
        if sigma <= 0:
            raise ConfigError("sigma_list entries must be positive")
        x = fisher_x_grid(sigma)
        for th in _number_list(c, "theta_list", [round(0.1 * k, 1) for k in range(1, 10)]):
            f_pm = cfi(lambda t: as_distribution(x, pm_density(x, t, sigma)), th)
            f_dam = cfi(lambda t: as_distribution(x, dam_density(x, t, sigma)), th)
            h = gad_qfi(th)
            if f_pm > h + 1e-6:
                raise InvariantError(f"ideal PM CFI {f_pm:.8g} exceeds QFI {h:.8g}")
            rows.append((th, sigma, f_pm, f_dam, h, 1 / f_pm, 1 / f_dam, 1 / h))
    ctx.emit("fisher", ["theta", "sigma", "cfi_pm", "cfi_dam", "qfi",
                        "inv_cfi_pm", "inv_cfi_dam", "inv_qfi"], rows)


def cmd_estimate(ctx):
    from .metrology import as_distribution, estimation_variance, fisher_x_grid, povm_analytic_gad

    c = ctx.cfg
    th, n, trials = c["theta"], int(c["n"]), int(c["trials"])
    rows = []
    for scheme in c["scheme"]:
        for sigma in _number_list(c, "sigma_list", [c["sigma"]]):
            dist = None
            if scheme == "finite":
                if sigma <= 0:
                    raise ConfigError("the finite scheme needs sigma > 0")
                x = fisher_x_grid(sigma)
                pov = povm_analytic_gad(th, c["gamma"], c["t"], sigma, x)
                dist = as_distribution(x, np.clip(pov.probabilities(np.diag([th, 1 - th])), 0, None))
            run = estimation_variance(scheme, th, sigma, n, trials, ctx.seed, dist)
            predicted = {"pm": (th * (1 - th) + sigma**2) / n, "dam": sigma**2 / n}.get(scheme, np.nan)
            rows.append((scheme, th, sigma, n, trials, run.bias, run.variance, predicted, run.qcrb,
                         run.variance < run.qcrb))
    ctx.emit("estimate", ["scheme", "theta", "sigma", "N", "trials", "bias", "variance",
                          "predicted_variance", "qcrb", "below_qcrb"], rows)


def cmd_violate(ctx):
    from .metrology import qcrb_violation_report

    c = ctx.cfg
    rows = []
    for th in _number_list(c, "theta_list", [0.3, 0.4, 0.5]):
        reports = qcrb_violation_report(th, _number_list(c, "sigma_list", [1 / 5, 1 / 6, 1 / 7, 1 / 8]),
                                        _number_list(c, "t_list", [0.005, 0.01, 0.015, 0.02]),
                                        c["gamma"], int(c["n"]))
        rows += [(r.scheme, r.theta, r.sigma, r.t, r.cfi, r.qfi, r.ccrb, r.qcrb, r.violated)
                 for r in reports]
    ctx.emit("violate", ["scheme", "theta", "sigma", "T", "cfi", "qfi", "ccrb", "qcrb", "violated"], rows)


def cmd_appendix_b(ctx):
    from .metrology import appendix_b_optimality_check, gad_qfi

    c = ctx.cfg
    t_list = _number_list(c, "t_list", [0.01, 0.1, 0.5, 2.0, 10.0])
    rows = []
    for k in c["copies"]:
        best = appendix_b_optimality_check(c["theta"], c["gamma"], t_list, k, int(c["n_random"]), ctx.seed)
        bound = k * gad_qfi(c["theta"])
        rows.append((k, c["theta"], c["gamma"], int(c["n_random"]), best, bound, best <= bound + 1e-6))
        if best > bound + 1e-6:
            raise InvariantError(f"QFI {best:.8g} of {k} copies exceeds the bound {bound:.8g}")
    ctx.emit("appendix_b", ["copies", "theta", "gamma", "inputs", "max_qfi", "bound", "within_bound"], rows)


def cmd_cqed(ctx):
    from .cqed import CqedParams, cqed_dam_crossing, cqed_deviation_measures, cqed_pm_crossing

    c = ctx.cfg
    t_list = _number_list(c, "t_list", list(np.geomspace(1e-3, 1e3, 13)))
    sweep, cross = [], []
    for g in _number_list(c, "gamma_list", [c["gamma"]]):
        p = CqedParams.from_rabi_frequency(c["rabi_mhz"], alpha=c["alpha"], delta_omega=c["delta_omega"],
                                           gamma1=g, gamma2=g, nbar=c["nbar"], n_max=int(c["n_max"]))
        for t, pm, dam in cqed_deviation_measures(p, t_list, workers=ctx.threads):
            sweep.append((g, t, 1.0 / t, pm, dam))
        tol = c["cqed_tolerance"]
        cross.append((g, tol, cqed_pm_crossing(p, tol, workers=ctx.threads),
                      cqed_dam_crossing(p, tol, workers=ctx.threads)))
    ctx.emit("cqed_sweep", ["gamma", "T", "inv_T", "pm_deviation", "dam_deviation"], sweep)
    ctx.emit("cqed_crossings", ["gamma", "tolerance", "pm_inv_T", "dam_T"], cross)


def cmd_reproduce_all(ctx):
    from .acceptance import run_all

    results = run_all(ctx.cfg["criteria"])
    for r in results:
        print(r.line())
    ctx.emit("acceptance", ["criterion", "name", "passed", "detail"],
             [(r.number, r.name, r.passed, r.detail) for r in results])
    failed = [r for r in results if not r.passed]
    if failed:
        raise InvariantError("acceptance criteria failed: " + ", ".join(str(r.number) for r in failed))


COMMANDS: dict[str, tuple[Callable[[Context], None], str]] = {
    "steady": (cmd_steady, "steady state, gap and QFI of the amplitude-damping model"),
    "pointer-dist": (cmd_pointer_dist, "pointer profiles along a coupling-time sweep"),
    "fig2": (cmd_fig2, "PM and DAM deviation sweeps with threshold crossings"),
    "povm": (cmd_povm, "POVM elements from every construction, with completeness"),
    "fisher": (cmd_fisher, "classical and quantum Fisher information tables"),
    "estimate": (cmd_estimate, "Monte Carlo variance of the sample-mean estimator"),
    "violate": (cmd_violate, "Cramer-Rao comparison at small finite T"),
    "appendix-b": (cmd_appendix_b, "QFI bound over random channel inputs"),
    "cqed": (cmd_cqed, "qubit-resonator deviation sweep and crossings"),
    "reproduce-all": (cmd_reproduce_all, "run the full acceptance suite"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="damlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--seed", type=int, default=0, help="random seed (u64)")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads, 0 = auto (env DAMLAB_THREADS as fallback)")
        sp.add_argument("--strict", action="store_true", help="escalate invariant warnings to errors")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "estimate":
            sp.add_argument("--scheme", choices=["pm", "dam", "finite"], action="append")
            sp.add_argument("--sigma", type=float)
            sp.add_argument("--theta", type=float)
    return parser


def _threads(arg: int | None) -> int:
    if arg is None:
        env = os.environ.get("DAMLAB_THREADS")
        try:
            arg = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"DAMLAB_THREADS must be an integer, got {env!r}") from None
    if arg < 0:
        raise ConfigError("threads must be >= 0")
    return arg or (os.cpu_count() or 1)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k, None) for k in ("scheme", "sigma", "theta")}
    try:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        cfg = load_config(args.config, overrides)
        ctx = Context(cfg, Path(args.out), args.seed, _threads(args.threads), args.strict, args.command)
        with warnings.catch_warnings():
            if args.strict:
                warnings.simplefilter("error")
            COMMANDS[args.command][0](ctx)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantError, NumericalError) as exc:
        print(f"invariant failed: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except Warning as exc:
        print(f"invariant failed (strict): {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
