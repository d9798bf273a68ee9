"""Command line runner for the numerical studies.

Usage::

    colecole <command> [--config FILE] [--out DIR] [--alpha A] [--degree K]
             [--cells N] [--desk-scale] [--set KEY=VALUE ...]

Commands: optimize, convergence, energy, dispersion, timing.

A config file is a flat list of ``key = value`` lines (``#`` starts a
comment; an optional ``[section]`` header is ignored).  Command line flags
override file values.  Every resolved value is echoed to ``manifest.txt``
in the output directory together with run statistics.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from colecole import experiments as ex
from colecole.dgcore import Mesh1D
from colecole.diagnostics import (
    ENERGY_HEADER,
    dispersion_approx,
    dispersion_exact,
    write_convergence_csv,
    write_dispersion_csv,
    write_energy_csv,
)
from colecole.material import MaterialParams
from colecole.quadopt import (
    FrequencyBand,
    QuadratureError,
    chi,
    gauss_jacobi_init,
    log_spaced_samples,
    max_relative_error,
    objective,
    optimize_quadrature,
    plotting_grid,
    read_quadrature,
    write_quadrature,
)
from colecole.stepper import write_manifest

COMMANDS = ("optimize", "convergence", "energy", "dispersion", "timing")

# Defaults per command; values are strings, parsed on resolution.
DEFAULTS = {
    "common": {
        "eps0": "1",
        "eps_inf": "1",
        "eps_s": "2",
        "mu0": "1",
        "tau0": "1",
        "x_minus": "0",
        "x_plus": "2",
    },
    "optimize": {"alpha": "0.5", "L": "20", "M": "", "omega_min": "0.5", "omega_max": "5", "n_grid": "400"},
    "convergence": {
        "alpha": "0.3,0.5,0.7",
        "degree": "1,2",
        "cells": "10,20,40,80",
        "T": "2",
        "tau": "h2",
        "sources": "manufactured",
        "quadrature": "reference",
        "L": "",
        "omega_min": "",
        "omega_max": "",
        "quad_file": "",
    },
    "energy": {
        "alpha": "0.3,0.5,0.7",
        "degree": "1",
        "cells": "800",
        "T": "2.5",
        "tau": "h",
        "sources": "zero",
        "L": "20",
        "omega_min": "0.5",
        "omega_max": "5",
        "quad_file": "",
        "bootstrap": "euler",
    },
    "dispersion": {"alpha": "0.3,0.5,0.7,1", "L": "6", "omega_min": repr(20 * math.pi), "omega_max": repr(200 * math.pi), "n_grid": "400"},
    "timing": {
        "alpha": "0.5",
        "degree": "1",
        "cells": "10",
        "T": "1",
        "nt": ",".join(map(str, ex.TIMING_GRID_FULL)),
        "rounds": "1",
        "clock": "cpu",
        "sources": "manufactured",
        "L": "20",
        "omega_min": "0.5",
        "omega_max": "5",
    },
}

DESK_SCALE = {
    "energy": {"cells": "200"},
    "timing": {"nt": ",".join(map(str, ex.TIMING_GRID_DESK)), "rounds": "2"},
}


class UsageError(ValueError):
    """Invalid configuration value."""


# -- configuration --------------------------------------------------------------


def read_config_file(path) -> dict:
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[run]\n" + text
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case sensitive (T vs tau)
    parser.read_string(text)
    out = {}
    for section in parser.sections():
        out.update(parser[section])
    return out


def resolve(command: str, args) -> dict:
    cfg = dict(DEFAULTS["common"])
    cfg.update(DEFAULTS[command])
    if args.desk_scale:
        cfg.update(DESK_SCALE.get(command, {}))
    if args.config:
        cfg.update(read_config_file(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg[key.strip()] = value.strip()
    for key in ("alpha", "degree", "cells"):
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    known = set(DEFAULTS["common"]) | set(DEFAULTS[command])
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise UsageError(f"unknown key(s) for {command}: {', '.join(unknown)}")
    cfg["command"] = command
    cfg["desk_scale"] = str(bool(args.desk_scale))
    return cfg


def _float(cfg, key) -> float:
    try:
        return float(cfg[key])
    except ValueError:
        raise UsageError(f"{key} must be a number, got {cfg[key]!r}") from None


def _int(cfg, key) -> int:
    try:
        return int(cfg[key])
    except ValueError:
        raise UsageError(f"{key} must be an integer, got {cfg[key]!r}") from None


def _floats(cfg, key) -> list:
    try:
        return [float(v) for v in cfg[key].split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{key} must be a comma separated list of numbers") from None


def _ints(cfg, key) -> list:
    try:
        return [int(v) for v in cfg[key].split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{key} must be a comma separated list of integers") from None


def material(cfg, alpha: float) -> MaterialParams:
    return MaterialParams(
        _float(cfg, "eps0"), _float(cfg, "eps_inf"), _float(cfg, "eps_s"), _float(cfg, "mu0"), _float(cfg, "tau0"), alpha
    )


def _domain(cfg):
    a, b = _float(cfg, "x_minus"), _float(cfg, "x_plus")
    if not b > a:
        raise UsageError("x_plus must exceed x_minus")
    return a, b


def _tau(cfg, h: float, T: float) -> float:
    rule = cfg["tau"].strip().lower()
    if rule == "h":
        target = h
    elif rule in ("h2", "h^2"):
        target = h * h
    else:
        target = _float(cfg, "tau")
        if not target > 0:
            raise UsageError("tau must be positive")
        return target
    return T / max(1, round(T / target))


def _quadrature(cfg, alpha: float):
    if cfg.get("quad_file"):
        q = read_quadrature(cfg["quad_file"])
        if abs(q.alpha - alpha) > 1e-12:
            raise UsageError(f"quadrature file is for alpha={q.alpha}, run needs alpha={alpha}")
        return q
    if cfg.get("quadrature", "") == "reference" and not cfg.get("L"):
        return ex.reference_quadrature(alpha)
    return ex.fitted_quadrature(alpha, _int(cfg, "L"), _float(cfg, "omega_min"), _float(cfg, "omega_max"))


def _tag(alpha: float) -> str:
    return f"{alpha:g}"


# -- commands -------------------------------------------------------------------


def cmd_optimize(cfg: dict, out: Path, manifest: dict) -> int:
    alpha, L = _float(cfg, "alpha"), _int(cfg, "L")
    M = _int(cfg, "M") if cfg["M"] else 2 * L
    band = FrequencyBand(_float(cfg, "omega_min"), _float(cfg, "omega_max"), M)
    samples = log_spaced_samples(band)
    init = gauss_jacobi_init(L, alpha, band)
    try:
        quad = optimize_quadrature(alpha, L, band, raise_on_failure=True)
        failed = None
    except QuadratureError as err:
        quad, failed = err.fallback, str(err)
    stem = f"quadrature_alpha{_tag(alpha)}_L{L}_M{M}"
    write_quadrature(out / f"{stem}.txt", quad)
    grid = plotting_grid(band, _int(cfg, "n_grid"))
    err_fit = np.abs(chi(grid, quad) - 1.0)
    err_init = np.abs(chi(grid, init) - 1.0)
    with open(out / f"{stem}_error.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["omega", "rel_error", "rel_error_init"])
        for w, e, e0 in zip(grid, err_fit, err_init):
            wr.writerow([repr(float(w)), repr(float(e)), repr(float(e0))])
    manifest.update(
        {
            "M": M,
            "objective_init": objective(init, alpha, samples),
            "objective_final": objective(quad, alpha, samples),
            "max_band_error": max_relative_error(quad, np.geomspace(band.omega_min, band.omega_max, 400)),
            "feasible": quad.is_feasible(),
            "fallback": quad.fallback,
        }
    )
    if failed:
        manifest["error"] = failed
        raise RuntimeError(f"optimizer failed, initializer written to {stem}.txt: {failed}")
    return 0


def cmd_convergence(cfg: dict, out: Path, manifest: dict) -> int:
    if cfg["sources"] != "manufactured":
        raise UsageError("convergence needs sources = manufactured")
    if cfg["tau"].strip().lower() not in ("h2", "h^2"):
        raise UsageError("convergence uses tau = h2")
    levels = _ints(cfg, "cells")
    T = _float(cfg, "T")
    if _domain(cfg) != ex.DOMAIN:
        raise UsageError("the manufactured problem lives on [0, 2]")
    for alpha in _floats(cfg, "alpha"):
        quad = _quadrature(cfg, alpha)
        for k in _ints(cfg, "degree"):
            start = time.perf_counter()
            rows = ex.convergence_run(alpha, k, levels, quad, T)
            name = f"convergence_k{k}_alpha{_tag(alpha)}.csv"
            write_convergence_csv(out / name, rows)
            last = rows[-1]
            manifest[f"orders_k{k}_alpha{_tag(alpha)}"] = f"{last.order_E} {last.order_H} {last.order_P}"
            manifest[f"wall_time_s_k{k}_alpha{_tag(alpha)}"] = time.perf_counter() - start
        manifest[f"quad_L_alpha{_tag(alpha)}"] = quad.L
        if quad.band is not None:
            manifest[f"quad_band_alpha{_tag(alpha)}"] = f"{quad.band.omega_min!r} {quad.band.omega_max!r}"
    return 0


def cmd_energy(cfg: dict, out: Path, manifest: dict) -> int:
    if cfg["sources"] != "zero":
        raise UsageError("energy uses sources = zero")
    if _ints(cfg, "degree") != [1]:
        raise UsageError("energy uses degree 1")
    cells = _int(cfg, "cells")
    T = _float(cfg, "T")
    mesh = Mesh1D(*_domain(cfg), cells)
    tau = _tau(cfg, mesh.h, T)
    for alpha in _floats(cfg, "alpha"):
        base = ex.energy_config(alpha, cells, _quadrature(cfg, alpha), T, cfg["bootstrap"])
        run_cfg = replace(base, mesh=mesh, tau=tau, params=material(cfg, alpha))
        trace = ex.energy_run(run_cfg)
        write_energy_csv(out / f"energy_alpha{_tag(alpha)}.csv", trace.samples)
        with open(out / f"energy_diff_alpha{_tag(alpha)}.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["n", "t", "d_total", "d_e1"])
            for n, (dt, d1) in enumerate(zip(trace.d_total, trace.d_e1)):
                wr.writerow([n, repr(trace.samples[n].t), repr(float(dt)), repr(float(d1))])
        tag = _tag(alpha)
        manifest[f"tau_alpha{tag}"] = tau
        manifest[f"worst_total_drop_alpha{tag}"] = trace.worst_total_drop()
        manifest[f"negative_e1_steps_alpha{tag}"] = trace.negative_e1_steps()
        manifest[f"min_e2_sharp_alpha{tag}"] = min(s.e2_sharp for s in trace.samples)
        manifest[f"wall_time_s_alpha{tag}"] = trace.manifest["wall_time_s"]
    manifest["energy_columns"] = ",".join(ENERGY_HEADER)
    return 0


def cmd_dispersion(cfg: dict, out: Path, manifest: dict) -> int:
    band = (_float(cfg, "omega_min"), _float(cfg, "omega_max"))
    L = _int(cfg, "L")
    omega = ex.dispersion_grid(_int(cfg, "n_grid"), band)
    alphas = _floats(cfg, "alpha")
    for a in alphas:
        if not 0 < a <= 1:
            raise UsageError("alpha must lie in (0, 1]")
    for a in alphas:
        # the exponent of MaterialParams must stay below 1; alpha = 1 is passed as an override
        base = material(cfg, a if a < 1 else 0.5)
        exact = [dispersion_exact(w, base, alpha=a) for w in omega]
        write_dispersion_csv(out / f"dispersion_exact_alpha{_tag(a)}.csv", exact)
        if a < 1:
            params = base.with_alpha(a)
            quad = ex.fitted_quadrature(a, L, *band)
            approx = [dispersion_approx(w, params, quad) for w in omega]
            write_dispersion_csv(out / f"dispersion_approx_alpha{_tag(a)}.csv", approx)
            curves = ex.DispersionCurves(a, omega, exact, approx, quad)
            manifest[f"max_c_deviation_alpha{_tag(a)}"] = curves.max_band_deviation(band)
        else:
            manifest["debye_mismatch"] = ex.debye_mismatch(omega)
    return 0


def cmd_timing(cfg: dict, out: Path, manifest: dict) -> int:
    grid = _ints(cfg, "nt")
    if len(grid) < 2:
        raise UsageError("timing needs at least two Nt values")
    if cfg["sources"] != "manufactured":
        raise UsageError("timing uses sources = manufactured")
    alpha = _float(cfg, "alpha")
    T = _float(cfg, "T")
    if T != 1.0:
        raise UsageError("timing uses T = 1 so that tau = 1/Nt")
    clock = cfg["clock"]
    if clock not in ("cpu", "wall"):
        raise UsageError("clock must be cpu or wall")
    quad = _quadrature(cfg, alpha)
    degree = _int(cfg, "degree")
    rows = ex.timing_study(grid, degree, _int(cfg, "cells"), _int(cfg, "rounds"), alpha, quad, clock)
    nts = [r.n_steps for r in rows]
    fast = [r.fast_seconds for r in rows]
    direct = [r.direct_seconds for r in rows]
    slope_fast, slope_direct = ex.loglog_slope(nts, fast), ex.loglog_slope(nts, direct)
    with open(out / "timing.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["Nt", "fast_seconds", "direct_seconds"])
        for r in rows:
            wr.writerow([r.n_steps, repr(r.fast_seconds), repr(r.direct_seconds)])
        wr.writerow(["slope", repr(slope_fast), repr(slope_direct)])
    manifest["slope_fast"] = slope_fast
    manifest["slope_direct"] = slope_direct
    manifest["ratios_fast"] = " ".join(f"{v:.3f}" for v in ex.doubling_ratios(fast))
    manifest["ratios_direct"] = " ".join(f"{v:.3f}" for v in ex.doubling_ratios(direct))
    return 0


HANDLERS = {
    "optimize": cmd_optimize,
    "convergence": cmd_convergence,
    "energy": cmd_energy,
    "dispersion": cmd_dispersion,
    "timing": cmd_timing,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="colecole", description="Cole-Cole DG solver studies")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} study")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", default=f"out/{name}", help="output directory")
        p.add_argument("--alpha", help="fractional order, or comma list where allowed")
        p.add_argument("--degree", help="polynomial degree, or comma list where allowed")
        p.add_argument("--cells", help="number of cells, or comma list of mesh levels")
        p.add_argument("--desk-scale", action="store_true", help="smaller problem sizes for a quick run")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args.command, args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        manifest = dict(sorted(cfg.items()))
        manifest["out"] = str(out)
        start = time.perf_counter()
        try:
            status = HANDLERS[args.command](cfg, out, manifest)
        finally:
            manifest["total_wall_time_s"] = time.perf_counter() - start
            write_manifest(out / "manifest.txt", manifest)
    except Exception as err:  # one-line diagnostic, nonzero exit
        msg = str(err).splitlines()[0] if str(err) else type(err).__name__
        print(f"colecole {args.command}: error: {msg}", file=sys.stderr)
        return 2 if isinstance(err, UsageError) else 1
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
