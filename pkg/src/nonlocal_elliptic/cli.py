"""Batch front-end: config parsing, dispatch, CSV emission.

The config format is flat key-value text, one `section.key = value` per
line, `#` comments, values parsed as numbers (fractions like 1/128
included), comma lists, or bare strings.  Parsing collects every
violation before reporting, so a config is fixed in one round trip.

Exit codes: 0 success, 1 verification failed, 2 configuration or I/O
error, 3 numeric failure.
"""

import argparse
import csv
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from .abp import abp_inequality_check, make_abp_instance
from .barriers import search_barrier_params
from .errors import ConfigurationError, NumericError, RejectedInstance
from .kernel_family import (
    KernelParams,
    LinearOpSpec,
    OperatorDictionary,
    default_dictionary,
    extremal_minus,
    extremal_plus,
    fractional,
)
from .nonlocal_eval import QuadratureConfig, eval_linear
from .profiles import Constant, LocalizedWell, SphericalCap
from .regularity import oscillation_decay, point_estimate_check
from .solver import (
    GridConfig,
    discretize,
    load_checkpoint,
    save_checkpoint,
    solve_dirichlet,
)

COMMANDS = ("eval", "barrier", "solve", "abp", "regularity")

_KERNEL_BUILDERS = {
    "extremal_minus": extremal_minus,
    "extremal_plus": extremal_plus,
    "fractional": fractional,
}

# section -> key -> (required type tag, doc)
_SCHEMA = {
    "params": {"n": "int", "sigma": "num", "lam": "num", "Lam": "num",
               "beta": "num", "lower_support": "num"},
    "grid": {"h": "num", "R": "num"},
    "quadrature": {"inner_radius": "num", "shell_growth": "num",
                   "outer_cut": "num", "rel_tol": "num", "m_angular": "int",
                   "radial_coarse": "int", "radial_fine": "int",
                   "rough_mult": "int", "min_inner": "num"},
    "dictionary": {"kernels": "list", "combinator": "str", "drift": "list"},
    "io": {"out": "str", "seed": "int"},
    "eval": {"profile": "str", "count": "int", "radius": "num"},
    "solve": {"f": "num", "g": "num", "tol": "num"},
    "barrier": {"lemma": "str", "exponent_lo": "num", "exponent_hi": "num",
                "radius_lo": "num", "radius_hi": "num"},
    "abp": {"rho0": "num", "amplitude": "num"},
    "regularity": {"solution": "str", "radii": "list", "thresholds": "list",
                   "probe": "list"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """A parsed, fully validated experiment description."""

    command: str
    params: KernelParams
    dictionary: OperatorDictionary
    grid: GridConfig
    quadrature: QuadratureConfig
    out: str
    seed: int
    options: dict = field(default_factory=dict)


def _parse_scalar(tok):
    tok = tok.strip()
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        pass
    if tok.count("/") == 1:
        a, b = tok.split("/")
        try:
            return float(a) / float(b)
        except (ValueError, ZeroDivisionError):
            pass
    return tok


def _parse_value(raw):
    if "," in raw:
        return tuple(_parse_scalar(t) for t in raw.split(","))
    return _parse_scalar(raw)


def parse_config(text):
    """Parse and validate; raises ConfigurationError listing every problem."""
    problems = []
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            problems.append(f"line {lineno}: expected 'key = value', got {body!r}")
            continue
        key, raw = (s.strip() for s in body.split("=", 1))
        if not key or not raw:
            problems.append(f"line {lineno}: empty key or value")
            continue
        if key in entries:
            problems.append(f"line {lineno}: duplicate key {key!r}")
            continue
        if key == "command":
            if raw not in COMMANDS:
                problems.append(
                    f"line {lineno}: command must be one of {COMMANDS}, got {raw!r}"
                )
                continue
            entries[key] = raw
            continue
        if "." not in key:
            problems.append(f"line {lineno}: key {key!r} needs a section prefix")
            continue
        section, name = key.split(".", 1)
        if section not in _SCHEMA or name not in _SCHEMA[section]:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        val = _parse_value(raw)
        tag = _SCHEMA[section][name]
        if tag == "int" and not isinstance(val, int):
            problems.append(f"line {lineno}: {key} must be an integer, got {raw!r}")
            continue
        if tag == "num" and not isinstance(val, (int, float)):
            problems.append(f"line {lineno}: {key} must be a number, got {raw!r}")
            continue
        if tag == "list" and not isinstance(val, tuple):
            val = (val,)
        entries[key] = val

    def take(key, default=None):
        return entries.pop(key, default)

    command = take("command")

    params = None
    p_needed = ("params.n", "params.sigma", "params.lam", "params.Lam",
                "params.beta")
    missing = [k for k in p_needed if k not in entries]
    if missing:
        problems.extend(f"missing required key {k}" for k in missing)
    else:
        kw = {k.split(".")[1]: take(k) for k in p_needed}
        ls = take("params.lower_support")
        if ls is not None:
            kw["lower_support"] = ls
        try:
            params = KernelParams(**kw)
        except ConfigurationError as e:
            problems.extend(f"params: {m}" for m in e.violations)

    grid = None
    if "grid.h" in entries or "grid.R" in entries:
        if "grid.h" in entries and "grid.R" in entries:
            try:
                grid = GridConfig(take("grid.h"), take("grid.R"))
            except ConfigurationError as e:
                problems.extend(f"grid: {m}" for m in e.violations)
        else:
            problems.append("grid needs both grid.h and grid.R")
    elif command in ("solve", "abp"):
        problems.append(f"command {command!r} requires grid.h and grid.R")

    qkw = {}
    for name in list(_SCHEMA["quadrature"]):
        v = take(f"quadrature.{name}")
        if v is not None:
            qkw[name] = v
    try:
        quadrature = QuadratureConfig(**qkw)
    except ConfigurationError as e:
        quadrature = None
        problems.extend(f"quadrature: {m}" for m in e.violations)

    dictionary = None
    names = take("dictionary.kernels")
    drift = take("dictionary.drift")
    combinator = take("dictionary.combinator", "inf")
    if params is not None:
        try:
            if names is None:
                dictionary = default_dictionary(params, combinator=combinator)
            else:
                ops = []
                for nm in names:
                    if nm not in _KERNEL_BUILDERS:
                        raise ConfigurationError(
                            [f"unknown kernel {nm!r}; available: "
                             f"{sorted(_KERNEL_BUILDERS)}"]
                        )
                    ops.append(LinearOpSpec(_KERNEL_BUILDERS[nm](params), drift))
                dictionary = OperatorDictionary(tuple(ops), combinator=combinator)
        except ConfigurationError as e:
            problems.extend(f"dictionary: {m}" for m in e.violations)

    out = take("io.out", ".")
    seed = take("io.seed", 0)
    if command == "regularity" and "regularity.solution" not in entries:
        problems.append("command 'regularity' requires regularity.solution")

    options = {k: v for k, v in entries.items()}
    if problems:
        raise ConfigurationError(problems)
    return ExperimentConfig(
        command, params, dictionary, grid, quadrature, str(out), int(seed),
        options,
    )


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.17g}"
    return x


def _run_eval(cfg, out):
    # bounded test fields: full-support kernels need integrable far growth
    n = cfg.params.n
    profiles = {
        "cap": SphericalCap(2.0, n),
        "well": LocalizedWell(2.0, 0.5, n),
    }
    name = cfg.options.get("eval.profile", "cap")
    if name not in profiles:
        raise ConfigurationError(
            [f"eval.profile must be one of {sorted(profiles)}, got {name!r}"]
        )
    prof = profiles[name]
    count = cfg.options.get("eval.count", 9)
    radius = cfg.options.get("eval.radius", 0.8)
    rows = []
    combine = min if cfg.dictionary.combinator == "inf" else max
    for r in np.linspace(0.0, radius, count):
        x = np.zeros(n)
        x[0] = r
        results = [eval_linear(prof, x, op, cfg.quadrature)
                   for op in cfg.dictionary.ops]
        best = combine(results, key=lambda e: e.value)
        rows.append([_fmt(float(r)), _fmt(best.value), _fmt(best.error_estimate)])
    _write_csv(f"{out}/eval.csv", ["x1", "value", "error_estimate"], rows)
    return 0


def _run_barrier(cfg, out):
    lemma = cfg.options.get("barrier.lemma", "boundary")
    box = {
        "exponent": (cfg.options.get("barrier.exponent_lo", 0.1),
                     cfg.options.get("barrier.exponent_hi", 0.9)),
        "radius": (cfg.options.get("barrier.radius_lo", 0.25),
                   cfg.options.get("barrier.radius_hi", 1.0)),
    }
    search = search_barrier_params(lemma, cfg.params, box, q=cfg.quadrature)
    rows = [[lemma,
             _fmt(search.spec.exponent if search.spec else math.nan),
             _fmt(search.spec.radius if search.spec else math.nan),
             _fmt(search.best_margin), search.evaluations, cfg.seed]]
    _write_csv(
        f"{out}/barrier.csv",
        ["lemma", "exponent", "radius", "margin", "evaluations", "seed"],
        rows,
    )
    if not search.found or search.best_margin <= 0.0:
        print(f"barrier search failed: best margin {search.best_margin:.3g}",
              file=sys.stderr)
        return 1
    return 0


def _run_solve(cfg, out):
    scheme = discretize(cfg.dictionary, cfg.grid, cfg.params)
    f = Constant(cfg.options.get("solve.f", -1.0), cfg.params.n)
    g = Constant(cfg.options.get("solve.g", 0.0), cfg.params.n)
    res = solve_dirichlet(scheme, f, g, tol=cfg.options.get("solve.tol", 1e-10))
    u = res.u
    grids = np.meshgrid(*([u.coords] * u.n), indexing="ij")
    pts = np.stack([g_.ravel() for g_ in grids], axis=1)
    vals = np.asarray(u.values).ravel()
    rows = [[*(_fmt(float(c)) for c in p), _fmt(float(v))]
            for p, v in zip(pts, vals)]
    _write_csv(
        f"{out}/solution.csv",
        [*(f"x{i + 1}" for i in range(u.n)), "u"],
        rows,
    )
    save_checkpoint(f"{out}/solution.bin", u, cfg.params.sigma)
    _write_csv(
        f"{out}/solve_report.csv",
        ["residual_norm", "iterations", "seed"],
        [[_fmt(res.residual_norm), res.iterations, cfg.seed]],
    )
    return 0


def _run_abp(cfg, out):
    rho0 = cfg.options.get("abp.rho0", 0.2)
    amplitude = cfg.options.get("abp.amplitude", 30.0)
    rng = np.random.default_rng(cfg.seed)
    center = rng.uniform(-0.25 * rho0, 0.25 * rho0, size=cfg.params.n)
    u, f, scheme = make_abp_instance(
        cfg.params, cfg.grid, rho0, center=center, amplitude=amplitude
    )
    rep = abp_inequality_check(u, f, cfg.params, rho0, scheme=scheme)
    _write_csv(
        f"{out}/abp.csv",
        ["rho0", "f_plus_norm", "threshold", "set_measure", "fitted_c",
         "slope_ball_radius", "contact_count", "cube_count",
         "max_cube_density", "supersolution_gap", "seed"],
        [[_fmt(rep.rho0), _fmt(rep.f_plus_norm), _fmt(rep.threshold),
          _fmt(rep.set_measure), _fmt(rep.fitted_c),
          _fmt(rep.slope_ball_radius), rep.contact_count, rep.cube_count,
          _fmt(rep.max_cube_density), _fmt(rep.supersolution_gap), cfg.seed]],
    )
    return 0


def _run_regularity(cfg, out):
    path = cfg.options["regularity.solution"]
    u, sigma = load_checkpoint(path)
    radii = cfg.options.get("regularity.radii")
    if radii is None:
        radii = tuple(u.R / 2.0 * 0.5**j for j in range(5))
        radii = tuple(r for r in radii if r >= 4.0 * u.h)
    if len(radii) < 4:
        raise ConfigurationError(
            ["regularity.radii needs at least 4 levels above the grid floor"]
        )
    probe = np.asarray(cfg.options.get("regularity.probe", np.zeros(u.n)),
                       dtype=float)
    table = oscillation_decay(u, probe, radii)
    _write_csv(
        f"{out}/decay.csv",
        ["r", "osc"],
        [[_fmt(r), _fmt(o)] for r, o in zip(table.radii, table.oscillations)],
    )
    summary = [["fitted_exponent", _fmt(table.fitted_exponent)],
               ["fit_residual", _fmt(table.fit_residual)],
               ["sigma", _fmt(sigma)], ["seed", cfg.seed]]
    thresholds = cfg.options.get("regularity.thresholds")
    if thresholds is not None:
        rep = point_estimate_check(u, cfg.params, thresholds)
        _write_csv(
            f"{out}/tails.csv",
            ["t", "measure"],
            [[_fmt(t), _fmt(m)] for t, m in zip(rep.thresholds, rep.measures)],
        )
        summary.append(["fitted_epsilon", _fmt(rep.fitted_epsilon)])
        summary.append(["normalization", _fmt(rep.normalization)])
    _write_csv(f"{out}/summary.csv", ["metric", "value"], summary)
    print(f"fitted exponent {table.fitted_exponent:.6g} "
          f"(residual {table.fit_residual:.3g})")
    return 0


_RUNNERS = {
    "eval": _run_eval,
    "barrier": _run_barrier,
    "solve": _run_solve,
    "abp": _run_abp,
    "regularity": _run_regularity,
}


def run_command(cfg, out_dir=None, seed=None):
    """Dispatch a parsed config; returns the process exit code."""
    if seed is not None:
        cfg = ExperimentConfig(cfg.command, cfg.params, cfg.dictionary,
                               cfg.grid, cfg.quadrature, cfg.out, seed,
                               cfg.options)
    out = out_dir if out_dir is not None else cfg.out
    try:
        return _RUNNERS[cfg.command](cfg, out)
    except ConfigurationError as e:
        for m in e.violations:
            print(f"config error: {m}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return 2
    except RejectedInstance as e:
        print(f"verification failed: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="nonlocal-elliptic",
        description="Batch experiments for nonlocal elliptic operators.",
    )
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", default=None)
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args(argv)

    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        print(f"cannot read config: {e}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text)
    except ConfigurationError as e:
        for m in e.violations:
            print(f"config error: {m}", file=sys.stderr)
        return 2
    if cfg.command is not None and cfg.command != args.command:
        print(
            f"config error: config file says command {cfg.command!r} but "
            f"{args.command!r} was requested",
            file=sys.stderr,
        )
        return 2
    if cfg.command is None:
        cfg = ExperimentConfig(args.command, cfg.params, cfg.dictionary,
                               cfg.grid, cfg.quadrature, cfg.out, cfg.seed,
                               cfg.options)
    return run_command(cfg, out_dir=args.out, seed=args.seed)


if __name__ == "__main__":
    sys.exit(main())
