"""Command line entry points.

Subcommands map one to one onto the library layers: certify and partition run
the algebraic certificates, simulate writes a single trajectory, ensemble,
couple, remote-start and mixing run the keyed experiments.  All outputs are
written atomically and are byte-identical across reruns and thread counts;
wall clock time lives only in the manifest.

Exit status: 0 on success, 1 when a certificate or experiment fails, 2 on a
configuration or validation error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._kernel import BACKEND
from .chain import GeneratorMatrix
from .certify import Certificate, ModelCoefficients, certify_finite, certify_partitioned
from .core import (DelayMeasure, StatePoint, ValidationError, constant_segment,
                   zero_segment)
from .lab import (EnsembleSpec, builtin_observables, coupling_tail_experiment,
                  invariance_check, mixing_experiment, moment_bound_experiment,
                  remote_start_measure)
from .rng import derive_key
from .sim import (AffineCoefficients, Model, OperatorFamily, SimulationDiverged,
                  SolverConfig, simulate_path, trajectory_segment_norms)

CONFIG_SCHEMA = "switchmix/1"
MANIFEST_SCHEMA = "switchmix-manifest/1"
TRAJECTORY_HEADER = "# switchmix trajectory v1"
SERIES_HEADER = "# switchmix series v1"


class ConfigError(Exception):
    '''Configuration problem; message starts with the offending field path.'''


def _fail(path: str, msg: str):
    raise ConfigError(f"{path}: {msg}")


def _section(cfg: dict, path: str, key: str, required: bool = True):
    if key not in cfg:
        if required:
            _fail(f"{path}.{key}" if path else key, "missing")
        return None
    val = cfg[key]
    if not isinstance(val, dict):
        _fail(f"{path}.{key}" if path else key, "must be an object")
    return val


def _num(d: dict, path: str, key: str, required: bool = True, default=None):
    if key not in d:
        if required:
            _fail(f"{path}.{key}", "missing")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(f"{path}.{key}", "must be a number")
    if not math.isfinite(v):
        _fail(f"{path}.{key}", "must be finite")
    return float(v)


def _int(d: dict, path: str, key: str, required: bool = True, default=None):
    if key not in d:
        if required:
            _fail(f"{path}.{key}", "missing")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(f"{path}.{key}", "must be an integer")
    return int(v)


def _arr(d: dict, path: str, key: str, required: bool = True):
    if key not in d:
        if required:
            _fail(f"{path}.{key}", "missing")
        return None
    try:
        a = np.array(d[key], dtype=np.float64)
    except (TypeError, ValueError):
        _fail(f"{path}.{key}", "must be a numeric array")
    if not np.isfinite(a).all():
        _fail(f"{path}.{key}", "must be finite")
    return a


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config: top level must be an object")
    if cfg.get("schema") != CONFIG_SCHEMA:
        _fail("schema", f"must be {CONFIG_SCHEMA!r}")
    return cfg


def build_generator(mc: dict) -> GeneratorMatrix:
    q = _arr(mc, "model", "q")
    bound = _num(mc, "model", "rate_bound", required=False)
    try:
        return GeneratorMatrix(q, rate_bound=bound)
    except ValidationError as exc:
        _fail("model.q", str(exc))


def build_delay(mc: dict) -> DelayMeasure:
    rho = _section(mc, "model", "rho")
    atoms = rho.get("atoms")
    if not isinstance(atoms, list) or not atoms:
        _fail("model.rho.atoms", "must be a non-empty list of [theta, weight]")
    try:
        return DelayMeasure(tuple((float(a[0]), float(a[1])) for a in atoms))
    except (TypeError, IndexError, ValidationError) as exc:
        _fail("model.rho.atoms", str(exc))


def build_model(cfg: dict):
    '''Returns (model or None, coefficients, generator, r).  A model is built
    only from the states route; the coefficients route certifies without one.'''
    mc = _section(cfg, "", "model")
    gen = build_generator(mc)
    rho = build_delay(mc)
    r = _num(mc, "model", "r")
    if r <= 0:
        _fail("model.r", "must be positive")
    has_states = "states" in mc
    has_coeffs = "coefficients" in mc
    if has_states == has_coeffs:
        _fail("model", "exactly one of states or coefficients is required")

    if has_coeffs:
        cc = _section(mc, "model", "coefficients")
        lam1 = _arr(cc, "model.coefficients", "lambda1")
        alpha = _arr(cc, "model.coefficients", "alpha")
        beta = _arr(cc, "model.coefficients", "beta")
        lip = _num(cc, "model.coefficients", "L")
        try:
            coeffs = ModelCoefficients(lam1, alpha, beta, lip, r, rho)
        except ValidationError as exc:
            _fail("model.coefficients", str(exc))
        if coeffs.n_states != gen.n_states:
            _fail("model.coefficients", "state count does not match q")
        return None, coeffs, gen, r

    ev = _arr(mc, "model", "eigenvalues")
    if ev.ndim != 2:
        _fail("model.eigenvalues", "must be a 2d array (states x modes)")
    states = mc["states"]
    if not isinstance(states, list) or len(states) != gen.n_states:
        _fail("model.states", f"must list {gen.n_states} state blocks")
    blocks = {"G": [], "D": [], "g": [], "S0": [], "S1": [], "S2": []}
    for k, st in enumerate(states):
        if not isinstance(st, dict):
            _fail(f"model.states[{k}]", "must be an object")
        for name in blocks:
            blocks[name].append(_arr(st, f"model.states[{k}]", name))
    try:
        ops = OperatorFamily(ev)
        aff = AffineCoefficients(np.array(blocks["G"]), np.array(blocks["D"]),
                                 np.array(blocks["g"]), np.array(blocks["S0"]),
                                 np.array(blocks["S1"]), np.array(blocks["S2"]))
        model = Model(ops, aff, rho, r, gen)
    except ValidationError as exc:
        _fail("model", str(exc))
    return model, model.coefficients(), gen, r


def build_solver(cfg: dict, seed_override: int | None) -> SolverConfig:
    sc = _section(cfg, "", "solver")
    dt = _num(sc, "solver", "dt")
    t_hist = _num(sc, "solver", "t_hist")
    sw = _int(sc, "solver", "seed_wiener")
    sp = _int(sc, "solver", "seed_poisson")
    if seed_override is not None:
        sw = derive_key(seed_override, 101)
        sp = derive_key(seed_override, 102)
    try:
        return SolverConfig(dt, t_hist, sw, sp)
    except ValidationError as exc:
        _fail("solver", str(exc))


def build_initial(cfg: dict, model: Model, solver: SolverConfig) -> StatePoint:
    ic = _section(cfg, "", "initial")
    kind = ic.get("kind")
    regime = _int(ic, "initial", "regime")
    if not (0 <= regime < model.n_states):
        _fail("initial.regime", f"outside 0..{model.n_states - 1}")
    if kind == "zero":
        seg = zero_segment(model.n_modes, model.r, solver.dt, solver.t_hist)
    elif kind == "constant":
        value = _arr(ic, "initial", "value")
        if value.shape != (model.n_modes,):
            _fail("initial.value", f"must have {model.n_modes} entries")
        seg = constant_segment(value, model.r, solver.dt, solver.t_hist)
    else:
        _fail("initial.kind", "must be 'constant' or 'zero'")
    return StatePoint(seg, regime)


def _require_model(model: Model | None) -> Model:
    if model is None:
        _fail("model.states", "this command needs the states route")
    return model


def _np_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def _write_atomic(path: Path, data: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_json(path: Path, obj) -> None:
    _write_atomic(path, json.dumps(obj, sort_keys=True, indent=2,
                                   default=_np_default) + "\n")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_series_csv(path: Path, columns: dict) -> None:
    '''Columns of equal length; floats serialized with full precision.'''
    names = list(columns)
    n = len(next(iter(columns.values())))
    lines = [SERIES_HEADER, ",".join(names)]
    for i in range(n):
        lines.append(",".join(_fmt(columns[k][i]) for k in names))
    _write_atomic(path, "\n".join(lines) + "\n")


def write_trajectory_csv(path: Path, traj, seg_norms) -> None:
    n_modes = traj.states.shape[1]
    cols = ["time", "regime"] + [f"x{i}" for i in range(n_modes)]
    cols += ["norm", "seg_norm"]
    lines = [TRAJECTORY_HEADER, ",".join(cols)]
    norms = traj.norms()
    for i in range(traj.times.size):
        row = [_fmt(traj.times[i]), str(int(traj.regimes[i]))]
        row += [_fmt(v) for v in traj.states[i]]
        row.append(_fmt(norms[i]))
        row.append(_fmt(seg_norms[i]) if seg_norms is not None else "nan")
        lines.append(",".join(row))
    _write_atomic(path, "\n".join(lines) + "\n")


class _Run:
    '''Collects outputs and writes the manifest last.'''

    def __init__(self, command: str, out_dir: str):
        self.command = command
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.t0 = time.monotonic()

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.dir / name

    def finish(self, status: int) -> int:
        manifest = {
            "schema": MANIFEST_SCHEMA,
            "command": self.command,
            "backend": BACKEND,
            "version": __version__,
            "outputs": sorted(self.outputs),
            "exit_status": status,
            "wall_clock_s": time.monotonic() - self.t0,
        }
        write_json(self.dir / "manifest.json", manifest)
        return status


def _print_certificate(cert: Certificate) -> None:
    print(f"certificate: {'PASS' if cert.passed else 'FAIL'} ({cert.reason})")
    if cert.weights is not None:
        print("weights:", " ".join(f"{w:.4f}" for w in cert.weights))
    if cert.delay_load is not None:
        print(f"delay load K={cert.delay_load!r}")
    if cert.rates is not None:
        print(f"moment rate {cert.rates.moment_rate!r} "
              f"contraction rate {cert.rates.contraction_rate!r}")
    if cert.mixing_rate is not None:
        print(f"mixing rate {cert.mixing_rate!r}")


def cmd_certify(args, cfg) -> int:
    _, coeffs, gen, _ = build_model(cfg)
    exp = _section(cfg, "", "experiment", required=False) or {}
    coupling = _num(exp, "experiment", "coupling_rate", required=False)
    cert = certify_finite(gen, coeffs, coupling_rate=coupling)
    run = _Run("certify", args.out)
    write_json(run.path("certificate.json"), cert.to_dict())
    _print_certificate(cert)
    return run.finish(0 if cert.passed else 1)


def cmd_partition(args, cfg) -> int:
    _, coeffs, gen, _ = build_model(cfg)
    exp = _section(cfg, "", "experiment")
    bounds = exp.get("boundaries")
    if not isinstance(bounds, list) or len(bounds) < 2:
        _fail("experiment.boundaries", "must list at least two boundaries")
    bounds = [-math.inf if isinstance(b, str) and b == "-inf" else b
              for b in bounds]
    try:
        bounds = [float(b) for b in bounds]
    except (TypeError, ValueError):
        _fail("experiment.boundaries", "entries must be numbers or '-inf'")
    coupling = _num(exp, "experiment", "coupling_rate", required=False)
    try:
        cert, part = certify_partitioned(gen, coeffs, bounds,
                                         coupling_rate=coupling)
    except ValidationError as exc:
        _fail("experiment.boundaries", str(exc))
    run = _Run("partition", args.out)
    write_json(run.path("certificate.json"), cert.to_dict())
    write_json(run.path("partition.json"), part.to_dict())
    _print_certificate(cert)
    print(f"bands: {len(part.blocks)}  comparison slack "
          f"{part.comparison_slack!r}")
    return run.finish(0 if cert.passed else 1)


def cmd_simulate(args, cfg) -> int:
    model, _, _, _ = build_model(cfg)
    model = _require_model(model)
    solver = build_solver(cfg, args.seed)
    init = build_initial(cfg, model, solver)
    exp = _section(cfg, "", "experiment")
    t0 = _num(exp, "experiment", "t0", required=False, default=0.0)
    t1 = _num(exp, "experiment", "t1")
    stride = _int(exp, "experiment", "record_stride", required=False, default=1)
    if stride < 1:
        _fail("experiment.record_stride", "must be >= 1")
    run = _Run("simulate", args.out)
    try:
        traj = simulate_path(model, solver, init, t0, t1, stride)
    except SimulationDiverged as exc:
        print(f"simulation diverged: {exc}", file=sys.stderr)
        return run.finish(1)
    seg_norms = (trajectory_segment_norms(traj, init.segment, model.r)
                 if stride == 1 else None)
    write_trajectory_csv(run.path("trajectory.csv"), traj, seg_norms)
    print(f"simulated {traj.times.size} records to t={float(traj.times[-1])!r}, "
          f"final regime {traj.final.regime}")
    return run.finish(0)


def cmd_ensemble(args, cfg) -> int:
    model, _, _, _ = build_model(cfg)
    model = _require_model(model)
    solver = build_solver(cfg, args.seed)
    init = build_initial(cfg, model, solver)
    exp = _section(cfg, "", "experiment")
    spec = _ensemble_spec(exp)
    report = moment_bound_experiment(model, solver, spec, init,
                                     threads=args.threads)
    run = _Run("ensemble", args.out)
    write_json(run.path("moment.json"), report.to_dict())
    write_series_csv(run.path("moment_series.csv"),
                     {"time": report.times,
                      "mean_norm_sq": report.mean_norm_sq})
    print(f"paths {report.n_paths} divergent {report.n_divergent} "
          f"tail mean {report.tail_mean!r} c1_hat {report.c1_hat!r}")
    return run.finish(1 if report.failed else 0)


def _ensemble_spec(exp: dict) -> EnsembleSpec:
    n = _int(exp, "experiment", "n_paths")
    horizon = _num(exp, "experiment", "horizon")
    record = _num(exp, "experiment", "record_dt")
    burn = _num(exp, "experiment", "burn_in", required=False, default=0.1)
    try:
        return EnsembleSpec(n, horizon, record, burn)
    except ValidationError as exc:
        _fail("experiment", str(exc))


def cmd_couple(args, cfg) -> int:
    mc = _section(cfg, "", "model")
    gen = build_generator(mc)
    solver = build_solver(cfg, args.seed)
    exp = _section(cfg, "", "experiment")
    i = _int(exp, "experiment", "i")
    j = _int(exp, "experiment", "j")
    n_pairs = _int(exp, "experiment", "n_pairs")
    t_max = _num(exp, "experiment", "t_max")
    grid_dt = _num(exp, "experiment", "grid_dt", required=False, default=0.25)
    scale = _num(exp, "experiment", "coupling_abs_scale", required=False)
    fn = (lambda d: scale * abs(d)) if scale is not None else None
    try:
        report = coupling_tail_experiment(gen, i, j, n_pairs, t_max,
                                          solver.seed_poisson, grid_dt, fn,
                                          threads=args.threads)
    except ValidationError as exc:
        _fail("experiment", str(exc))
    run = _Run("couple", args.out)
    write_json(run.path("coupling.json"), report.to_dict())
    write_series_csv(run.path("survival.csv"),
                     {"time": report.grid, "survival": report.survival})
    print(f"pairs {report.n_pairs} uncoupled {report.n_uncoupled} "
          f"theta_hat {report.theta_hat!r} exact {report.exact_fraction!r}")
    failed = report.n_uncoupled == report.n_pairs
    return run.finish(1 if failed else 0)


def _starts(exp: dict) -> list[float]:
    starts = exp.get("starts")
    if not isinstance(starts, list) or len(starts) < 2:
        _fail("experiment.starts", "must list at least two start times")
    try:
        return [float(s) for s in starts]
    except (TypeError, ValueError):
        _fail("experiment.starts", "entries must be numbers")


def cmd_remote_start(args, cfg) -> int:
    model, _, _, _ = build_model(cfg)
    model = _require_model(model)
    solver = build_solver(cfg, args.seed)
    init = build_initial(cfg, model, solver)
    exp = _section(cfg, "", "experiment")
    starts = _starts(exp)
    n_keys = _int(exp, "experiment", "n_keys")
    t_eval = _num(exp, "experiment", "t_eval", required=False, default=0.0)
    t_push = _num(exp, "experiment", "t_push", required=False)
    try:
        report = remote_start_measure(model, solver, init.segment, init.regime,
                                      starts, n_keys, t_eval,
                                      threads=args.threads)
    except ValidationError as exc:
        _fail("experiment.starts", str(exc))
    run = _Run("remote-start", args.out)
    doc = report.to_dict()
    status = 0 if report.monotone else 1
    if t_push is not None:
        inv = invariance_check(model, solver, report.measure, t_push,
                               builtin_observables(), threads=args.threads)
        doc["invariance"] = inv.to_dict()
        status = max(status, 0 if inv.passed else 1)
    write_json(run.path("remote_start.json"), doc)
    print("gap means:", " ".join(_fmt(g) for g in report.mean_gaps))
    print(f"monotone {report.monotone}")
    if t_push is not None:
        print(f"invariance {'PASS' if doc['invariance']['passed'] else 'FAIL'}")
    return run.finish(status)


def cmd_mixing(args, cfg) -> int:
    model, _, _, _ = build_model(cfg)
    model = _require_model(model)
    solver = build_solver(cfg, args.seed)
    init = build_initial(cfg, model, solver)
    exp = _section(cfg, "", "experiment")
    starts = _starts(exp)
    n_keys = _int(exp, "experiment", "n_keys")
    spec = _ensemble_spec(exp)
    obs = builtin_observables()
    remote = remote_start_measure(model, solver, init.segment, init.regime,
                                  starts, n_keys, threads=args.threads)
    report = mixing_experiment(model, solver, spec, init, obs, remote.measure,
                               threads=args.threads)
    run = _Run("mixing", args.out)
    doc = report.to_dict()
    doc["remote_start"] = remote.to_dict()
    write_json(run.path("mixing.json"), doc)
    cols = {"time": report.times}
    for name, series in report.curves.items():
        cols[name] = series
    write_series_csv(run.path("mixing_series.csv"), cols)
    for name, fit in report.fits.items():
        print(f"{name}: mu {report.mu[name]!r} rate "
              f"{fit.rate!r} r2 {fit.r_squared!r}"
              + (" (degenerate)" if fit.degenerate else ""))
    return run.finish(0)


_COMMANDS = {
    "certify": cmd_certify,
    "partition": cmd_partition,
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "couple": cmd_couple,
    "remote-start": cmd_remote_start,
    "mixing": cmd_mixing,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="switchmix",
        description="simulation and certification toolkit for switched "
                    "dissipative systems with delayed feedback")
    parser.add_argument("--version", action="version",
                        version=f"switchmix {__version__} ({BACKEND} kernel)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override solver seeds from one master seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (results do not depend on this)")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
