"""Command-line entry point: ``soncoord <group> <action> [options]``.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
Every CSV output starts with ``#`` lines echoing the command and the full
effective configuration, so ``--config out.csv`` reruns it bit-identically.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import admission, interference
from ._validation import NumericalError
from .coordination import coordinated_field, synthesize_gradient_coordinator, verify_coordinated
from .dynamics import SASchedule, SCHEDULES, integrate_ode, simulate_sa
from .estimation import AffineFieldRegressor, ConditionDB, SampleSet
from .io import read_csv_metadata, read_matrix_csv, read_vector_csv, write_csv, write_matrix_csv
from .model import LinearSystem, make_linear_field
from .stability import VERDICT_COLUMNS, eigen_stability, lyapunov_solve, standalone_check


class UsageError(Exception):
    pass


def parse_bool(text):
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("true", "1", "yes"):
        return True
    if value in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def parse_grid(text):
    """``start:stop:step`` with both ends included."""
    try:
        start, stop, step = (float(v) for v in str(text).split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError(f"invalid grid {text!r}")
    n = int(round((stop - start) / step)) + 1
    return np.round(start + step * np.arange(n), 12)


def parse_floats(text):
    try:
        return [float(v) for v in str(text).split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# option name -> (type, default, help); None default means required
COMMANDS = {
    ("stability", "check"): {
        "matrix": (str, None, "CSV file with the square matrix A"),
        "lyapunov": (parse_bool, False, "also solve A^T X + X A = -I"),
        "out": (str, "", "optional CSV of eigenvalues"),
    },
    ("coordinate", "synth"): {
        "matrix": (str, None, "CSV file with A"),
        "weights": (parse_floats, [], "comma-separated positive weights (default all ones)"),
        "verify": (parse_bool, False, "check the spectrum of C A"),
        "out": (str, "C.csv", "output CSV for C"),
    },
    ("simulate", "sa"): {
        "field": (str, "linear", "field type (linear)"),
        "matrix": (str, None, "CSV file with A"),
        "offset": (str, None, "CSV file with b"),
        "coordinate": (parse_bool, False, "apply C = -A^T before simulating"),
        "theta0": (parse_floats, [], "initial state (default zeros)"),
        "epsilon": (float, 0.01, "step size"),
        "noise": (float, 0.0, "Gaussian noise standard deviation"),
        "steps": (int, 10000, "number of updates"),
        "schedule": (str, "synchronous", "synchronous, round_robin or random_coordinate"),
        "seed": (int, 0, "random seed"),
        "out": (str, "traj.csv", "output trajectory CSV"),
    },
    ("simulate", "ode"): {
        "matrix": (str, None, "CSV file with A"),
        "offset": (str, None, "CSV file with b"),
        "coordinate": (parse_bool, False, "apply C = -A^T"),
        "theta0": (parse_floats, [], "initial state (default zeros)"),
        "step": (float, 1e-3, "RK4 step"),
        "t_end": (float, 10.0, "horizon"),
        "out": (str, "traj.csv", "output trajectory CSV"),
    },
    ("estimate", "fit"): {
        "samples": (str, None, "CSV with columns theta_1..theta_I, y_1..y_I"),
        "label": (str, "default", "operating-condition label"),
        "out": (str, "model.json", "condition database JSON (entry is added or replaced)"),
    },
    ("admission", "region"): {
        "lambda": (float, 0.5, "arrival rate (users/s)"),
        "mean_size": (float, 10.0, "mean file size (Mbit)"),
        "rate": (float, 15.0, "peak rate R (Mbit/s)"),
        "rate_min": (float, 2.0, "minimum rate (Mbit/s)"),
        "xmax": (float, 1.0, "available resources"),
        "x_grid": (str, "0.3:1:0.01", "start:stop:step for x"),
        "b_grid": (str, "0:10:0.1", "start:stop:step for b"),
        "sharpness": (float, 1.0, "smoothed-outage sharpness s"),
        "out": (str, "region.csv", "output CSV"),
    },
    ("interference", "hexa"): {
        "coordinated": (parse_bool, False, "apply C = -J^T"),
        "seed": (int, 0, "random seed"),
        "t_end": (float, 100.0, "horizon"),
        "step": (float, 0.01, "RK4 step"),
        "n_samples": (int, 2000, "sample points per cell"),
        "perturbation": (float, 1.0, "initial offset amplitude (dB)"),
        "record_every": (int, 10, "store every k-th step"),
        "out": (str, "hexa", "output prefix"),
    },
    ("interference", "poisson"): {
        "density": (float, 3.0, "sites per km^2"),
        "snapshots": (int, 100, "number of snapshots"),
        "seed": (int, 0, "random seed"),
        "n_samples": (int, 2000, "sample points per cell"),
        "out": (str, "snapshots.csv", "output CSV"),
    },
}

# options that do not change results and are left out of the echoed config
NOT_ECHOED = {"out", "jobs", "config"}


def build_parser():
    parser = argparse.ArgumentParser(prog="soncoord", description=__doc__.splitlines()[0])
    groups = parser.add_subparsers(dest="group", metavar="group")
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON config (or a CSV written by this tool)")
    common.add_argument("--jobs", type=int, help="parallel workers for scans and snapshots")
    sub = {}
    for group, action in COMMANDS:
        if group not in sub:
            gp = groups.add_parser(group)
            sub[group] = gp.add_subparsers(dest="action", metavar="action")
        p = sub[group].add_parser(action, parents=[common], argument_default=argparse.SUPPRESS)
        for name, (typ, default, helptext) in COMMANDS[(group, action)].items():
            flag = "--" + name.replace("_", "-")
            extra = {"nargs": "?", "const": True} if typ is parse_bool else {}
            p.add_argument(flag, dest=name, type=typ, help=f"{helptext} (default: {default})"
                           if default is not None else f"{helptext} (required)", **extra)
    return parser


def config_load(path):
    """Config mapping from a JSON file or from the ``# config=`` line of a CSV."""
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    with open(path) as fh:
        head = fh.read(1)
    if head == "#":
        meta = read_csv_metadata(path)
        if "config" not in meta:
            raise UsageError(f"{path}: no '# config=' header line")
        text, where = meta["config"], f"{path} (config header)"
    else:
        with open(path) as fh:
            text, where = fh.read(), path
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise UsageError(f"{where}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")
    if not isinstance(data, dict):
        raise UsageError(f"{where}: config must be a JSON object")
    return data


def _convert(name, typ, value):
    if typ is parse_floats and isinstance(value, list):
        return [float(v) for v in value]
    try:
        return typ(value)
    except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"config key {name!r}: {exc}") from None


def effective_config(key, flags, config):
    """Defaults, overridden by the config file, overridden by explicit flags."""
    spec = COMMANDS[key]
    unknown = set(config) - set(spec)
    if unknown:
        raise UsageError(f"unknown config key(s) for {' '.join(key)}: {', '.join(sorted(unknown))}")
    cfg = {name: default for name, (_, default, _) in spec.items()}
    for name, value in config.items():
        cfg[name] = _convert(name, spec[name][0], value)
    cfg.update({k: v for k, v in flags.items() if k in spec})
    missing = [name for name, value in cfg.items() if value is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return cfg


def _echo(key, cfg):
    shown = {k: v for k, v in cfg.items() if k not in NOT_ECHOED}
    return {"command": " ".join(key), "config": json.dumps(shown, sort_keys=True)}


def _check_writable(path):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    if not os.path.isdir(directory) or not os.access(directory, os.W_OK):
        raise UsageError(f"output location not writable: {path}")


def _read_matrix(path):
    if not os.path.exists(path):
        raise UsageError(f"input file not found: {path}")
    return read_matrix_csv(path)


def _linear_system(cfg):
    A = _read_matrix(cfg["matrix"])
    b = read_vector_csv(cfg["offset"]) if os.path.exists(cfg["offset"]) else None
    if b is None:
        raise UsageError(f"input file not found: {cfg['offset']}")
    return LinearSystem.from_matrices(A, b)


def _theta0(cfg, dim):
    theta0 = np.zeros(dim) if not cfg["theta0"] else np.asarray(cfg["theta0"], dtype=float)
    if theta0.shape != (dim,):
        raise UsageError(f"--theta0 needs {dim} values")
    return theta0


# --------------------------------------------------------------------------- handlers


def cmd_stability_check(cfg, jobs, out):
    A = _read_matrix(cfg["matrix"])
    verdict = eigen_stability(A)
    standalone = standalone_check(A)
    out.write("eigenvalues:\n")
    for lam in verdict.eigenvalues:
        out.write(f"  {lam.real:.12g}{lam.imag:+.12g}j\n")
    out.write(f"standalone stable: {' '.join(str(bool(s)).lower() for s in standalone)}\n")
    out.write(f"margin: {verdict.margin:.12g}\n")
    out.write(f"verdict: {verdict.status.upper()}\n")
    if cfg["lyapunov"]:
        cert = lyapunov_solve(A)
        out.write(f"lyapunov: {'valid' if cert.valid else 'failed (' + cert.reason + ')'}\n")
    if cfg["out"]:
        write_csv(cfg["out"], VERDICT_COLUMNS, verdict.rows(), _echo(("stability", "check"), cfg))


def cmd_coordinate_synth(cfg, jobs, out):
    A = _read_matrix(cfg["matrix"])
    w = cfg["weights"] or None
    try:
        coord = synthesize_gradient_coordinator(A, w)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    meta = {"provenance": coord.provenance, **_echo(("coordinate", "synth"), cfg)}
    write_matrix_csv(cfg["out"], coord.C, meta)
    out.write(f"wrote {cfg['out']}\n")
    if cfg["verify"]:
        verdict = verify_coordinated(coord, A)
        out.write(f"coordinated margin: {verdict.margin:.12g}\n")
        out.write(f"verdict: {verdict.status.upper()}\n")


def _trajectory_meta(key, cfg, traj):
    return {**_echo(key, cfg), "scheme": traj.meta["scheme"], "step": repr(traj.meta["step"]),
            "seed": str(traj.meta["seed"]), "escaped": str(traj.escaped).lower()}


def _maybe_coordinated(sys, cfg):
    if cfg["coordinate"]:
        return coordinated_field(synthesize_gradient_coordinator(sys.A), sys)
    return make_linear_field(sys.A, sys.b)


def cmd_simulate_sa(cfg, jobs, out):
    if cfg["field"] != "linear":
        raise UsageError(f"unsupported field {cfg['field']!r}; only 'linear' is available")
    if cfg["schedule"] not in SCHEDULES:
        raise UsageError(f"unknown schedule {cfg['schedule']!r}")
    sys_ = _linear_system(cfg)
    field = _maybe_coordinated(sys_, cfg)
    sched = SASchedule(cfg["schedule"], cfg["epsilon"], cfg["noise"], cfg["steps"], cfg["seed"])
    traj = simulate_sa(field, _theta0(cfg, sys_.dim), sched)
    write_csv(cfg["out"], traj.columns(), traj.rows(), _trajectory_meta(("simulate", "sa"), cfg, traj))
    dist = np.linalg.norm(traj.final - sys_.theta_star)
    out.write(f"final distance to equilibrium: {dist:.6g}{' (escaped)' if traj.escaped else ''}\n")


def cmd_simulate_ode(cfg, jobs, out):
    sys_ = _linear_system(cfg)
    field = _maybe_coordinated(sys_, cfg)
    traj = integrate_ode(field, _theta0(cfg, sys_.dim), cfg["step"], cfg["t_end"])
    write_csv(cfg["out"], traj.columns(), traj.rows(), _trajectory_meta(("simulate", "ode"), cfg, traj))
    dist = np.linalg.norm(traj.final - sys_.theta_star)
    out.write(f"final distance to equilibrium: {dist:.6g}{' (escaped)' if traj.escaped else ''}\n")


def cmd_estimate_fit(cfg, jobs, out):
    data = _read_matrix(cfg["samples"])
    try:
        samples = SampleSet.from_array(data)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    reg = AffineFieldRegressor().fit(samples.theta, samples.y)
    db = ConditionDB.load(cfg["out"]) if os.path.exists(cfg["out"]) else ConditionDB()
    db.put(cfg["label"], reg.coef_, reg.intercept_, samples.theta.shape[0])
    db.save(cfg["out"])
    out.write(f"label {cfg['label']}: rms residual {reg.residual_:.6g}, wrote {cfg['out']}\n")


def cmd_admission_region(cfg, jobs, out):
    try:
        params = admission.QueueParams(cfg["lambda"], cfg["mean_size"], cfg["rate"],
                                       cfg["rate_min"], cfg["xmax"])
        xs, bs = parse_grid(cfg["x_grid"]), parse_grid(cfg["b_grid"])
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(str(exc)) from None
    rows = admission.stability_region_scan(params, xs, bs, cfg["sharpness"], jobs=jobs)
    write_csv(cfg["out"], admission.SCAN_COLUMNS, rows, _echo(("admission", "region"), cfg))
    n_stable = sum(r[-1] for r in rows)
    out.write(f"{len(rows)} points: {n_stable} stable, {len(rows) - n_stable} unstable\n")


def cmd_interference_hexa(cfg, jobs, out):
    run = interference.hexagonal_experiment(
        cfg["coordinated"], t_end=cfg["t_end"], h=cfg["step"], seed=cfg["seed"],
        n_samples=cfg["n_samples"], perturbation=cfg["perturbation"],
        record_every=cfg["record_every"])
    meta = _echo(("interference", "hexa"), cfg)
    meta.update({"seed": str(cfg["seed"]), "max_deviation_db": repr(run.max_deviation),
                 "left_3db_ball": str(run.left_ball).lower()})
    n = run.P_star.shape[0]
    write_csv(cfg["out"] + "_powers.csv", ["t"] + [f"P_{k + 1}" for k in range(n)],
              ([float(t), *map(float, p)] for t, p in zip(run.times, run.powers)), meta)
    write_csv(cfg["out"] + "_coverage.csv", ["t"] + [f"G_{k + 1}" for k in range(n)],
              ([float(t), *map(float, g)] for t, g in zip(run.times, run.coverage)), meta)
    out.write(f"max deviation {run.max_deviation:.3f} dB; left 3 dB ball: {run.left_ball}\n")


def cmd_interference_poisson(cfg, jobs, out):
    res = interference.snapshot_instability(cfg["density"], cfg["snapshots"], seed=cfg["seed"],
                                            jobs=jobs, n_samples=cfg["n_samples"])
    rows = [(r["snapshot_id"], r["N_bs"], int(r["converged"]), r["max_Re_eig"],
             "" if r["unstable"] is None else int(r["unstable"])) for r in res["rows"]]
    meta = {**_echo(("interference", "poisson"), cfg), "seed": str(cfg["seed"]),
            "p_unstable": repr(res["p_unstable"]), "n_converged": str(res["n_converged"])}
    write_csv(cfg["out"], interference.SNAPSHOT_COLUMNS, rows, meta)
    out.write(f"p_unstable {res['p_unstable']:.3f} over {res['n_converged']} converged snapshots\n")


HANDLERS = {
    ("stability", "check"): cmd_stability_check,
    ("coordinate", "synth"): cmd_coordinate_synth,
    ("simulate", "sa"): cmd_simulate_sa,
    ("simulate", "ode"): cmd_simulate_ode,
    ("estimate", "fit"): cmd_estimate_fit,
    ("admission", "region"): cmd_admission_region,
    ("interference", "hexa"): cmd_interference_hexa,
    ("interference", "poisson"): cmd_interference_poisson,
}


def dispatch(argv=None, out=None, err=None):
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(ns, "group", None) or not getattr(ns, "action", None):
        parser.print_usage(err)
        return 2
    key = (ns.group, ns.action)
    flags = vars(ns)
    try:
        config = config_load(flags["config"]) if "config" in flags else {}
        cfg = effective_config(key, flags, config)
        for name in ("out",):
            if cfg.get(name):
                target = cfg[name] + "_powers.csv" if key == ("interference", "hexa") else cfg[name]
                _check_writable(target)
        HANDLERS[key](cfg, flags.get("jobs", 1), out)
    except UsageError as exc:
        err.write(f"soncoord: error: {exc}\n")
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        err.write(f"soncoord: numerical failure: {exc}\n")
        return 3
    except ValueError as exc:
        err.write(f"soncoord: error: {exc}\n")
        return 2
    return 0


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
