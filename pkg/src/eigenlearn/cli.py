"""Command-line interface: ``eigenlearn <subcommand> [flags]``.

Option precedence is built-in defaults, then ``--figure`` presets, then the
``--config`` file, then explicit flags.  Outputs go to ``--out`` (stdout by
default); a JSON run manifest is written last when ``--manifest`` is given or
an ``--out`` file is used.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, theory
from .dataio import empirical_pipeline, load_config, load_tabular, merge_config
from .kernel import KernelSpec, load_profile
from .montecarlo import (
    CSV_FIELDS,
    Experiment,
    ExperimentConfig,
    TargetSpec,
    predict_for_config,
    read_long_csv,
    run_experiment,
    write_long_csv,
)
from .regression import SingularSystemError, fit_coefficients
from .spectrum import read_spectrum_csv, write_spectrum_csv

WORKERS_ENV = "EIGENLEARN_WORKERS"

DEFAULTS = {
    "domain": "circle",
    "M": 256,
    "d": 8,
    "kmax": 70,
    "kernel": "relu-ntk",
    "depth": 4,
    "sigma_w": 1.4,
    "sigma_b": 0.1,
    "bandwidth": 1.0,
    "scale": 1.0,
    "profile": None,
    "jitter": 0.0,
    "ridge": 0.0,
    "seed": 0,
    "trials": 100,
    "n_grid": [0, 4, 8, 16, 32, 64, 128],
    "target": ["k=1"],
    "track": ["learnability", "mse"],
    "test_size": 2000,
    "msg_points": 200,
    "cov_modes": 0,
    "experiment": "experiment",
    "spectrum": None,
    "universal": False,
    "draws": 1,
    "eps": 0.01,
    "empirical": False,
    "data": None,
    "label_column": "last",
    "normalization": "unit-norm",
    "max_rows": 4000,
    "z": 3.0,
    "no_gate": False,
    "theory": None,
    "tail_as_ridge": True,
}

# Desk-scale flag bundles for the experiments behind each figure.
FIGURES = {
    "1a": {"domain": "circle", "M": 256, "target": ["k=0", "k=1", "k=2", "k=4"], "n_grid": [4, 8, 16, 32, 64, 96, 128, 192]},
    "1b": {"domain": "hypercube", "d": 8, "target": [f"k={k}" for k in range(5)], "n_grid": [4, 8, 16, 32, 64, 96, 128, 192]},
    "1c": {"domain": "sphere", "d": 7, "target": ["k=1", "k=2"], "n_grid": [4, 8, 16, 32, 64, 96, 128, 192]},
    "2": {"domain": "circle", "M": 10, "n_grid": [2, 4, 6, 8]},
    "3": {"domain": "circle", "M": 256, "target": ["k=1", "k=10", "k=40", "k=100"], "n_grid": list(range(9)), "track": ["mse"]},
    "a5": {"domain": "circle", "M": 256, "target": ["k=1", "k=2", "k=5"], "n_grid": [16, 64], "track": ["learnability", "msg"]},
    "4g": {"domain": "circle", "M": 256, "target": ["k=0", "k=1", "k=2", "k=4", "k=8"], "n_grid": [4, 8, 16, 32, 64, 128], "universal": True},
}


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    version: str = __version__
    outputs: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def write(self, path):
        # every listed output must exist before the manifest is written
        missing = [p for p in self.outputs if not os.path.exists(p)]
        if missing:
            raise RuntimeError(f"outputs missing at manifest time: {missing}")
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, default=_jsonable)
            fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    return str(obj)


# -- option handling -------------------------------------------------------


def _int_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def _add_common(p: argparse.ArgumentParser):
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="YAML experiment file; flags override it")
    p.add_argument("--figure", choices=sorted(FIGURES), default=S, help="preset flag bundle for a figure analogue")
    p.add_argument("--out", default=S, help="output CSV path (default stdout)")
    p.add_argument("--manifest", default=S, help="run manifest path (default <out>.manifest.json)")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--workers", type=int, default=S, help=f"worker threads (default ${WORKERS_ENV} or 1)")


def _add_domain(p):
    S = argparse.SUPPRESS
    p.add_argument("--domain", choices=["circle", "hypercube", "sphere"], default=S)
    p.add_argument("--M", type=int, default=S, help="circle point count")
    p.add_argument("--d", type=int, default=S, help="hypercube or sphere dimension")
    p.add_argument("--kmax", type=int, default=S, help="sphere level truncation")


def _add_kernel(p):
    S = argparse.SUPPRESS
    p.add_argument("--kernel", choices=["relu-ntk", "gaussian", "laplacian", "tabulated"], default=S)
    p.add_argument("--depth", type=int, default=S)
    p.add_argument("--sigma-w", dest="sigma_w", type=float, default=S)
    p.add_argument("--sigma-b", dest="sigma_b", type=float, default=S)
    p.add_argument("--bandwidth", type=float, default=S)
    p.add_argument("--scale", type=float, default=S)
    p.add_argument("--profile", default=S, help="two-column (t, kappa) file for the tabulated kernel")
    p.add_argument("--jitter", type=float, default=S)


def _add_experiment(p):
    S = argparse.SUPPRESS
    p.add_argument("--target", action="append", default=S, help="k=2, k=2:noise=0.5, i=17 or v=a,b,...; repeatable")
    p.add_argument("--n-grid", dest="n_grid", type=_int_list, default=S, help="e.g. 0,4,8 or 0..8")
    p.add_argument("--ridge", type=float, default=S)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eigenlearn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    p = sub.add_parser("spectrum", help="eigenvalues and multiplicities per level")
    _add_common(p), _add_domain(p), _add_kernel(p)

    p = sub.add_parser("predict", help="closed-form predictions over an n-grid")
    _add_common(p), _add_domain(p), _add_kernel(p), _add_experiment(p)
    p.add_argument("--spectrum", default=S, help="level CSV from the spectrum command instead of domain flags")
    p.add_argument("--universal", action="store_true", default=S, help="add the eigenvalue/C column")

    p = sub.add_parser("simulate", help="Monte Carlo kernel regression")
    _add_common(p), _add_domain(p), _add_kernel(p), _add_experiment(p)
    p.add_argument("--trials", type=int, default=S)
    p.add_argument("--track", action="append", default=S, help="quantity to record; repeatable")
    p.add_argument("--test-size", dest="test_size", type=int, default=S)
    p.add_argument("--msg-points", dest="msg_points", type=int, default=S)
    p.add_argument("--cov-modes", dest="cov_modes", type=int, default=S)
    p.add_argument("--experiment", default=S, help="experiment id written to every row")
    p.add_argument("--data", default=S, help="tabular file: run the empirical-spectrum pipeline instead")
    p.add_argument("--label-column", dest="label_column", default=S)
    p.add_argument("--normalization", choices=["none", "standardize", "unit-norm"], default=S)
    p.add_argument("--max-rows", dest="max_rows", type=int, default=S)

    p = sub.add_parser("compare", help="join theory and empirical CSVs and gate on z-scores")
    _add_common(p)
    p.add_argument("theory_csv")
    p.add_argument("empirical_csv")
    p.add_argument("--z", type=float, default=S)
    p.add_argument("--no-gate", dest="no_gate", action="store_true", default=S)

    p = sub.add_parser("parity", help="sample bound for learning full parity")
    _add_common(p), _add_kernel(p)
    p.add_argument("--d", type=int, default=S)
    p.add_argument("--eps", type=float, default=S)
    p.add_argument("--empirical", action="store_true", default=S, help="also check the bound by simulation")
    p.add_argument("--n-grid", dest="n_grid", type=_int_list, default=S)
    p.add_argument("--trials", type=int, default=S)

    p = sub.add_parser("conservation", help="per-mode learnabilities for single draws")
    _add_common(p), _add_domain(p), _add_kernel(p)
    p.add_argument("--n-grid", dest="n_grid", type=_int_list, default=S)
    p.add_argument("--ridge", type=float, default=S)
    p.add_argument("--draws", type=int, default=S)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    given = {k: v for k, v in vars(args).items() if k not in ("command", "config", "figure", "out", "manifest")}
    base = dict(DEFAULTS)
    base["workers"] = int(os.environ.get(WORKERS_ENV, "1"))
    if getattr(args, "figure", None):
        base.update(FIGURES[args.figure])
    file_values = load_config(args.config) if getattr(args, "config", None) else {}
    for key in ("target", "track"):
        if isinstance(file_values.get(key), str):
            file_values[key] = [file_values[key]]
    if isinstance(file_values.get("n_grid"), str):
        file_values["n_grid"] = _int_list(file_values["n_grid"])
    return merge_config(file_values, given, base)


def kernel_from(opts: dict) -> KernelSpec:
    common = {"jitter": opts["jitter"]}
    if opts["kernel"] == "tabulated":
        if not opts["profile"]:
            raise ValueError("the tabulated kernel needs --profile")
        return load_profile(opts["profile"], **common)
    return KernelSpec(
        opts["kernel"], depth=opts["depth"], sigma_w=opts["sigma_w"], sigma_b=opts["sigma_b"],
        bandwidth=opts["bandwidth"], scale=opts["scale"], **common,
    )


def domain_size(opts: dict) -> int:
    return opts["M"] if opts["domain"] == "circle" else opts["d"]


def experiment_config(opts: dict) -> ExperimentConfig:
    return ExperimentConfig(
        domain=opts["domain"],
        size=domain_size(opts),
        kernel=kernel_from(opts),
        targets=tuple(TargetSpec.parse(t) for t in opts["target"]),
        n_grid=tuple(opts["n_grid"]),
        ridge=opts["ridge"],
        trials=opts["trials"],
        seed=opts["seed"],
        track=tuple(opts["track"]),
        k_max=opts["kmax"],
        test_size=opts["test_size"],
        msg_points=opts["msg_points"],
        cov_modes=opts["cov_modes"],
        workers=opts["workers"],
        experiment=opts["experiment"],
        tail_as_ridge=opts["tail_as_ridge"],
    )


# -- subcommands ------------------------------------------------------------


def cmd_spectrum(opts, out):
    exp = Experiment(experiment_config({**opts, "target": [], "n_grid": []}))
    write_spectrum_csv(out, levels=exp.levels)
    return 0


def _spectrum_arrays(opts):
    """(eigenvalues, multiplicities, level labels, ridge shift) for predictions."""
    if opts["spectrum"]:
        lam, mult, _ = read_spectrum_csv(opts["spectrum"])
        return lam, mult, np.arange(len(lam)), 0.0
    exp = Experiment(experiment_config({**opts, "target": [], "n_grid": []}))
    levels = exp.levels
    extra = 0.0
    if opts["domain"] == "sphere" and opts["tail_as_ridge"]:
        from .montecarlo import sphere_tail_mass

        extra = sphere_tail_mass(exp.config.kernel, levels)
    return levels.eigenvalues, levels.multiplicities, levels.levels, extra


GLOBAL_TARGET = "all"


def _theory_row(experiment, target, n, quantity, value):
    return {"experiment": experiment, "target": target, "n": n, "quantity": quantity,
            "mean": "", "std": "", "stderr": "", "trials": "", "theory": value}


def predict_rows(opts) -> list[dict]:
    """Long-format theory rows: per-target quantities plus global ones under target ``all``."""
    lam, mult, levels, extra = _spectrum_arrays(opts)
    ridge = opts["ridge"] + extra
    exp_id = opts["experiment"]
    targets = [TargetSpec.parse(t) for t in opts["target"]]
    level_pos = {int(k): i for i, k in enumerate(levels)}
    for t in targets:
        if t.level is None or t.level not in level_pos:
            raise ValueError(f"predict needs level targets present in the spectrum, got {t.name!r}")
    threshold = theory.overfit_threshold(lam, ridge, mult)
    rows = []
    for n in opts["n_grid"]:
        cons = theory.solve_C(lam, n, ridge, mult)
        budget = float((cons.multiplicities * cons.L).sum())
        rates = theory.learnability_rate(cons) if 0 < cons.C < math.inf else None
        for q, value in (("C", cons.C), ("q", cons.q), ("threshold", threshold), ("budget", budget)):
            rows.append(_theory_row(exp_id, GLOBAL_TARGET, n, q, float(value)))
        for t in targets:
            i = level_pos[t.level]
            L_i = float(cons.L[i])
            values = {
                "learnability": L_i / (1.0 + t.noise),
                "mse": theory.predict_mse([1.0], [L_i], n, cons.sum_L2, t.noise),
                "mse_bound": theory.mse_lower_bound(L_i),
                "mse_slope_n0": float(theory.mse_slope_at_zero(lam, ridge, lam[i], mult)),
            }
            if rates is not None:
                values["rate"] = float(rates[i])
            if opts["universal"]:
                values["eigenvalue_over_C"] = float(lam[i] / cons.C) if cons.C > 0 else math.inf
            rows.extend(_theory_row(exp_id, t.name, n, q, float(v)) for q, v in values.items())
    return rows


def cmd_predict(opts, out):
    w = csv.DictWriter(out, fieldnames=CSV_FIELDS)
    w.writeheader()
    for row in predict_rows(opts):
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return 0


def cmd_simulate(opts, out):
    if opts["data"]:
        data = load_tabular(opts["data"], opts["label_column"], opts["normalization"])
        res = empirical_pipeline(
            data, kernel_from(opts), opts["n_grid"], opts["ridge"], opts["trials"], opts["seed"], opts["max_rows"]
        )
        res.write_csv(out, opts["experiment"])
        return 0
    config = experiment_config(opts)
    stats = run_experiment(config)
    theory_values = predict_for_config(config)
    write_long_csv(out, stats.rows, theory_values)
    return 0


def _read_theory(path) -> dict:
    """Theory values keyed by (target, n, quantity) from a long-format CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and "quantity" not in rows[0]:
        raise ValueError(f"{path}: not a long-format CSV (no quantity column)")
    return {
        (r["target"], int(r["n"]), r["quantity"]): float(r["theory"])
        for r in rows if r.get("theory") not in (None, "")
    }


def cmd_compare(opts, out):
    th = _read_theory(opts["theory_csv"])
    emp = read_long_csv(opts["empirical_csv"])
    emp = [r for r in emp if r["mean"] is not None and r["quantity"] in {k[2] for k in th}]
    missing = sorted({(r["target"], r["n"], r["quantity"]) for r in emp} - set(th))
    if missing or not emp:
        listing = ", ".join(f"({t}, n={n}, {q})" for t, n, q in missing) or "no shared quantities"
        raise KeyError(f"theory has no value for: {listing}")
    w = csv.writer(out)
    w.writerow(["target", "n", "quantity", "empirical", "stderr", "theory", "bound", "z", "pass"])
    all_pass = True
    for r in emp:
        tv = th[(r["target"], r["n"], r["quantity"])]
        diff = abs(r["mean"] - tv)
        z = 0.0 if diff == 0 else (diff / r["stderr"] if r["stderr"] else math.inf)
        ok = z < opts["z"]
        all_pass &= ok
        bound = th.get((r["target"], r["n"], "mse_bound"), "") if r["quantity"] == "mse" else ""
        row = [r["target"], r["n"], r["quantity"], r["mean"], r["stderr"], tv, bound, z, int(ok)]
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return 0 if (all_pass or opts["no_gate"]) else 1


def cmd_parity(opts, out):
    d, eps = opts["d"], opts["eps"]
    out.write(f"d,{d}\neps,{eps}\nn_min,{theory.parity_bound(d, eps)}\n")
    if not opts["empirical"]:
        return 0
    config = ExperimentConfig(
        "hypercube", d, kernel_from(opts), (TargetSpec(name="parity", level=d),), tuple(opts["n_grid"]),
        trials=opts["trials"], seed=opts["seed"], track=("mse",), workers=opts["workers"], experiment="parity",
    )
    stats = run_experiment(config)
    ok = True
    out.write("n,mse_mean,mse_stderr,bound,holds\n")
    for r in stats.rows:
        bound = theory.parity_mse_bound(d, r["n"])
        holds = r["mean"] >= bound - 2.0 * r["stderr"]
        ok &= holds
        out.write(f"{r['n']},{r['mean']!r},{r['stderr']!r},{bound!r},{int(holds)}\n")
    return 0 if ok else 1


def cmd_conservation(opts, out):
    if opts["domain"] == "sphere":
        raise ValueError("conservation needs a discrete domain")
    exp = Experiment(experiment_config({**opts, "target": [], "n_grid": []}))
    dom, lam = exp.domain, exp.mode_eigenvalues
    w = csv.writer(out)
    w.writerow(["n", "draw", "mode", "label", "eigenvalue", "learnability"])
    from .montecarlo import sample_dataset, trial_rng

    for n in opts["n_grid"]:
        for draw in range(opts["draws"]):
            idx = sample_dataset(dom.M, n, trial_rng(opts["seed"], n, draw)).indices
            _, diag = fit_coefficients(dom.eigentable, lam, idx, np.zeros((dom.M, 1)), opts["ridge"], diagonal=True)
            for i, m in enumerate(dom.modes):
                w.writerow([n, draw, i, str(m), repr(float(lam[i])), repr(float(diag[i]))])
    return 0


COMMANDS = {
    "spectrum": cmd_spectrum,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "parity": cmd_parity,
    "conservation": cmd_conservation,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve(args)
    except (ValueError, OSError) as exc:
        print(f"eigenlearn: {exc}", file=sys.stderr)
        return 2
    if args.command == "compare":
        opts["theory_csv"], opts["empirical_csv"] = args.theory_csv, args.empirical_csv
    out_path = getattr(args, "out", None)
    manifest_path = getattr(args, "manifest", None) or (out_path + ".manifest.json" if out_path else None)
    start = time.perf_counter()
    try:
        if out_path:
            with open(out_path, "w", newline="") as fh:
                code = COMMANDS[args.command](opts, fh)
        else:
            code = COMMANDS[args.command](opts, sys.stdout)
    except (ValueError, KeyError, OSError, SingularSystemError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"eigenlearn {args.command}: {msg}", file=sys.stderr)
        return 2
    if manifest_path:
        manifest = RunManifest(args.command, opts, opts.get("seed", 0))
        if out_path:
            manifest.outputs.append(out_path)
        manifest.timings[args.command] = time.perf_counter() - start
        manifest.write(manifest_path)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
