"""Command-line front end: fit, simulate, evaluate and sweep.

Exit codes: 0 success, 1 I/O error, 2 invalid input or configuration,
3 numerical failure.
"""

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import diagnostics, metrics
from .estimator import fit
from .gaussian import FactorizationError
from .model import (
    CellMask,
    EstimatorConfig,
    GroupedData,
    MixtureParams,
    RegularizationSpec,
    Standardization,
    ValidationError,
)
from .simulation import SimulationConfig, simulate

FIT_KEYS = {"alpha", "h_fraction", "eps_conv", "max_iter", "seed", "condition_bound"}
SIM_KEYS = {f.name for f in fields(SimulationConfig)}


class InputError(Exception):
    """Unreadable or missing file (exit code 1)."""


# ---------------------------------------------------------------- file I/O

def _read_text(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise InputError(f"cannot read {path}: {err.strerror or err}")


def _write_text(path, text):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as err:
        raise InputError(f"cannot write {path}: {err.strerror or err}")


def _dump_json(obj):
    # float repr is the shortest string that reads back to the same double
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _read_json(path):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as err:
        raise ValidationError([f"{path}: invalid JSON ({err})"])


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _read_csv(path):
    rows = list(csv.reader(io.StringIO(_read_text(path))))
    rows = [r for r in rows if r]
    if not rows:
        raise ValidationError([f"{path}: empty file, header row required"])
    return rows[0], rows[1:]


def _parse_grouped(path, value_name="value"):
    """Rows of a CSV with a 1-based ``group`` column.

    Returns ``(header, group_index, values)`` with 0-based group indices,
    the remaining column names and the numeric matrix in file order.
    """
    header, body = _read_csv(path)
    header = [h.strip() for h in header]
    if "group" not in header:
        raise ValidationError([f"{path}: missing required column 'group'"])
    gcol = header.index("group")
    names = [h for c, h in enumerate(header) if c != gcol]
    errors, gid, values = [], [], []
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            errors.append(f"{path}: line {r} has {len(row)} fields, expected {len(header)}")
            continue
        try:
            g = int(row[gcol])
        except ValueError:
            errors.append(f"{path}: line {r}, column 'group': not an integer ({row[gcol]!r})")
            g = 1
        if g < 1:
            errors.append(f"{path}: line {r}, column 'group': groups are numbered from 1 (got {g})")
        vals = []
        for c, cell in enumerate(row):
            if c == gcol:
                continue
            try:
                v = float(cell)
            except ValueError:
                errors.append(f"{path}: line {r}, column {header[c]!r}: non-numeric {value_name} {cell!r}")
                v = 0.0
            if not math.isfinite(v):
                errors.append(f"{path}: line {r}, column {header[c]!r}: non-finite {value_name} {cell!r}")
            vals.append(v)
        gid.append(g - 1)
        values.append(vals)
    if not body:
        errors.append(f"{path}: no data rows")
    if errors:
        raise ValidationError(errors)
    gid = np.array(gid)
    missing = sorted(set(range(gid.max() + 1)) - set(gid.tolist()))
    if missing:
        raise ValidationError([f"{path}: group {m + 1} has no rows" for m in missing])
    return names, gid, np.array(values, dtype=float).reshape(len(body), len(names))


def _split(gid, values):
    return tuple(values[gid == g] for g in range(gid.max() + 1))


def _positions(gid):
    """Within-group row index (0-based) of each row, in file order."""
    pos = np.empty(gid.size, dtype=int)
    counts = {}
    for r, g in enumerate(gid.tolist()):
        pos[r] = counts.get(g, 0)
        counts[g] = pos[r] + 1
    return pos


def read_data(path):
    names, gid, values = _parse_grouped(path)
    return GroupedData(_split(gid, values), variable_names=names), gid


def read_mask(path):
    names, gid, values = _parse_grouped(path, "mask entry")
    if "i" in names:
        values = np.delete(values, names.index("i"), axis=1)
    if not np.all((values == 0) | (values == 1)):
        raise ValidationError([f"{path}: mask entries must be 0 or 1"])
    return CellMask(_split(gid, values.astype(bool)))


def _write_grouped_csv(path, header, gid, per_group, fmt=float, index=False):
    """One line per input row, in file order, led by the 1-based group (and row index)."""
    rows = []
    for g, i in zip(gid.tolist(), _positions(gid).tolist()):
        lead = [g + 1, i + 1] if index else [g + 1]
        rows.append(lead + [fmt(v) for v in per_group[g][i].tolist()])
    cols = ["group", "i", *header] if index else ["group", *header]
    _write_text(path, _csv_text(cols, rows))


def model_to_dict(params, standardization=None, names=None):
    out = {
        "pi": params.pi.tolist(),
        "mu": params.mu.tolist(),
        "sigma": params.sigma.tolist(),
        "sigma_reg": params.sigma_reg.tolist(),
        "rho": params.reg.rho.tolist(),
        "T": params.reg.target.tolist(),
        "kappa": params.reg.kappa.tolist(),
    }
    if standardization is not None:
        out["standardization"] = {
            "center": standardization.center.tolist(),
            "scale": standardization.scale.tolist(),
        }
    if names is not None:
        out["variable_names"] = list(names)
    return out


def load_model(path):
    """Read a model JSON back into ``(MixtureParams, Standardization or None)``."""
    d = _read_json(path)
    try:
        reg = RegularizationSpec(np.array(d["T"]), np.array(d["rho"]), np.array(d["kappa"]))
        params = MixtureParams(
            pi=np.array(d["pi"]), mu=np.array(d["mu"]), sigma=np.array(d["sigma"]),
            sigma_reg=np.array(d["sigma_reg"]), reg=reg,
        )
    except (KeyError, TypeError, ValueError) as err:
        raise ValidationError([f"{path}: malformed model ({err})"])
    std = d.get("standardization")
    if std is not None:
        std = Standardization(np.array(std["center"]), np.array(std["scale"]))
    return params, std


# ---------------------------------------------------------------- configs

def _load_config(path, allowed):
    if path is None:
        return {}
    cfg = _read_json(path)
    if not isinstance(cfg, dict):
        raise ValidationError([f"{path}: config must be a JSON object"])
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ValidationError([f"{path}: unknown config keys {unknown}"])
    return cfg


def estimator_config(path, seed=None):
    cfg = _load_config(path, FIT_KEYS)
    if seed is not None:
        cfg["seed"] = seed
    try:
        return EstimatorConfig(**cfg)
    except TypeError as err:
        raise ValidationError([str(err)])


def simulation_config(path, seed=None):
    cfg = _load_config(path, SIM_KEYS)
    if seed is not None:
        cfg["seed"] = seed
    if isinstance(cfg.get("n_g"), list):
        cfg["n_g"] = tuple(cfg["n_g"])
    sim = SimulationConfig(**cfg)
    errors = []
    if sim.N < 1 or sim.p < 1:
        errors.append("N and p must be positive")
    elif len(sim.sizes()) != sim.N:
        errors.append(f"n_g has {len(sim.sizes())} entries for N={sim.N}")
    elif min(sim.sizes()) < 2:
        errors.append("every n_g must be at least 2")
    if not 0.0 <= sim.pi_diag <= 1.0:
        errors.append(f"pi_diag must lie in [0, 1] (got {sim.pi_diag})")
    if not 0.0 <= sim.eps_cell < 1.0:
        errors.append(f"eps_cell must lie in [0, 1) (got {sim.eps_cell})")
    if sim.mean_mode not in ("zero", "c-separated"):
        errors.append(f"mean_mode must be 'zero' or 'c-separated' (got {sim.mean_mode!r})")
    if errors:
        raise ValidationError(errors)
    return sim


# ---------------------------------------------------------------- commands

def _write_fit(out, data, gid, result):
    names = data.variable_names
    _write_text(out / "model.json", _dump_json(model_to_dict(result.params, result.standardization, names)))
    _write_grouped_csv(out / "mask.csv", names, gid, result.mask.masks, int, index=True)
    N = result.params.N
    _write_grouped_csv(out / "responsibilities.csv", [f"t{k + 1}" for k in range(N)], gid, result.resp.t, index=True)
    res = diagnostics.residuals(data, result)
    _write_grouped_csv(out / "residuals.csv", names, gid, res.residuals, index=True)
    summary = {
        "alpha": result.alpha,
        "h": list(result.h),
        "iterations": result.iterations,
        "converged": result.converged,
        "n_flagged": result.mask.n_flagged(),
        "objective_trace": list(result.objective_trace),
    }
    _write_text(out / "summary.json", _dump_json(summary))
    return res


def cmd_fit(args):
    data, gid = read_data(args.data)
    cfg = estimator_config(args.config, args.seed)
    result = fit(data, cfg)
    _write_fit(Path(args.out_dir), data, gid, result)
    if not result.converged:
        print(f"warning: no convergence after {result.iterations} iterations", file=sys.stderr)
    return 0


def cmd_simulate(args):
    sim = simulation_config(args.config, args.seed)
    data, truth, _ = simulate(sim)
    out = Path(args.out_dir)
    gid = np.repeat(np.arange(data.N), data.sizes)
    names = data.variable_names
    _write_grouped_csv(out / "data.csv", names, gid, data.groups)
    _write_grouped_csv(out / "contamination_mask.csv", names, gid, truth.contamination.masks, int, index=True)
    truth_json = {
        "pi": truth.pi.tolist(),
        "mu": truth.mu.tolist(),
        "sigma": truth.sigma.tolist(),
        "labels": [(lab + 1).tolist() for lab in truth.labels],
        "config": {f.name: getattr(sim, f.name) for f in fields(SimulationConfig)},
    }
    truth_json["config"]["n_g"] = list(sim.sizes())
    _write_text(out / "truth.json", _dump_json(truth_json))
    return 0


def cmd_evaluate(args):
    params, _ = load_model(args.model)
    truth = _read_json(args.truth)
    try:
        mu_t, sigma_t, pi_t = np.array(truth["mu"]), np.array(truth["sigma"]), np.array(truth["pi"])
    except KeyError as err:
        raise ValidationError([f"{args.truth}: missing field {err}"])
    if sigma_t.shape != params.sigma_reg.shape or mu_t.shape != params.mu.shape or pi_t.shape != params.pi.shape:
        raise ValidationError([
            f"model and truth shapes differ: sigma {params.sigma_reg.shape} vs {sigma_t.shape}, "
            f"mu {params.mu.shape} vs {mu_t.shape}, pi {params.pi.shape} vs {pi_t.shape}"
        ])
    kl = [metrics.kl_divergence(a, b) for a, b in zip(params.sigma_reg, sigma_t)]
    out = {
        "kl_mean": float(np.mean(kl)),
        "kl": kl,
        "mse_mu": metrics.mse_mu(params.mu, mu_t),
        "mse_pi": metrics.mse_pi(params.pi, pi_t),
        "precision": None,
        "recall": None,
        "f1": None,
    }
    if (args.mask is None) != (args.truth_mask is None):
        raise ValidationError(["--mask and --truth-mask must be given together"])
    if args.mask is not None:
        try:
            prec, rec, f1 = metrics.flag_scores(read_mask(args.mask), read_mask(args.truth_mask))
        except ValueError as err:
            raise ValidationError([str(err)])
        out.update(precision=prec, recall=rec, f1=f1)
    _write_text(Path(args.out_dir) / "metrics.json", _dump_json(out))
    return 0


def _parse_alphas(text):
    try:
        alphas = [float(a) for a in text.split(",") if a.strip()]
    except ValueError:
        raise ValidationError([f"--alphas: cannot parse {text!r}"])
    if not alphas:
        raise ValidationError(["--alphas: at least one value is required"])
    bad = [a for a in alphas if not 0.5 <= a <= 1.0]
    if bad:
        raise ValidationError([f"--alphas: values must lie in [0.5, 1] (got {bad})"])
    return alphas


def cmd_sweep(args):
    alphas = _parse_alphas(args.alphas)
    data, gid = read_data(args.data)
    cfg = estimator_config(args.config, args.seed)
    out = Path(args.out_dir)
    pos = _positions(gid).tolist()
    t_rows, r_rows = [], []
    for alpha, result in diagnostics.alpha_sweep(data, cfg, alphas):
        res = _write_fit(out / f"alpha_{alpha!r}", data, gid, result)
        for g, i in zip(gid.tolist(), pos):
            for k, t in enumerate(result.resp.t[g][i].tolist()):
                t_rows.append([alpha, g + 1, i + 1, k + 1, t])
            for j, r in enumerate(res.residuals[g][i].tolist()):
                r_rows.append([alpha, g + 1, i + 1, j + 1, r])
    _write_text(out / "responsibilities_long.csv", _csv_text(["alpha", "group", "i", "k", "t"], t_rows))
    _write_text(out / "residuals_long.csv", _csv_text(["alpha", "group", "i", "j", "residual"], r_rows))
    return 0


# ---------------------------------------------------------------- entry point

def build_parser():
    parser = argparse.ArgumentParser(prog="cellmggmm", description="Cellwise-robust multi-group Gaussian mixtures.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the model to a grouped data CSV")
    p.add_argument("--data", required=True, help="CSV with a 1-based 'group' column and numeric variables")
    p.add_argument("--config", help="JSON estimator settings")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="draw contaminated synthetic data")
    p.add_argument("--config", help="JSON simulation settings")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="compare a fitted model with the simulation truth")
    p.add_argument("--model", required=True, help="model.json written by fit")
    p.add_argument("--truth", required=True, help="truth.json written by simulate")
    p.add_argument("--mask", help="mask.csv written by fit")
    p.add_argument("--truth-mask", help="contamination_mask.csv written by simulate")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="fit for a list of alpha values")
    p.add_argument("--data", required=True, help="CSV with a 1-based 'group' column and numeric variables")
    p.add_argument("--config", help="JSON estimator settings; alpha is taken from --alphas")
    p.add_argument("--alphas", required=True, help="comma-separated, e.g. 1,0.75,0.5")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (FactorizationError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except ValidationError as err:
        for msg in err.errors:
            print(f"invalid input: {msg}", file=sys.stderr)
        return 2
    except (TypeError, ValueError) as err:
        print(f"invalid input: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
