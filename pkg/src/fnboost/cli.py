"""Command-line front end.

Usage::

    fnboost fit       --config run.json [--data manifest.json] [--model-out model.json] [--out-dir out]
    fnboost cv        --config run.json [--grid 1:500] [--seed 1] [--jobs 4] [--out-dir out]
    fnboost predict   --config run.json --model-in model.json [--data newdata.json] [--out-dir out]
    fnboost coef      --config run.json --model-in model.json [--out-dir out]
    fnboost bootstrap --config run.json [--grid 1:200] [--seed 1] [--jobs 4] [--out-dir out]
    fnboost simulate  --config sim.json [--seed 1] [--out-dir out]

A run configuration is a JSON object::

    {"data": "manifest.json",
     "seed": 1,
     "model": {"family": "gaussian", "control": {"mstop": 200, "nu": 0.1},
               "offset_mode": "smooth", "numInt": "equal",
               "timeformula": {"type": "bbs", "z": "t", "df": 3},
               "formula": [{"type": "bolsc", "z": "power", "df": 1}, ...]},
     "cv": {"type": "kfold", "B": 10, "grid": "1:500", "mode": "fixed_preprocessing"},
     "bootstrap": {"B_outer": 100, "B_inner": 25, "type_inner": "bootstrap",
                   "quantiles": [0.05, 0.5, 0.95]},
     "coef": {"n1": 40, "n2": 40},
     "simulate": {"scenario": "sof", "N": 200}}

Relative paths are resolved against the configuration file. Failures exit
with a nonzero status and print one JSON object to stderr with the fields
``error``, ``message`` and, where known, ``location``.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from .baselearners import LearnerError, spec_from_dict
from .boosting import Control, FitError, ModelSpec, fit, load_model
from .data import DataError, load_dataset, write_csv_matrix, write_dataset
from .families import family_from_name
from .gamlss import fit_lss, gaussian_lss
from .resampling import bootstrap_ci, make_folds, oob_risk_curves
from .simulate import simulate

__all__ = ["main", "ConfigError", "parse_model", "parse_grid"]

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    """Invalid run configuration; ``location`` is a dotted path such as ``model.formula[1].df``."""

    def __init__(self, message, location=None):
        self.location = location
        super().__init__(message)


# ---------------------------------------------------------------------------
# configuration parsing


def _field_in_message(clause, message):
    for key in clause:
        if key != "type" and (f"'{key}'" in message or f" {key} " in f" {message} "):
            return key
    return None


def parse_clause(clause, location):
    """Parse one learner clause, locating errors down to the offending field."""
    if not isinstance(clause, dict):
        raise ConfigError("learner clause must be a JSON object", location)
    if "type" not in clause:
        raise ConfigError("learner clause needs a 'type' field", location)
    for side in ("left", "right"):
        if side in clause:
            parse_clause(clause[side], f"{location}.{side}")
    try:
        return spec_from_dict(clause)
    except (ValueError, TypeError) as e:
        msg = str(e)
        if msg.startswith("unknown learner type"):
            raise ConfigError(msg, f"{location}.type") from None
        key = _field_in_message(clause, msg)
        raise ConfigError(msg, f"{location}.{key}" if key else location) from None


def parse_model(model, location="model"):
    """Turn the ``model`` section into a ``ModelSpec`` (or an LSS description)."""
    if not isinstance(model, dict):
        raise ConfigError("model section must be a JSON object", location)
    known = {"family", "control", "offset_mode", "numInt", "timeformula", "formula", "time_name", "array"}
    for key in model:
        if key not in known:
            raise ConfigError(f"unknown field {key!r}", f"{location}.{key}")
    control = model.get("control", {})
    if not isinstance(control, dict):
        raise ConfigError("control must be a JSON object", f"{location}.control")
    for key in control:
        if key not in ("mstop", "nu"):
            raise ConfigError(f"unknown field {key!r}", f"{location}.control.{key}")
    try:
        ctrl = Control(int(control.get("mstop", 100)), control.get("nu"))
    except (ValueError, TypeError) as e:
        key = _field_in_message(control, str(e)) or "mstop"
        raise ConfigError(str(e), f"{location}.control.{key}") from None
    tf = model.get("timeformula")
    timeformula = None if tf is None else parse_clause(tf, f"{location}.timeformula")
    formula = model.get("formula")
    family_name = model.get("family", "gaussian")
    if family_name == "gaussian_lss":
        if not isinstance(formula, dict):
            raise ConfigError("gaussian_lss needs a formula object {mu: [...], sigma: [...]}", f"{location}.formula")
        formulas = {}
        for p in ("mu", "sigma"):
            clauses = formula.get(p)
            if not isinstance(clauses, list) or not clauses:
                raise ConfigError(f"parameter {p} needs a non-empty learner list", f"{location}.formula.{p}")
            formulas[p] = [parse_clause(c, f"{location}.formula.{p}[{i}]") for i, c in enumerate(clauses)]
        return {"lss": True, "formulas": formulas, "control": ctrl, "timeformula": timeformula,
                "time_name": model.get("time_name", "t")}
    if not isinstance(formula, list) or not formula:
        raise ConfigError("formula must be a non-empty list of learner clauses", f"{location}.formula")
    specs = tuple(parse_clause(c, f"{location}.formula[{i}]") for i, c in enumerate(formula))
    try:
        family = family_from_name(family_name)
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e), f"{location}.family") from None
    try:
        return ModelSpec(
            specs,
            timeformula,
            family,
            ctrl,
            model.get("offset_mode", "smooth"),
            model.get("numInt", "equal"),
            model.get("time_name", "t"),
            bool(model.get("array", True)),
        )
    except ValueError as e:
        key = _field_in_message(model, str(e))
        raise ConfigError(str(e), f"{location}.{key}" if key else location) from None


def parse_grid(text, location="grid"):
    """Iteration grid from ``"a:b"``, ``"a:b:step"``, ``"1,5,10"`` or a JSON list; 0 is the offset-only model."""
    try:
        if isinstance(text, (list, tuple)):
            grid = [int(v) for v in text]
        elif isinstance(text, int):
            grid = list(range(1, text + 1))
        elif ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError(text)
            step = parts[2] if len(parts) == 3 else 1
            grid = list(range(parts[0], parts[1] + 1, step))
        else:
            grid = [int(p) for p in text.split(",")]
    except (ValueError, TypeError):
        raise ConfigError(f"cannot parse iteration grid {text!r}", location) from None
    if not grid or min(grid) < 0:
        raise ConfigError("iteration grid needs nonnegative integers", location)
    return np.array(sorted(set(grid)))


def _load_config(path):
    if path is None:
        raise ConfigError("--config is required", "--config")
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", "--config") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}", "--config") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object", "--config")
    cfg["_base"] = os.path.dirname(os.path.abspath(path))
    return cfg


def _resolve(cfg, p):
    return p if os.path.isabs(p) else os.path.join(cfg["_base"], p)


def _section(cfg, name):
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{name} section must be a JSON object", name)
    return sec


def _data(cfg, args):
    if args.data:
        return load_dataset(args.data)
    if "data" not in cfg:
        raise ConfigError("no dataset: give 'data' in the config or --data", "data")
    return load_dataset(_resolve(cfg, cfg["data"]))


def _seed(cfg, args):
    return args.seed if args.seed is not None else cfg.get("seed")


def _model(cfg):
    if "model" not in cfg:
        raise ConfigError("config has no model section", "model")
    return parse_model(cfg["model"])


def _plain_spec(spec, command):
    if isinstance(spec, dict):
        raise ConfigError(f"{command} is not available for gaussian_lss models", "model.family")
    return spec


# ---------------------------------------------------------------------------
# output helpers


def _out_dir(args):
    d = args.out_dir or "."
    os.makedirs(d, exist_ok=True)
    return d


def _fmt(v):
    return "" if v is None else f"{v:.17g}"


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


def _write_predictions(path, pred, times=None):
    """Grid predictions as an ``N x G`` matrix, otherwise one column."""
    pred = np.asarray(pred)
    if pred.ndim == 2:
        write_csv_matrix(path, pred, [_fmt(t) for t in times])
    else:
        write_csv_matrix(path, pred[:, None], ["prediction"])


def _coef_rows(coefs):
    rows = []
    for c in coefs:
        rows.extend(c.rows())
    return rows


# ---------------------------------------------------------------------------
# subcommands


def cmd_fit(cfg, args):
    spec = _model(cfg)
    data = _data(cfg, args)
    out = _out_dir(args)
    if isinstance(spec, dict):
        m = fit_lss(spec["formulas"], gaussian_lss(), data, spec["control"], spec["timeformula"], spec["time_name"])
        eta = m.predict()
        write_csv_matrix(os.path.join(out, "fitted.csv"), np.column_stack([eta["mu"], eta["sigma"]]), ["mu", "sigma"])
        summary = {
            "family": "gaussian_lss",
            "mstop": m.mstop,
            "risk": float(m.risk_path[-1]),
            "selected": {p: m.selected(p) for p in ("mu", "sigma")},
        }
        _write_json(os.path.join(out, "summary.json"), summary)
        return summary
    model = fit(spec, data)
    model_out = args.model_out or os.path.join(out, "model.json")
    model.save(model_out)
    frame = model.structure.frame
    _write_predictions(os.path.join(out, "fitted.csv"), model.fitted(), frame.grid)
    counts = {label: 0 for label in model.labels}
    for j in model.selected:
        counts[model.labels[j]] += 1
    summary = {
        "family": spec.family.name,
        "mstop": model.mstop,
        "nu": spec.nu,
        "risk": float(model.risk_path[-1]),
        "selection_counts": counts,
        "model": os.path.abspath(model_out),
    }
    _write_json(os.path.join(out, "summary.json"), summary)
    return summary


def _cv_options(cfg, args, spec):
    sec = _section(cfg, "cv")
    grid_src = args.grid if args.grid is not None else sec.get("grid", spec.control.mstop)
    grid = parse_grid(grid_src, "--grid" if args.grid is not None else "cv.grid")
    return sec, grid


def cmd_cv(cfg, args):
    spec = _plain_spec(_model(cfg), "cv")
    data = _data(cfg, args)
    sec, grid = _cv_options(cfg, args, spec)
    grouping = None
    if "grouping" in sec:
        cov = data.scalars.get(sec["grouping"])
        if cov is None:
            raise ConfigError(f"grouping variable {sec['grouping']!r} not in data", "cv.grouping")
        grouping = cov.values
    try:
        folds = make_folds(data.n_curves, sec.get("type", "kfold"), sec.get("B"), _seed(cfg, args), grouping)
    except ValueError as e:
        raise ConfigError(str(e), "cv") from None
    res = oob_risk_curves(spec, data, folds, grid, sec.get("mode", "fixed_preprocessing"), args.jobs)
    out = _out_dir(args)
    write_csv_matrix(os.path.join(out, "risk.csv"), res.risk, [str(m) for m in res.grid])
    summary = {"mstop_opt": res.mstop_opt, "at_boundary": res.at_boundary, "folds": int(folds.B)}
    if res.at_boundary:
        summary["note"] = "minimum at the largest grid value; enlarge the grid"
    _write_json(os.path.join(out, "cv_summary.json"), summary)
    if args.model_out:
        fit(spec.with_control(mstop=res.mstop_opt), data).save(args.model_out)
    return summary


def cmd_predict(cfg, args):
    if not args.model_in:
        raise ConfigError("--model-in is required", "--model-in")
    model = load_model(args.model_in)
    data = _data(cfg, args)
    at = _section(cfg, "predict").get("at")
    pred = model.predict(data, at=at, type=_section(cfg, "predict").get("type", "link"))
    out = _out_dir(args)
    grid = data.response.grid if pred.ndim == 2 and data.response is not None else model.structure.frame.grid
    _write_predictions(os.path.join(out, "predictions.csv"), pred, grid)
    return {"n": int(pred.shape[0])}


def cmd_coef(cfg, args):
    if not args.model_in:
        raise ConfigError("--model-in is required", "--model-in")
    model = load_model(args.model_in)
    sec = _section(cfg, "coef")
    coefs = model.coef_eval(int(sec.get("n1", 40)), int(sec.get("n2", 40)), sec.get("at"))
    out = _out_dir(args)
    _write_rows(os.path.join(out, "coef.csv"), ["learner", "s", "t", "value"], _coef_rows(coefs))
    return {"learners": [c.label for c in coefs]}


def cmd_bootstrap(cfg, args):
    spec = _plain_spec(_model(cfg), "bootstrap")
    data = _data(cfg, args)
    sec = _section(cfg, "bootstrap")
    grid_src = args.grid if args.grid is not None else sec.get("grid", spec.control.mstop)
    grid = parse_grid(grid_src, "--grid" if args.grid is not None else "bootstrap.grid")
    quantiles = tuple(float(q) for q in sec.get("quantiles", (0.05, 0.5, 0.95)))
    try:
        res = bootstrap_ci(
            spec,
            data,
            int(sec.get("B_outer", 100)),
            int(sec.get("B_inner", 25)),
            grid,
            quantiles,
            _seed(cfg, args),
            sec.get("type_inner", "bootstrap"),
            sec.get("mode", "fixed_preprocessing"),
            args.jobs,
            int(sec.get("n1", 40)),
            int(sec.get("n2", 40)),
        )
    except ValueError as e:
        if isinstance(e, (DataError, LearnerError)):
            raise
        raise ConfigError(str(e), "bootstrap") from None
    out = _out_dir(args)
    rows = []
    template = res.estimates[0]
    for k, c in enumerate(template):
        for q in quantiles:
            band = type(c)(c.label, c.kind, res.bands[k][q], c.s, c.t, c.names)
            rows.extend((r[0], r[1], r[2], repr(q), r[3]) for r in band.rows())
    _write_rows(os.path.join(out, "bands.csv"), ["learner", "s", "t", "quantile", "value"], rows)
    write_csv_matrix(os.path.join(out, "mstops.csv"), res.mstops[:, None], ["mstop"])
    return {"B_outer": len(res.estimates), "median_mstop": float(np.median(res.mstops))}


def _truth_rows(truth):
    rows = []
    for name, v in truth.items():
        if not isinstance(v, tuple):
            continue
        if len(v) == 2:
            arg, val = v
            key = "s" if name == "beta" else "t"
            for a, b in zip(arg, val):
                rows.append((name, float(a), None, float(b)) if key == "s" else (name, None, float(a), float(b)))
        else:
            s, t, surf = v
            rows.extend((name, float(a), float(b), float(surf[i, j])) for i, a in enumerate(s) for j, b in enumerate(t))
    return rows


def cmd_simulate(cfg, args):
    sec = dict(_section(cfg, "simulate"))
    scenario = sec.pop("scenario", None)
    if scenario is None:
        raise ConfigError("simulate needs a scenario (sof, fos or hist)", "simulate.scenario")
    seed = _seed(cfg, args)
    if seed is not None:
        sec["seed"] = int(seed)
    try:
        sim = simulate(scenario, **sec)
    except TypeError as e:
        raise ConfigError(str(e), "simulate") from None
    except ValueError as e:
        if isinstance(e, DataError):
            raise
        raise ConfigError(str(e), "simulate.scenario") from None
    out = _out_dir(args)
    manifest = write_dataset(sim.data, out)
    _write_rows(os.path.join(out, "truth.csv"), ["learner", "s", "t", "value"], _truth_rows(sim.truth))
    scalars = {k: v for k, v in sim.truth.items() if not isinstance(v, tuple)}
    if scalars:
        _write_json(os.path.join(out, "truth.json"), scalars)
    return {"manifest": os.path.abspath(manifest), "n_curves": sim.data.n_curves}


COMMANDS = {
    "fit": cmd_fit,
    "cv": cmd_cv,
    "predict": cmd_predict,
    "coef": cmd_coef,
    "bootstrap": cmd_bootstrap,
    "simulate": cmd_simulate,
}


def build_parser():
    p = argparse.ArgumentParser(prog="fnboost", description="Component-wise boosting for functional regression.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="run configuration (JSON)")
        s.add_argument("--data", help="dataset manifest; overrides the config's data entry")
        s.add_argument("--model-out", help="where to write the fitted model")
        s.add_argument("--model-in", help="fitted model to load")
        s.add_argument("--out-dir", help="directory for outputs (default: current directory)")
        s.add_argument("--seed", type=int, help="random seed; overrides the config's seed")
        s.add_argument("--jobs", type=int, default=1, help="parallel folds; FNBOOST_THREADS caps it")
        s.add_argument("--grid", help="iteration grid, e.g. 1:500 or 1:500:5 or 10,20,50")
    return p


def _fail(kind, message, location=None, code=1):
    diag = {"error": kind, "message": message}
    if location is not None:
        diag["location"] = location
    sys.stderr.write(json.dumps(diag, sort_keys=True) + "\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config)
        result = COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        return _fail("config", str(e), e.location, EXIT_CONFIG)
    except DataError as e:
        return _fail("data", str(e), e.variable, EXIT_DATA)
    except LearnerError as e:
        return _fail("learner", str(e), None, EXIT_DATA)
    except (FitError, np.linalg.LinAlgError, FloatingPointError) as e:
        return _fail("numerical", str(e), None, EXIT_NUMERIC)
    except OSError as e:
        return _fail("io", f"{e.strerror}: {e.filename}", None, 1)
    sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
