"""Command-line front end: ``univperturb <command> --config run.json [--dotted.key value ...]``.

Every command reads one JSON config, applies the command-line overrides,
and echoes the merged config into its output directory. Exit codes: 0 on
success (non-converged perturbations included), 2 for bad configs or
inputs, 3 when a computation aborts numerically.
"""

import argparse
import copy
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .datasets import load_dataset, split
from .defense import RobustnessConfig, robustness_iteration
from .errors import (AnalysisError, ConfigError, DomainError, InfeasibleError, NumericalError, ParseError,
                     ShapeError)
from .models import TrainConfig, accuracy, init_mlp, load_model, save_model, train
from .numerics import child_rng, child_seed, make_rng, sample_sphere
from .universal import UniversalConfig, compute_universal, fooling_rate, load_perturbation, save_perturbation

log = logging.getLogger("univperturb")

COMMANDS = ("train", "universal", "analyze", "finetune", "export")
ANALYSES = ("baselines", "sweep", "transfer", "normals", "subspace", "graph", "sqrtd")

DEFAULTS = {
    "out_dir": "run",
    "dataset": {"kind": "gaussian_blobs", "num_classes": 10, "dim": 100, "per_class": 200,
                "noise": 1.0, "offset": 8.0, "seed": 0},
    "splits": {"train": 0.6, "val": 0.25, "eval": 0.15},
    "split_seed": 1,
    "model": {"hidden": [64, 64], "seed": 2, "path": "model.json"},
    "train": {"lr": 0.01, "epochs": 30, "batch_size": 32, "seed": 3, "weight_decay": 0.0},
    "universal": {"p": "inf", "xi": None, "xi_fraction": 0.2, "delta": 0.2, "max_passes": 10, "seed": 0,
                  "overshoot": 0.02, "max_iter": 50, "x_size": 500, "x_seed": 4,
                  "path": "perturbation.json"},
    "analyze": {"which": "sweep", "norms": None, "kinds": list(analysis.BASELINE_KINDS), "seed": 7,
                "models": [], "n_normals": 100, "k": 10, "probe_seeds": 5, "n_sqrtd": 50},
    "finetune": {"rounds": 1, "pool_size": 10, "epochs": 5, "mix_prob": 0.5, "fresh_runs": 3, "seed": 5,
                 "path": "finetuned.json"},
    "export": {"perturbation": "perturbation.json", "side": None, "out": "perturbation.pgm"},
}


def deep_merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg, pairs):
    """Set ``--a.b value`` pairs on the nested config; values parse as JSON when they can."""
    if len(pairs) % 2:
        raise ConfigError(f"override {pairs[-1]!r} has no value")
    cfg = copy.deepcopy(cfg)
    for flag, value in zip(pairs[::2], pairs[1::2]):
        if not flag.startswith("--") or len(flag) < 3:
            raise ConfigError(f"expected --key, got {flag!r}")
        keys = flag[2:].split(".")
        node = cfg
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override inside non-object {flag!r}")
        node[keys[-1]] = _parse_value(value)
    return cfg


def load_config(path, overrides=()):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return apply_overrides(deep_merge(DEFAULTS, doc), list(overrides))


def _out(cfg, name):
    p = Path(name)
    return p if p.is_absolute() else Path(cfg["out_dir"]) / p


def _require(path, what):
    if not Path(path).is_file():
        raise ConfigError(f"missing {what}: {path}")
    return path


def _train_config(cfg):
    try:
        return TrainConfig(**cfg["train"])
    except TypeError as exc:
        raise ConfigError(f"bad train section: {exc}") from None


def _splits(cfg):
    spec = cfg["dataset"]
    for key in ("path", "images", "labels"):
        if key in spec:
            _require(spec[key], "dataset file")
    try:
        data = load_dataset(spec)
    except TypeError as exc:
        raise ConfigError(f"bad dataset section: {exc}") from None
    return data, split(data, cfg["splits"], cfg["split_seed"])


def _random_subset(data, size, seed, name):
    # splits are sorted by pool index, so a prefix would be class-biased
    n = min(int(size), len(data))
    if n < 1:
        raise ConfigError(f"{name} subset size must be >= 1")
    return data.subset(np.sort(make_rng(seed).permutation(len(data))[:n]), name)


def _x_subset(cfg, trainset):
    u = cfg["universal"]
    return _random_subset(trainset, u["x_size"], u["x_seed"], "X")


def universal_config(cfg, trainset):
    u = cfg["universal"]
    xi = u.get("xi")
    if xi is None:
        # budget as a fraction of the typical input l_inf norm
        xi = float(u["xi_fraction"]) * float(np.mean(np.abs(trainset.inputs).max(axis=1)))
    return UniversalConfig(p=u["p"], xi=float(xi), delta=u["delta"], max_passes=u["max_passes"],
                           seed=u["seed"], overshoot=u["overshoot"], max_iter=u["max_iter"])


def _echo(cfg):
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_train(cfg):
    data, sp = _splits(cfg)
    tcfg = _train_config(cfg)
    mcfg = cfg["model"]
    model = init_mlp(data.dim, int(data.labels.max()) + 1, tuple(mcfg["hidden"]), mcfg["seed"])
    train(model, sp["train"], tcfg)
    _echo(cfg)
    save_model(model, _out(cfg, mcfg["path"]))
    tr, va = accuracy(model, sp["train"]), accuracy(model, sp["val"])
    print(f"train accuracy {tr:.4f}")
    print(f"validation accuracy {va:.4f}")
    return {"train_accuracy": tr, "val_accuracy": va}


def _model(cfg):
    return load_model(_require(_out(cfg, cfg["model"]["path"]), "model file"))


def cmd_universal(cfg):
    model = _model(cfg)
    _, sp = _splits(cfg)
    X = _x_subset(cfg, sp["train"])
    ucfg = universal_config(cfg, sp["train"])
    pert = compute_universal(model, X, ucfg)
    rep = fooling_rate(model, sp["val"], pert.v)
    _echo(cfg)
    save_perturbation(pert, _out(cfg, cfg["universal"]["path"]))
    _write_csv(_out(cfg, "label_pairs.csv"), ["index", "original", "perturbed", "flipped"],
               [(i, a, b, int(a != b)) for i, (a, b) in enumerate(rep.pairs)])
    print(f"xi {ucfg.xi:.6g} passes {pert.passes} converged {str(pert.converged).lower()}")
    print(f"fooling rate on X {pert.fooling_rate:.4f}")
    print(f"fooling rate on validation {rep.rate:.4f}")
    return {"x_rate": pert.fooling_rate, "val_rate": rep.rate, "converged": pert.converged}


def _analyze_sweep(cfg, model, sp, pert, which):
    a = cfg["analyze"]
    rng = child_rng(a["seed"], 0)
    X = _x_subset(cfg, sp["train"])
    ucfg = universal_config(cfg, sp["train"])
    directions = {"universal": pert.v}
    for kind in a["kinds"]:
        directions[kind] = analysis.baseline_perturbations(model, X, kind, rng, ucfg.overshoot, ucfg.max_iter)
    ref = float(np.linalg.norm(pert.v))
    if which == "baselines":
        rows = [(k, repr(ref), repr(analysis.norm_sweep(model, sp["val"], d, [ref])[0][1]))
                for k, d in directions.items()]
        _write_csv(_out(cfg, "baselines.csv"), ["kind", "norm", "fooling_rate"], rows)
        for k, _, r in rows:
            print(f"{k} at l2 norm {ref:.4g}: {float(r):.4f}")
        return {k: float(r) for k, _, r in rows}
    norms = a["norms"] if a["norms"] is not None else [ref * f for f in np.linspace(0.0, 2.0, 11)]
    curves = {k: analysis.norm_sweep(model, sp["val"], d, norms) for k, d in directions.items()}
    analysis.write_curves_csv(_out(cfg, "sweep.csv"), curves)
    print(f"sweep over {len(norms)} norms written")
    return curves


def cmd_analyze(cfg):
    a = cfg["analyze"]
    which = a["which"]
    if which not in ANALYSES:
        raise ConfigError(f"unknown analysis {which!r}; expected one of {ANALYSES}")
    model = _model(cfg)
    pert_path = _out(cfg, cfg["universal"]["path"])
    if which in ("baselines", "sweep", "graph"):
        _require(pert_path, "perturbation file")
    for m in a["models"]:
        _require(_out(cfg, m), "model file")
    _, sp = _splits(cfg)
    _echo(cfg)
    if which in ("baselines", "sweep"):
        return _analyze_sweep(cfg, model, sp, load_perturbation(pert_path), which)
    if which == "graph":
        g = analysis.build_label_graph(model, sp["val"], load_perturbation(pert_path).v)
        analysis.write_label_graph_dot(_out(cfg, "label_graph.dot"), g)
        print(f"{len(g.edges)} edges; dominant labels {sorted(set(g.dominant.values()))}")
        return g
    if which == "transfer":
        paths = [_out(cfg, cfg["model"]["path"])] + [_out(cfg, m) for m in a["models"]]
        models = [load_model(p) for p in paths]
        X = _x_subset(cfg, sp["train"])
        tm = analysis.transfer_matrix(models, X, sp["val"], universal_config(cfg, sp["train"]),
                                      ids=[Path(p).stem for p in paths])
        analysis.write_transfer_csv(_out(cfg, "transfer.csv"), tm)
        print(f"transfer matrix {len(models)}x{len(models)}; diagonal >= row mean: "
              f"{str(tm.diagonal_dominates_row_mean()).lower()}")
        return tm
    ucfg = universal_config(cfg, sp["train"])
    if which in ("normals", "subspace"):
        src = _random_subset(sp["train"], a["n_normals"], child_seed(a["seed"], 3), "normals")
        N = analysis.build_normals_matrix(model, src, ucfg.overshoot, ucfg.max_iter)
        sigma_n, sigma_r = analysis.singular_spectrum_comparison(N, child_rng(a["seed"], 1))
        if which == "normals":
            analysis.write_spectra_csv(_out(cfg, "spectra.csv"), sigma_n, sigma_r)
            ratio = sigma_n[1] / sigma_n[0] if sigma_n.size > 1 else 0.0
            print(f"sigma2/sigma1 {ratio:.3e}")
            k = min(10, sigma_n.size)
            print(f"top-{k} energy N {analysis.energy_fraction(sigma_n, k):.4f} "
                  f"random {analysis.energy_fraction(sigma_r, k):.4f}")
            return sigma_n, sigma_r
        xi = float(np.linalg.norm(load_perturbation(pert_path).v)) if pert_path.is_file() else ucfg.xi
        rows = []
        for s in range(int(a["probe_seeds"])):
            rng = child_rng(a["seed"], 10 + s)
            probe = analysis.subspace_probe(N, int(a["k"]), xi, sp["eval"], model, rng)
            ambient = fooling_rate(model, sp["eval"], sample_sphere(N.matrix.shape[0], xi, rng)).rate
            rows.append((s, repr(xi), repr(probe.fooling_rate), repr(ambient)))
        _write_csv(_out(cfg, "subspace.csv"), ["seed", "norm", "subspace_rate", "ambient_rate"], rows)
        sub = np.mean([float(r[2]) for r in rows])
        amb = np.mean([float(r[3]) for r in rows])
        print(f"subspace rate {sub:.4f} ambient rate {amb:.4f} at l2 norm {xi:.4g}")
        return sub, amb
    # sqrtd
    samples = _random_subset(sp["val"], a["n_sqrtd"], child_seed(a["seed"], 4), "sqrtd")
    n = len(samples)
    rep = analysis.random_norm_scaling_check(model, samples, child_rng(a["seed"], 2),
                                             overshoot=ucfg.overshoot, max_iter=ucfg.max_iter)
    _write_csv(_out(cfg, "sqrtd.csv"), ["index", "ratio", "censored"],
               [(i, repr(float(r)), int(c)) for i, (r, c) in enumerate(zip(rep.ratios, rep.censored))])
    print(f"median ratio {rep.median:.4f}; censored {int(rep.censored.sum())} of {n}")
    return rep


def cmd_finetune(cfg):
    model = _model(cfg)
    _, sp = _splits(cfg)
    f = cfg["finetune"]
    rcfg = RobustnessConfig(universal=universal_config(cfg, sp["train"]), train=_train_config(cfg),
                            pool_size=f["pool_size"], epochs=f["epochs"], mix_prob=f["mix_prob"],
                            x_size=cfg["universal"]["x_size"], fresh_runs=f["fresh_runs"], seed=f["seed"])
    tuned, reports = robustness_iteration(model, sp["train"], sp["val"], rcfg, int(f["rounds"]))
    _echo(cfg)
    save_model(tuned, _out(cfg, f["path"]))
    _write_csv(_out(cfg, "rounds.csv"), ["round", "fresh_fooling_rate", "clean_accuracy"],
               [(r.round, repr(r.fresh_fooling_rate), repr(r.clean_accuracy)) for r in reports])
    for r in reports:
        print(f"round {r.round}: fresh fooling rate {r.fresh_fooling_rate:.4f} "
              f"clean accuracy {r.clean_accuracy:.4f}")
    return reports


def pgm_bytes(v, side):
    """Binary greyscale PGM of ``v`` as a ``side`` x ``side`` image, min at 0 and max at 255."""
    v = np.asarray(v, dtype=np.float64)
    if side is None:
        side = math.isqrt(v.size)
    side = int(side)
    if side < 1 or side * side != v.size:
        raise ConfigError(f"dimension {v.size} is not {side}^2")
    lo, hi = float(v.min()), float(v.max())
    if not hi > lo:
        raise DomainError("perturbation has zero dynamic range")
    # round half up
    pix = np.floor((v - lo) * (255.0 / (hi - lo)) + 0.5).clip(0, 255).astype(np.uint8)
    return f"P5 {side} {side} 255\n".encode("ascii") + pix.tobytes()


def cmd_export(cfg):
    e = cfg["export"]
    pert = load_perturbation(_require(_out(cfg, e["perturbation"]), "perturbation file"))
    data = pgm_bytes(pert.v, e["side"])
    _echo(cfg)
    out = _out(cfg, e["out"])
    out.write_bytes(data)
    print(f"wrote {out}")
    return out


HANDLERS = {"train": cmd_train, "universal": cmd_universal, "analyze": cmd_analyze,
            "finetune": cmd_finetune, "export": cmd_export}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="univperturb", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True)
    parser.add_argument("-v", "--verbose", action="store_true")
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, rest)
        HANDLERS[args.command](cfg)
    except (NumericalError, AnalysisError, InfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ParseError, DomainError, ShapeError, OSError, KeyError, TypeError) as exc:
        msg = f"missing config key {exc}" if isinstance(exc, KeyError) else str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
