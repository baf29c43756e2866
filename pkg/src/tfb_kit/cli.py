"""Command-line entry point: ``tfb-kit {train,bayesianize,eval,demo-toy,verify}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .adapter import PosteriorFamily
from .data import Dataset, default_anchor_size, pseudo_label, select_anchor, toy_blobs, toy_cubic
from .formats import checkpoint_to_json, csv_text, dataset_from_csv, load_checkpoint, write_csv
from .inference import PredictionConfig, mc_predict, prediction_band
from .linalg import RankDeficiencyError
from .metrics import MetricKind, evaluate
from .netcore import (
    Activation,
    ModelCheckpoint,
    Task,
    TrainingDiverged,
    bayesianize_network,
    forward,
    init_network,
    mlp_topology,
    regroup,
    train_adam,
)
from .search import DEFAULT_GRID, SearchConfig, ToleranceMode, binary_search_sigma, grid_interpolated_sigma
from .verify import run_all

log = logging.getLogger("tfb_kit")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4
TOY_SIGMAS = (0.1, 0.3, 0.6, 1.0, 1.5)


class ValidationError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _writable(path: str) -> Path:
    p = Path(path)
    if not p.parent.exists():
        raise ValidationError(f"output directory {p.parent} does not exist")
    return p


# -- datasets -----------------------------------------------------------------


def dataset_spec(args) -> dict:
    if args.task == "toy-cubic":
        return {"name": "toy-cubic", "seed": args.data_seed}
    return {
        "name": "toy-blobs",
        "seed": args.data_seed,
        "classes": args.classes,
        "per_class": args.per_class,
        "separation": args.separation,
    }


def make_dataset(spec: dict) -> Dataset:
    if spec["name"] == "toy-cubic":
        return toy_cubic(int(spec["seed"]))
    if spec["name"] == "toy-blobs":
        return toy_blobs(int(spec["classes"]), int(spec["per_class"]), float(spec["separation"]), int(spec["seed"]))
    raise ValidationError(f"unknown dataset {spec['name']!r}")


# -- commands -------------------------------------------------------------------


def train_checkpoint(args) -> tuple[ModelCheckpoint, list[float]]:
    spec = dataset_spec(args)
    ds = make_dataset(spec)
    task = ds.task
    out_dim = 1 if task is Task.REGRESSION else ds.class_count
    dims = [ds.inputs.shape[1]] + [args.hidden] * args.depth + [out_dim]
    net = init_network(mlp_topology(dims, args.rank, args.activation), args.seed, task)
    trained, curve = train_adam(net, ds.inputs, ds.targets, args.steps, args.lr, args.seed, args.weight_decay)
    meta = {
        "train_seed": args.seed,
        "steps": args.steps,
        "learning_rate": args.lr,
        "weight_decay": args.weight_decay,
        "dataset": spec,
        "final_loss": curve[-1] if curve else None,
    }
    return ModelCheckpoint.from_network(trained, meta), curve


def cmd_train(args) -> int:
    if args.steps < 0 or args.lr < 0:
        raise ValidationError("steps and lr must be non-negative")
    out = _writable(args.out)
    ckpt, curve = train_checkpoint(args)
    out.write_text(checkpoint_to_json(ckpt), encoding="utf-8")
    print(f"final_loss={curve[-1]:.17g}" if curve else "final_loss=untrained")
    return EXIT_OK


def _anchor(args, ckpt: ModelCheckpoint, net) -> Dataset:
    task = net.task
    if args.anchor_file:
        ds = dataset_from_csv(args.anchor_file, task, net.out_dim if task is Task.CLASSIFICATION else 0)
        if not ds.labeled:
            ds = pseudo_label(net, ds)
    else:
        spec = ckpt.meta.get("dataset")
        if spec is None:
            raise ValidationError("checkpoint has no dataset spec; pass --anchor-file")
        ds = make_dataset(spec)
        if args.pseudo_labels:
            ds = pseudo_label(net, ds.unlabeled())
    size = default_anchor_size(ds) if args.anchor_size is None else args.anchor_size
    if size < 1:
        raise ValidationError("anchor must contain at least one example")
    return select_anchor(ds, min(size, len(ds)), args.anchor_seed)


def cmd_bayesianize(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    net = ckpt.network()
    if ckpt.meta.get("bayes"):
        raise ValidationError("checkpoint is already Bayesianized")
    metric = MetricKind(args.metric or ("nll" if net.task is Task.CLASSIFICATION else "mse"))
    layers = net.adapted_indices()[-1:] if args.last_layer else None
    _, posterior = bayesianize_network(net, 0.0, args.family, layers)
    out = _writable(args.out)
    trace_rows, trace_json = [], {}

    if args.sigma is not None:
        if args.sigma < 0:
            raise ValidationError("--sigma must be non-negative")
        sigma = args.sigma
        trace_json = {"mode": "fixed", "result_sigma": sigma}
    else:
        cfg = SearchConfig(
            metric=metric,
            tolerance_mode=args.tolerance_mode,
            epsilon=args.epsilon,
            bracket_lo=args.lo,
            bracket_hi=args.hi,
            max_rounds=args.rounds,
            mc_samples=args.mc_samples,
            seed=args.seed,
            family=args.family,
        )
        anchor = _anchor(args, ckpt, net)
        if args.search == "binary":
            trace = binary_search_sigma(posterior, net, anchor, cfg)
            sigma = trace.result_sigma
            trace_rows = [
                (k + 1, p.sigma_q, p.value, p.accepted, p.lo, p.hi, p.width) for k, p in enumerate(trace.probes)
            ]
            trace_json = {
                "mode": "binary",
                "p0": trace.p0,
                "epsilon_abs": trace.epsilon_abs,
                "result_sigma": sigma,
                "none_accepted": trace.none_accepted,
                "probes": [p.__dict__ for p in trace.probes],
            }
        else:
            sigma, table = grid_interpolated_sigma(posterior, net, anchor, args.grid, None, cfg)
            trace_rows = [(k + 1, s, v, "", "", "", "") for k, (s, v) in enumerate(zip(table.sigmas, table.values))]
            trace_json = {
                "mode": "grid",
                "p0": table.p0,
                "target": table.target,
                "clamped": table.clamped,
                "result_sigma": sigma,
                "grid": table.sigmas,
                "values": table.values,
            }
        trace_json["metric"] = metric.value

    posterior = posterior.with_sigma(sigma)
    bayes_ckpt = ModelCheckpoint.from_network(regroup(net, posterior), ckpt.meta, posterior)
    out.write_text(checkpoint_to_json(bayes_ckpt), encoding="utf-8")
    prefix = Path(args.trace) if args.trace else out.with_suffix("")
    write_csv(f"{prefix}.trace.csv", ["round", "sigma_q", "metric", "accepted", "lo", "hi", "width"], trace_rows)
    Path(f"{prefix}.trace.json").write_text(json.dumps(trace_json, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"sigma_q={sigma:.17g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    net = ckpt.network()
    posterior = None if args.deterministic else ckpt.posterior()
    if args.data_file:
        ds = dataset_from_csv(args.data_file, net.task, net.out_dim if net.task is Task.CLASSIFICATION else 0)
    else:
        spec = dict(ckpt.meta.get("dataset") or {})
        if not spec:
            raise ValidationError("checkpoint has no dataset spec; pass --data-file")
        if args.data_seed is not None:
            spec["seed"] = args.data_seed
        ds = make_dataset(spec)
    if not ds.labeled:
        raise ValidationError("evaluation needs a labeled dataset")
    if args.metrics:
        kinds = [MetricKind(k) for k in args.metrics.split(",")]
    elif net.task is Task.CLASSIFICATION:
        kinds = [MetricKind.ACC, MetricKind.ECE, MetricKind.NLL]
    else:
        kinds = [MetricKind.MSE]
    if args.mc_samples < 1:
        raise ValidationError("--mc-samples must be >= 1")
    rows = []
    for kind in kinds:
        try:
            rep = evaluate(net, posterior, ds, kind, args.mc_samples, args.seed)
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
        rows.append((kind.value, rep.value, args.mc_samples, args.seed))
    text = csv_text(["kind", "value", "mc_samples", "seed"], rows)
    if args.out:
        _writable(args.out).write_text(text, encoding="utf-8", newline="")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_demo_toy(args) -> int:
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
    else:
        targs = argparse.Namespace(
            task="toy-cubic", data_seed=args.seed, seed=args.seed, hidden=16, depth=1, rank=1,
            activation=Activation.RELU, steps=args.steps, lr=args.lr, weight_decay=0.0,
        )
        ckpt, _ = train_checkpoint(targs)
    net = ckpt.network()
    if net.task is not Task.REGRESSION:
        raise ValidationError("demo-toy needs a regression checkpoint")
    out = _writable(args.out)
    xs = np.linspace(args.x_min, args.x_max, args.points)
    mle = forward(net, xs[:, None])[:, 0]
    _, posterior = bayesianize_network(net, 0.0, PosteriorFamily(args.family))
    band_rows, summary_rows = [], []
    for sigma in args.sigmas:
        post = posterior.with_sigma(sigma)
        cfg = PredictionConfig(args.mc_samples, args.seed)
        for row in prediction_band(net, post, xs, cfg):
            band_rows.append((sigma, row.x, row.mean, row.lo, row.hi))
        mean = mc_predict(net, post, xs[:, None], cfg).mean[:, 0]
        summary_rows.append((sigma, float(np.mean((mean - mle) ** 2))))
    write_csv(out, ["sigma_q", "x", "mean", "lo", "hi"], band_rows)
    summary = Path(args.summary) if args.summary else out.with_name(out.stem + ".summary.csv")
    write_csv(summary, ["sigma_q", "mean_sq_diff_vs_mle"], summary_rows)
    for sigma, diff in summary_rows:
        print(f"sigma_q={sigma:g} mean_sq_diff={diff:.6g}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_all(inject_fault=args.inject_fault)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} {r.detail}")
    if args.json:
        doc = {"checks": [r.__dict__ for r in results], "failures": sum(not r.passed for r in results)}
        _writable(args.json).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tfb-kit", description="Training-free Bayesianization of low-rank adapters")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a toy adapter checkpoint")
    p.add_argument("--task", choices=["toy-cubic", "toy-blobs"], default="toy-cubic")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-seed", type=int, default=None, help="defaults to --seed")
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--depth", type=int, default=1, help="number of hidden layers")
    p.add_argument("--rank", type=int, default=2, help="adapter rank (clamped to layer dims)")
    p.add_argument("--activation", choices=[a.value for a in Activation], default="relu")
    p.add_argument("--weight-decay", type=float, default=0.0, help="1e-5 gives the MAP variant")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bayesianize", help="regroup adapters and choose sigma_q")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None, help="prefix for trace CSV/JSON (default: --out without suffix)")
    p.add_argument("--search", choices=["binary", "grid"], default="binary")
    p.add_argument("--grid", type=_floats, default=list(DEFAULT_GRID))
    p.add_argument("--sigma", type=float, default=None, help="skip the search and use this sigma_q")
    p.add_argument("--metric", choices=[k.value for k in MetricKind], default=None)
    p.add_argument("--tolerance-mode", choices=[t.value for t in ToleranceMode], default="relative")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--lo", type=float, default=0.001)
    p.add_argument("--hi", type=float, default=0.015)
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--mc-samples", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--family", choices=[f.value for f in PosteriorFamily], default="final")
    p.add_argument("--last-layer", action="store_true", help="Bayesianize only the last adapted layer")
    p.add_argument("--anchor-file", default=None, help="CSV anchor; unlabeled files get pseudo-labels")
    p.add_argument("--pseudo-labels", action="store_true", help="drop training labels and pseudo-label")
    p.add_argument("--anchor-size", type=int, default=None, help="default min(500, dataset size)")
    p.add_argument("--anchor-seed", type=int, default=0)
    p.set_defaults(func=cmd_bayesianize)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-file", default=None)
    p.add_argument("--data-seed", type=int, default=None)
    p.add_argument("--metrics", default=None, help="comma-separated subset of " + ",".join(k.value for k in MetricKind))
    p.add_argument("--mc-samples", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true", help="ignore the posterior")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo-toy", help="cubic regression bands for several sigma_q")
    p.add_argument("--checkpoint", default=None, help="load instead of training")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--sigmas", type=_floats, default=list(TOY_SIGMAS))
    p.add_argument("--family", choices=[f.value for f in PosteriorFamily], default="fr")
    p.add_argument("--mc-samples", type=int, default=10)
    p.add_argument("--x-min", type=float, default=-6.0)
    p.add_argument("--x-max", type=float, default=6.0)
    p.add_argument("--points", type=int, default=121)
    p.add_argument("--out", required=True)
    p.add_argument("--summary", default=None)
    p.set_defaults(func=cmd_demo_toy)

    p = sub.add_parser("verify", help="run the oracle suite")
    p.add_argument("--inject-fault", action="store_true", help="corrupt one omega entry in the covariance check")
    p.add_argument("--json", default=None)
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "data_seed", "absent") is None and args.command == "train":
        args.data_seed = args.seed
    try:
        return args.func(args)
    except (RankDeficiencyError, TrainingDiverged, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
