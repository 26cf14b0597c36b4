"""Command-line front end: synth / pretrain / eval / rationale / sweep.

All commands read JSON configs, run deterministically for a given seed,
and overwrite their outputs identically when re-run. Exit codes: 0 on
success, 2 for configuration problems, 3 for dataset or artifact problems,
4 for numeric failures during training.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import os
import sys
from pathlib import Path

import numpy as np

from .autodiff import NumericError
from .datasets import PlantedMotifSpec, generate_planted_motif_dataset, load_tu_dataset
from .evaluation import (
    rationale_precision,
    run_ablation,
    linear_probe,
    embed_graphs,
    view_similarities,
)
from .graphs import GraphDataset, GraphFormatError, dataset_hash, load_dataset_json, save_dataset_json
from .rationale import export_rationales
from .training import (
    CheckpointFormatError,
    TrainConfig,
    load_checkpoint,
    normalize_variant,
    pretrain,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DATASET_SOURCES = ("tu", "json", "synthetic")


class ConfigError(ValueError):
    """The run configuration is malformed; reported before any compute."""


def _load_json(path, what: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} file not found: {p}")
    try:
        payload = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file {p} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"{what} file {p} must hold a JSON object")
    return payload


def _spec_from_dict(d: dict) -> PlantedMotifSpec:
    known = {f.name for f in dataclasses.fields(PlantedMotifSpec)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown synthetic-spec fields: {sorted(unknown)}")
    if "background_size_range" in d:
        d = dict(d, background_size_range=tuple(d["background_size_range"]))
    try:
        return PlantedMotifSpec(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"synthetic spec: {exc}") from exc


@dataclasses.dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    dataset_source: dict
    output_dir: Path


def load_run_config(path) -> RunConfig:
    """Parse and fully validate a run config before any compute happens.

    The file holds training fields (JSON key "lambda" maps onto the
    keyword-safe field name), a single dataset source, and an output
    directory. The RGCL_SEED environment variable, when set, overrides the
    configured seed.
    """
    payload = _load_json(path, "config")
    if "dataset" not in payload:
        raise ConfigError('config needs a "dataset" entry')
    source = payload.pop("dataset")
    if not isinstance(source, dict) or sorted(set(source) & set(DATASET_SOURCES)) == []:
        raise ConfigError(f'"dataset" must name one source of {DATASET_SOURCES}')
    picked = set(source) & set(DATASET_SOURCES)
    if len(picked) != 1:
        raise ConfigError(f'"dataset" must name exactly one source, got {sorted(picked)}')
    extra = set(source) - set(DATASET_SOURCES)
    if extra:
        raise ConfigError(f"unknown dataset keys: {sorted(extra)}")
    if "output_dir" not in payload:
        raise ConfigError('config needs an "output_dir" entry')
    output_dir = Path(payload.pop("output_dir"))

    if "lambda" in payload:
        payload["lam"] = payload.pop("lambda")
    for tuple_field in ("encoder_dims", "generator_dims", "generator_head"):
        if tuple_field in payload:
            payload[tuple_field] = tuple(payload[tuple_field])
    env_seed = os.environ.get("RGCL_SEED")
    if env_seed is not None:
        try:
            payload["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"RGCL_SEED must be an integer, got {env_seed!r}") from exc
    try:
        train = TrainConfig.from_dict(payload)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    if "synthetic" in source:
        synth = source["synthetic"]
        if not isinstance(synth, dict) or "count" not in synth:
            raise ConfigError('synthetic source needs {"spec": {...}, "count": M}')
        _spec_from_dict(dict(synth.get("spec", {})))  # validate eagerly
        if int(synth["count"]) < 1:
            raise ConfigError("synthetic count must be >= 1")
    return RunConfig(train=train, dataset_source=source, output_dir=output_dir)


def load_dataset_from_source(source: dict) -> GraphDataset:
    if "tu" in source:
        return load_tu_dataset(source["tu"])
    if "json" in source:
        path = Path(source["json"])
        if not path.exists():
            raise GraphFormatError(f"dataset file not found: {path}")
        return load_dataset_json(path)
    synth = source["synthetic"]
    spec = _spec_from_dict(dict(synth.get("spec", {})))
    return generate_planted_motif_dataset(spec, int(synth["count"]))


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    spec_dict = _load_json(args.spec, "spec") if args.spec else {}
    spec = _spec_from_dict(spec_dict)
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    ds = generate_planted_motif_dataset(spec, args.count)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset_json(ds, out)
    print(f"wrote {len(ds)} graphs to {out}")
    print(f"dataset hash: {dataset_hash(ds)}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    run = load_run_config(args.config)
    variant = normalize_variant(args.variant)
    dataset = load_dataset_from_source(run.dataset_source)
    state = pretrain(dataset, run.train, output_dir=run.output_dir, variant=variant)
    final = state.loss_history[-1] if state.loss_history else float("nan")
    print(f"pretrained {variant}: {state.step} steps, final loss {final:.6f}")
    print(f"artifacts in {run.output_dir}")
    return EXIT_OK


def _summary_table(rows: list[tuple[str, str]]) -> str:
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def _require_labels(dataset: GraphDataset) -> None:
    if any(g.label is None for g in dataset.graphs):
        raise GraphFormatError("dataset has unlabeled graphs; the probe needs labels")


def cmd_eval(args) -> int:
    run = load_run_config(args.config)
    variant = normalize_variant(args.variant)
    state, config = load_checkpoint(args.checkpoint, expected_config=run.train)
    dataset = load_dataset_from_source(run.dataset_source)
    _require_labels(dataset)
    emb = embed_graphs(dataset, state.encoder, config.encoder_config())
    if not np.isfinite(emb).all():
        raise NumericError("checkpoint produces non-finite embeddings")
    probe = linear_probe(emb, dataset.labels(), split_seed=config.seed)
    result = {
        "variant": variant,
        "seed": config.seed,
        "probe": probe.to_dict(),
        "rationale": None,
    }
    rows = [
        ("variant", variant),
        ("probe train acc", f"{probe.train_accuracy:.4f}"),
        ("probe test acc", f"{probe.test_accuracy:.4f}"),
    ]
    if all(g.rationale_mask is not None for g in dataset.graphs):
        score = rationale_precision(dataset, state.generator, config.generator_config())
        result["rationale"] = score.to_dict()
        rows.append(("rationale precision", f"{score.mean_precision:.4f}"))
        rows.append(("random baseline", f"{score.random_baseline:.4f}"))
    if variant != "no_independence":
        pos, comp = view_similarities(dataset, state, config, sample_seed=config.seed)
        result["view_cosines"] = {"positive": pos, "complement": comp}
        rows.append(("view cosine r1*r2", f"{pos:.4f}"))
        rows.append(("view cosine r1*c", f"{comp:.4f}"))
    run.output_dir.mkdir(parents=True, exist_ok=True)
    out_path = run.output_dir / "results.json"
    out_path.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(_summary_table(rows))
    print(f"results written to {out_path}")
    return EXIT_OK


def cmd_rationale(args) -> int:
    state, config = load_checkpoint(args.checkpoint)
    src = Path(args.dataset)
    if src.is_dir():
        dataset = load_tu_dataset(src)
    else:
        if not src.exists():
            raise GraphFormatError(f"dataset file not found: {src}")
        dataset = load_dataset_json(src)
    records = export_rationales(
        dataset, state.generator, config.generator_config(), rho=config.rho
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(records, indent=2) + "\n")
    print(f"exported per-node probabilities for {len(records)} graphs to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    run = load_run_config(args.config)
    grid = _load_json(args.grid, "grid")
    allowed = {"tau", "lambda", "rho", "seeds"}
    unknown = set(grid) - allowed
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)} (allowed: {sorted(allowed)})")
    taus = list(grid.get("tau", [run.train.tau]))
    lams = list(grid.get("lambda", [run.train.lam]))
    rhos = list(grid.get("rho", [run.train.rho]))
    seeds = [int(s) for s in grid.get("seeds", [run.train.seed])]
    for name, values in (("tau", taus), ("lambda", lams), ("rho", rhos)):
        if not values:
            raise ConfigError(f"grid entry {name!r} is empty")

    dataset = load_dataset_from_source(run.dataset_source)
    _require_labels(dataset)
    rows = []
    for tau, lam, rho, seed in itertools.product(taus, lams, rhos, seeds):
        try:
            cell_cfg = dataclasses.replace(
                run.train, tau=float(tau), lam=float(lam), rho=float(rho), seed=seed
            )
        except ValueError as exc:
            raise ConfigError(f"grid cell tau={tau} lambda={lam} rho={rho}: {exc}") from exc
        cell_dir = run.output_dir / f"tau{tau}_lam{lam}_rho{rho}_seed{seed}"
        result = run_ablation("full", dataset, cell_cfg, output_dir=cell_dir)
        (cell_dir / "results.json").write_text(
            json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"
        )
        precision = "" if result.rationale is None else result.rationale.mean_precision
        rows.append([tau, lam, rho, seed, result.probe.test_accuracy, precision])
        print(
            f"cell tau={tau} lambda={lam} rho={rho} seed={seed}: "
            f"probe {result.probe.test_accuracy:.4f}"
        )

    run.output_dir.mkdir(parents=True, exist_ok=True)
    csv_path = run.output_dir / "sweep.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["tau", "lambda", "rho", "seed", "probe_test_acc", "rationale_precision"]
        )
        writer.writerows(rows)
    print(f"aggregate written to {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rgcl",
        description="Rationale-aware graph contrastive learning at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-motif dataset")
    p.add_argument("--spec", help="JSON file of generator knobs (optional)")
    p.add_argument("--count", type=int, required=True, help="number of graphs")
    p.add_argument("--out", required=True, help="output dataset JSON path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="run self-supervised pre-training")
    p.add_argument("--config", required=True)
    p.add_argument("--variant", default="full",
                   help="full | no_rv | no_i (ablations)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="probe + rationale scores for a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--variant", default="full")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rationale", help="export per-node probabilities")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True,
                   help="dataset JSON file or TU-format directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rationale)

    p = sub.add_parser("sweep", help="grid over tau / lambda / rho")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        if isinstance(exc, (GraphFormatError, CheckpointFormatError)):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
