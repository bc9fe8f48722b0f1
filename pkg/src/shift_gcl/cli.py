"""Command-line harness: dataset generation, pretraining, ablation tables,
and the analytic special-case check.

Exit codes: 0 success, 2 usage or config error, 3 numerical failure.
Every output file embeds the digest of the resolved configuration; an
artifact written under a different digest is never overwritten without
--force.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .datasets import (CbasParams, Dataset, SpuriousParams, generate_cbas,
                       generate_spurious, load_dataset, save_dataset)
from .digest import config_digest
from .encoders import EncoderConfig, encode
from .evaluation import Metrics, ProbeConfig, evaluate, linear_probe, selection_metric
from .theory import appendix_case
from .training import (VARIANTS, Checkpoint, NumericalError, TrainConfig,
                       apply_variant, checkpoint_model, pretrain)
from .augment import ViewParams


class ConfigError(ValueError):
    """Invalid configuration or usage; maps to exit code 2."""


# ---------------------------------------------------------------------------
# config loading

_TRAIN_INT = {"epochs", "prototype_steps", "ascent_steps", "num_prototypes",
              "sinkhorn_iters", "seed", "eval_every"}
_TRAIN_FLOAT = {"lr", "prototype_lr", "ascent_step_size", "gamma", "tau",
                "lambda_sinkhorn"}
_TRAIN_KEYS = _TRAIN_INT | _TRAIN_FLOAT | {"view1", "view2"}
_ENCODER_KEYS = {"kind", "num_layers", "hidden_dim"}
_PROBE_KEYS = {"probe_epochs", "probe_lr", "seed"}
_TOP_KEYS = {"train", "encoder", "probe", "dataset", "variant"}


def _want_int(value, path: str) -> int:
    if type(value) is not int:
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def _want_float(value, path: str) -> float:
    if type(value) is bool or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _check_unknown(section: dict, allowed: set, path: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown config key: {path}{key}")


def _view_params(section, path: str) -> ViewParams:
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected an object with p_f, p_e")
    _check_unknown(section, {"p_f", "p_e"}, path + ".")
    kwargs = {k: _want_float(v, f"{path}.{k}") for k, v in section.items()}
    try:
        return ViewParams(**kwargs)
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from None


@dataclasses.dataclass
class ResolvedConfig:
    train: TrainConfig
    encoder: dict
    probe: ProbeConfig
    dataset: str | None
    variant: str


def load_config(path) -> ResolvedConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _check_unknown(raw, _TOP_KEYS, "")

    train_raw = raw.get("train", {})
    if not isinstance(train_raw, dict):
        raise ConfigError("train: expected an object")
    _check_unknown(train_raw, _TRAIN_KEYS, "train.")
    kwargs = {}
    for key, value in train_raw.items():
        if key in ("view1", "view2"):
            kwargs[key] = _view_params(value, f"train.{key}")
        elif key in _TRAIN_INT:
            kwargs[key] = _want_int(value, f"train.{key}")
        else:
            kwargs[key] = _want_float(value, f"train.{key}")
    try:
        train = TrainConfig(**kwargs)
    except ValueError as e:
        raise ConfigError(f"train: {e}") from None

    enc_raw = raw.get("encoder", {})
    if not isinstance(enc_raw, dict):
        raise ConfigError("encoder: expected an object")
    _check_unknown(enc_raw, _ENCODER_KEYS, "encoder.")
    encoder = {"kind": "gcn", "num_layers": 2, "hidden_dim": 32}
    for key, value in enc_raw.items():
        if key == "kind":
            if value not in ("gcn", "sage-mean"):
                raise ConfigError(f"encoder.kind: must be 'gcn' or 'sage-mean', got {value!r}")
            encoder[key] = value
        else:
            encoder[key] = _want_int(value, f"encoder.{key}")

    probe_raw = raw.get("probe", {})
    if not isinstance(probe_raw, dict):
        raise ConfigError("probe: expected an object")
    _check_unknown(probe_raw, _PROBE_KEYS, "probe.")
    probe_kwargs = {}
    for key, value in probe_raw.items():
        if key in ("probe_epochs", "seed"):
            probe_kwargs[key] = _want_int(value, f"probe.{key}")
        else:
            probe_kwargs[key] = _want_float(value, f"probe.{key}")
    try:
        probe = ProbeConfig(**probe_kwargs)
    except ValueError as e:
        raise ConfigError(f"probe: {e}") from None

    dataset = raw.get("dataset")
    if dataset is not None and not isinstance(dataset, str):
        raise ConfigError("dataset: expected a path string")
    variant = raw.get("variant", "mario")
    if variant not in VARIANTS:
        raise ConfigError(f"variant: must be one of {VARIANTS}, got {variant!r}")
    return ResolvedConfig(train=train, encoder=encoder, probe=probe,
                          dataset=dataset, variant=variant)


def resolved_config_dict(train: TrainConfig, encoder: dict, probe: ProbeConfig) -> dict:
    return {"train": dataclasses.asdict(train), "encoder": dict(encoder),
            "probe": dataclasses.asdict(probe)}


# ---------------------------------------------------------------------------
# artifact io

def _read_embedded_digest(path: Path) -> str | None:
    try:
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".jsonl" or path.suffix == ".csv":
            first = text.splitlines()[0] if text else ""
            if first.startswith("# config_digest="):
                return first.split("=", 1)[1].strip()
            return json.loads(first).get("config_digest")
        doc = json.loads(text)
        if isinstance(doc, dict):
            return doc.get("config_digest") or doc.get("meta", {}).get("config_digest")
    except (OSError, json.JSONDecodeError, IndexError, AttributeError):
        return None
    return None


def _guard_artifact(path: Path, digest: str, force: bool) -> None:
    """Refuse to overwrite an artifact produced under a different config."""
    if not path.exists() or force:
        return
    existing = _read_embedded_digest(path)
    if existing != digest:
        raise ConfigError(f"{path} exists with a different config digest; "
                          f"pass --force to overwrite")


def _refuse_existing(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigError(f"{path} already exists; pass --force to overwrite")


def _metrics_dict(metrics: dict[str, Metrics]) -> dict:
    return {split: dataclasses.asdict(m) for split, m in metrics.items()}


def save_checkpoint(ckpt: Checkpoint, encoder: dict, path: Path) -> None:
    payload = {
        "config_digest": ckpt.config_digest,
        "epoch": ckpt.epoch,
        "encoder": dict(encoder),
        "params": {name: {"shape": list(arr.shape), "data": arr.tolist()}
                   for name, arr in ckpt.params.items()},
        "prototypes": ckpt.prototypes.tolist(),
        "rng_state": ckpt.rng_state,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True)


def load_checkpoint(path) -> tuple[Checkpoint, dict]:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    params = {}
    for name, entry in payload["params"].items():
        arr = np.asarray(entry["data"], dtype=np.float64)
        if list(arr.shape) != entry["shape"]:
            raise ValueError(f"checkpoint {path}: shape mismatch for {name!r}")
        params[name] = arr
    ckpt = Checkpoint(params=params,
                      prototypes=np.asarray(payload["prototypes"], dtype=np.float64),
                      epoch=payload["epoch"],
                      rng_state=payload["rng_state"],
                      config_digest=payload["config_digest"])
    return ckpt, payload.get("encoder", {})


# ---------------------------------------------------------------------------
# commands

def cmd_generate(args) -> int:
    if args.kind == "cbas":
        params = CbasParams(base_nodes=args.base_nodes, num_houses=args.num_houses,
                            shift_kind=args.shift, spurious_strength=args.rho,
                            noise_std=args.noise_std, seed=args.seed)
        digest = config_digest({"kind": "cbas", **dataclasses.asdict(params)})
        out = Path(args.out)
        _refuse_existing(out, args.force)
        ds = generate_cbas(params)
        ds.meta["config_digest"] = digest
        out.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(ds, out)
        counts = np.bincount(ds.labels, minlength=ds.num_classes)
        print(f"wrote {out}: {ds.graph.n} nodes, {ds.graph.num_edges} edges, "
              f"{ds.num_classes} classes {counts.tolist()}, shift={params.shift_kind}")
        return 0

    params = SpuriousParams(n_nodes=args.n_nodes, d1=args.d1, d2=args.d2,
                            num_envs=args.num_envs, num_classes=args.num_classes,
                            seed=args.seed)
    digest = config_digest({"kind": "spurious", **dataclasses.asdict(params)})
    out_dir = Path(args.out)
    manifest_path = out_dir / "manifest.json"
    env_paths = [out_dir / f"env_{e:02d}.json" for e in range(params.num_envs)]
    for p in [manifest_path, *env_paths]:
        _refuse_existing(p, args.force)
    out_dir.mkdir(parents=True, exist_ok=True)

    envs = generate_spurious(params)
    files = {}
    for (env, ds), path in zip(envs, env_paths):
        ds.meta["config_digest"] = digest
        save_dataset(ds, path)
        files[str(env)] = {"file": path.name, "role": ds.meta["role"]}
    manifest = {"config_digest": digest, "kind": "spurious",
                "params": dataclasses.asdict(params), "files": files}
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
    first = envs[0][1]
    print(f"wrote {params.num_envs} environment graphs to {out_dir}: "
          f"{first.graph.n} nodes, {first.graph.num_edges} edges, "
          f"{first.num_classes} classes")
    return 0


def _evaluate_checkpoint(ckpt: Checkpoint, enc_cfg: EncoderConfig, ds: Dataset,
                         probe: ProbeConfig) -> dict[str, Metrics]:
    enc, _ = checkpoint_model(ckpt, enc_cfg)
    emb = encode(ds.graph, enc, enc_cfg).values
    clf = linear_probe(emb, ds.labels, ds.masks.train, probe)
    return evaluate(clf, emb, ds.labels, ds.masks)


def _resolve_run(cfg: ResolvedConfig, variant: str, seed: int | None,
                 dataset: Dataset) -> tuple[TrainConfig, EncoderConfig, str]:
    train = cfg.train if seed is None else dataclasses.replace(cfg.train, seed=seed)
    train = apply_variant(train, variant)
    enc_cfg = EncoderConfig(input_dim=dataset.graph.feature_dim, **cfg.encoder)
    resolved = resolved_config_dict(train, {**cfg.encoder,
                                            "input_dim": enc_cfg.input_dim}, cfg.probe)
    return train, enc_cfg, config_digest(resolved)


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    dataset_path = args.dataset or cfg.dataset
    if dataset_path is None:
        raise ConfigError("no dataset given: pass --dataset or set 'dataset' in the config")
    variant = args.variant or cfg.variant
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
    try:
        ds = load_dataset(dataset_path)
    except FileNotFoundError:
        raise ConfigError(f"dataset file not found: {dataset_path}") from None
    except (ValueError, KeyError) as e:
        raise ConfigError(f"dataset file {dataset_path}: {e}") from None

    out_dir = Path(args.out)
    paths = {name: out_dir / name for name in
             ("log.jsonl", "checkpoint_best_id.json", "checkpoint_best_ood.json",
              "results.json")}

    train, enc_cfg, digest = _resolve_run(cfg, variant, args.seed, ds)
    for p in paths.values():
        _guard_artifact(p, digest, args.force)
    result = pretrain(ds, train, encoder_config=enc_cfg,
                      probe_config=cfg.probe, config_digest=digest)
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(paths["log.jsonl"], "w", encoding="utf-8") as f:
        f.write(json.dumps({"config_digest": digest}, sort_keys=True) + "\n")
        for record in result.log:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    save_checkpoint(result.best_id, cfg.encoder, paths["checkpoint_best_id.json"])
    save_checkpoint(result.best_ood, cfg.encoder, paths["checkpoint_best_ood.json"])

    results = {"config_digest": digest}
    for name, ckpt in (("best_id", result.best_id), ("best_ood", result.best_ood)):
        metrics = _evaluate_checkpoint(ckpt, enc_cfg, ds, cfg.probe)
        results[name] = {"epoch": ckpt.epoch, "metrics": _metrics_dict(metrics)}
    with open(paths["results.json"], "w", encoding="utf-8") as f:
        json.dump(results, f, sort_keys=True, indent=2)

    for name in ("best_id", "best_ood"):
        mets = results[name]["metrics"]
        summary = {split: round(m["accuracy"], 4) for split, m in mets.items()}
        print(f"{name}: epoch {results[name]['epoch']}, accuracy {summary}")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0


def _ablate_cell(payload) -> tuple[str, int, float, float]:
    cfg, variant, seed, dataset = payload
    train, enc_cfg, digest = _resolve_run(cfg, variant, seed, dataset)
    result = pretrain(dataset, train, encoder_config=enc_cfg,
                      probe_config=cfg.probe, config_digest=digest)
    num_classes = dataset.num_classes
    id_metrics = _evaluate_checkpoint(result.best_id, enc_cfg, dataset, cfg.probe)
    ood_metrics = _evaluate_checkpoint(result.best_ood, enc_cfg, dataset, cfg.probe)
    id_test = selection_metric(id_metrics["id_test"], num_classes) \
        if "id_test" in id_metrics else float("nan")
    ood_test = selection_metric(ood_metrics["ood_test"], num_classes) \
        if "ood_test" in ood_metrics else float("nan")
    return variant, seed, id_test, ood_test


def _worker_count(n_cells: int) -> int:
    cap = os.environ.get("SHIFT_GCL_THREADS")
    if cap is not None:
        try:
            cap_n = int(cap)
        except ValueError:
            raise ConfigError(f"SHIFT_GCL_THREADS must be an integer, got {cap!r}") from None
        if cap_n < 1:
            raise ConfigError("SHIFT_GCL_THREADS must be >= 1")
        return min(cap_n, n_cells)
    return min(os.cpu_count() or 1, n_cells)


def cmd_ablate(args) -> int:
    seeds = _parse_seeds(args.seeds)
    if len(seeds) < 2:
        raise ConfigError("ablate needs at least 2 seeds")
    cfg = load_config(args.config)
    dataset_path = args.dataset or cfg.dataset
    if dataset_path is None:
        raise ConfigError("no dataset given: pass --dataset or set 'dataset' in the config")
    try:
        ds = load_dataset(dataset_path)
    except FileNotFoundError:
        raise ConfigError(f"dataset file not found: {dataset_path}") from None

    table_digest = config_digest({
        **resolved_config_dict(cfg.train, cfg.encoder, cfg.probe),
        "seeds": seeds, "variants": list(VARIANTS),
    })
    out_dir = Path(args.out)
    csv_path = out_dir / "ablation.csv"
    json_path = out_dir / "ablation.json"
    for p in (csv_path, json_path):
        _guard_artifact(p, table_digest, args.force)
    out_dir.mkdir(parents=True, exist_ok=True)

    cells = [(cfg, variant, seed, ds) for variant in VARIANTS for seed in seeds]
    workers = _worker_count(len(cells))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_ablate_cell, cells))
    else:
        outcomes = [_ablate_cell(c) for c in cells]

    by_cell = {(v, s): (id_t, ood_t) for v, s, id_t, ood_t in outcomes}
    rows = {}
    for variant in VARIANTS:
        id_vals = np.array([by_cell[(variant, s)][0] for s in seeds])
        ood_vals = np.array([by_cell[(variant, s)][1] for s in seeds])
        rows[variant] = {
            "id_test_mean": float(id_vals.mean()),
            "id_test_std": float(id_vals.std(ddof=1)),
            "ood_test_mean": float(ood_vals.mean()),
            "ood_test_std": float(ood_vals.std(ddof=1)),
        }

    columns = ("id_test_mean", "id_test_std", "ood_test_mean", "ood_test_std")
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write(f"# config_digest={table_digest}\n")
        f.write("variant," + ",".join(columns) + "\n")
        for variant in VARIANTS:
            f.write(variant + "," + ",".join(repr(rows[variant][c]) for c in columns) + "\n")
    doc = {"config_digest": table_digest, "seeds": seeds,
           "rows": rows,
           "cells": {f"{v}/{s}": {"id_test": by_cell[(v, s)][0],
                                  "ood_test": by_cell[(v, s)][1]}
                     for v in VARIANTS for s in seeds}}
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=2)

    print(f"{'variant':<8} " + " ".join(f"{c:>14}" for c in columns))
    for variant in VARIANTS:
        print(f"{variant:<8} " + " ".join(f"{rows[variant][c]:>14.4f}" for c in columns))
    print(f"wrote {csv_path}, {json_path}")
    return 0


def cmd_theory_check(args) -> int:
    result = appendix_case(args.t, args.samples, args.seed)
    print(json.dumps(dataclasses.asdict(result), sort_keys=True, indent=2))
    return 0


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = sorted({int(tok) for tok in text.split(",") if tok.strip() != ""})
    except ValueError:
        raise ConfigError(f"--seeds must be a comma-separated integer list, got {text!r}") from None
    if not seeds:
        raise ConfigError("--seeds must name at least one seed")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shift-gcl",
        description="Shift-robust graph contrastive learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a synthetic shift dataset")
    gen_sub = gen.add_subparsers(dest="kind", required=True)
    cbas = gen_sub.add_parser("cbas", help="scale-free base graph with house motifs")
    cbas.add_argument("--out", required=True, help="output dataset file (JSON)")
    cbas.add_argument("--seed", type=int, default=0)
    cbas.add_argument("--shift", choices=("concept", "covariate"), default="concept")
    cbas.add_argument("--rho", type=float, default=0.9,
                      help="spurious color-label correlation strength")
    cbas.add_argument("--noise-std", type=float, default=0.05)
    cbas.add_argument("--base-nodes", type=int, default=300)
    cbas.add_argument("--num-houses", type=int, default=80)
    cbas.add_argument("--force", action="store_true")
    spur = gen_sub.add_parser("spurious", help="multi-environment spurious-feature suite")
    spur.add_argument("--out", required=True, help="output directory")
    spur.add_argument("--seed", type=int, default=0)
    spur.add_argument("--n-nodes", type=int, default=400)
    spur.add_argument("--d1", type=int, default=8)
    spur.add_argument("--d2", type=int, default=8)
    spur.add_argument("--num-envs", type=int, default=10)
    spur.add_argument("--num-classes", type=int, default=3)
    spur.add_argument("--force", action="store_true")

    pre = sub.add_parser("pretrain", help="run one pretraining experiment")
    pre.add_argument("--config", required=True)
    pre.add_argument("--dataset", default=None)
    pre.add_argument("--out", required=True)
    pre.add_argument("--variant", choices=VARIANTS, default=None)
    pre.add_argument("--seed", type=int, default=None,
                     help="override the config's training seed")
    pre.add_argument("--force", action="store_true")

    abl = sub.add_parser("ablate", help="variant x seed ablation table")
    abl.add_argument("--config", required=True)
    abl.add_argument("--dataset", default=None)
    abl.add_argument("--seeds", required=True, help="comma-separated seed list")
    abl.add_argument("--out", required=True)
    abl.add_argument("--force", action="store_true")

    theory = sub.add_parser("theory-check", help="special-case Monte Carlo check")
    theory.add_argument("--t", type=float, default=0.1)
    theory.add_argument("--samples", type=int, default=1_000_000)
    theory.add_argument("--seed", type=int, default=0)
    return parser


_HANDLERS = {"generate": cmd_generate, "pretrain": cmd_pretrain,
             "ablate": cmd_ablate, "theory-check": cmd_theory_check}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
