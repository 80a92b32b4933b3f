"""Command line: synth, train, eval, ablate.

Exit codes: 0 success, 2 config/usage error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .evalkit import (
    class_entropy_score,
    clustering_scores,
    edge_density_score,
    f1_scores,
    fuse_predictions,
    kmeans,
    probe_fit_predict,
    random_split,
)
from .deca import modularity
from .graph import (
    ConfigError,
    GraphFormatError,
    MultiplexGraph,
    SbmConfig,
    adjacency_matrix,
    dataset_fingerprint,
    load_dataset,
    save_dataset,
    sbm_generate,
)
from .ndtensor import NumericError
from .resc import TrainConfig, TrainResult, communities, embed, train

log = logging.getLogger("commcontrast")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# file helpers


def _read_json(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a flat JSON object")
    return data


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_config(path: str | None, seed: int | None = None) -> TrainConfig:
    data = _read_json(path) if path else {}
    if seed is not None:
        data["seed"] = seed
    return TrainConfig.from_dict(data)


def write_embeddings(path: Path, z: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("node," + ",".join(f"d{j}" for j in range(z.shape[1])) + "\n")
        for i, row in enumerate(z):
            fh.write(f"{i}," + ",".join(repr(float(x)) for x in row) + "\n")


def read_embeddings(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"embeddings file not found: {path}")
    rows = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw or (lineno == 1 and raw.startswith("node")):
                continue
            parts = raw.split(",")
            try:
                rows[int(parts[0])] = [float(x) for x in parts[1:]]
            except ValueError:
                raise GraphFormatError("non-numeric embedding field", path, lineno) from None
    ids = sorted(rows)
    if ids != list(range(len(ids))):
        raise GraphFormatError("node ids must be 0..N-1", path)
    return np.array([rows[i] for i in ids], dtype=np.float64)


def save_params(path: Path, params: dict[str, np.ndarray]) -> None:
    _write_json(path, {k: v.tolist() for k, v in sorted(params.items())})


def load_params(path: Path) -> dict[str, np.ndarray]:
    return {k: np.array(v, dtype=np.float64) for k, v in _read_json(path).items()}


# ---------------------------------------------------------------------------
# evaluation


def _mean_std(values: list[float | None]) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def evaluate_embeddings(
    mg: MultiplexGraph,
    z: np.ndarray,
    cfg: TrainConfig,
    per_view: Sequence[np.ndarray] | None = None,
) -> dict:
    """Probe, K-means, NMI/ARI, ED/CH and modularity averaged over ``cfg.eval_seeds`` splits."""
    n = mg.num_nodes
    if z.shape[0] != n:
        raise GraphFormatError(f"embeddings have {z.shape[0]} rows, dataset has {n} nodes")
    labels = mg.labels
    k = mg.num_classes if labels is not None else (cfg.num_communities or None)
    if k is None:
        raise ConfigError("unlabeled dataset: set num_communities for K-means")
    adjs = [adjacency_matrix(e, n) for e in mg.views]
    per_seed = []
    for s in range(cfg.eval_seeds):
        seed = cfg.seed + s
        row: dict = {"seed": seed}
        clusters, _ = kmeans(z, k, seed)
        row["ed"] = float(np.mean([edge_density_score(a, clusters, k) for a in adjs]))
        mods = [modularity(a, clusters) for a in adjs if a.sum() > 0]
        row["modularity"] = float(np.mean(mods)) if mods else None
        if labels is None:
            row.update(micro_f1=None, macro_f1=None, nmi=None, ari=None, ch=None)
        else:
            split = random_split(n, cfg.train_fraction, seed)
            pred, conf = probe_fit_predict(z, labels[split.train], split, k)
            row["micro_f1"], row["macro_f1"] = f1_scores(pred, labels[split.test])
            row["nmi"], row["ari"] = clustering_scores(clusters, labels)
            row["ch"] = class_entropy_score(clusters, labels, k)
            if per_view is not None:
                outs = [probe_fit_predict(zv, labels[split.train], split, k) for zv in per_view]
                row["per_view_micro_f1"] = [f1_scores(p, labels[split.test])[0] for p, _ in outs]
                fused = fuse_predictions(outs)
                row["fused_micro_f1"], row["fused_macro_f1"] = f1_scores(fused, labels[split.test])
        per_seed.append(row)
    metrics: dict = {}
    keys = ["micro_f1", "macro_f1", "nmi", "ari", "ed", "ch", "modularity"]
    if per_view is not None and labels is not None:
        keys += ["fused_micro_f1", "fused_macro_f1"]
    for key in keys:
        metrics[key], metrics[f"{key}_std"] = _mean_std([r.get(key) for r in per_seed])
    metrics["per_seed"] = per_seed
    return metrics


# ---------------------------------------------------------------------------
# commands


def cmd_synth(config: str | None, out: str, seed: int | None = None) -> Path:
    data = _read_json(config) if config else {}
    if seed is not None:
        data["seed"] = seed
    cfg = SbmConfig.from_dict(data)
    g = sbm_generate(cfg)
    d = save_dataset(g, out)
    with open(d / "blocks.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{int(b)}\n" for b in g.labels)
    log.info("wrote %d nodes, %d edges to %s", g.num_nodes, g.num_edges, d)
    return d


ARTIFACTS = {
    "manifest": "manifest.json",
    "epoch_log": "epochs.jsonl",
    "params": "params.json",
    "embeddings": "embeddings.csv",
    "communities": "communities.csv",
    "metrics": "metrics.json",
}


def run_training(dataset: str | Path, cfg: TrainConfig, out: str | Path, *, quiet: bool = True) -> dict:
    """Train, export artifacts, evaluate. Returns the metrics dict."""
    mg = load_dataset(dataset)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    algorithm = "single" if mg.num_views == 1 else "multiplex"
    artifacts = dict(ARTIFACTS)
    if algorithm == "multiplex":
        for r in range(mg.num_views):
            artifacts[f"embeddings_view{r}"] = f"embeddings_view{r}.csv"
    from .resc import view_pairs

    pairs = [(0, 1)] if algorithm == "single" else view_pairs(mg.num_views, cfg.view_pairs)
    manifest = {
        "tool": "commcontrast",
        "version": __version__,
        "command": "train",
        "algorithm": algorithm,
        "pair_count": len(pairs),
        "root_seed": cfg.seed,
        "dataset": {"path": str(Path(dataset).resolve()), "fingerprint": dataset_fingerprint(dataset)},
        "config": cfg.to_dict(),
        "artifacts": artifacts,
    }
    _write_json(out / artifacts["manifest"], manifest)

    def progress(rec):
        if not quiet and (rec.epoch % 50 == 0 or rec.epoch == cfg.epochs - 1):
            log.info("epoch %d  L=%.4f  node=%.4f  deca=%.4f  com=%.4f  alpha=%.3f", rec.epoch, rec.total, rec.l_node, rec.l_deca, rec.l_com, rec.alpha)

    result: TrainResult = train(mg, cfg, out / artifacts["epoch_log"], progress)
    save_params(out / artifacts["params"], result.params)
    views = [mg.view(r) for r in range(mg.num_views)]
    zs = [embed(v, result.params, cfg) for v in views]
    z = zs[0] if len(zs) == 1 else np.mean(zs, axis=0)
    write_embeddings(out / artifacts["embeddings"], z)
    if algorithm == "multiplex":
        for r, zr in enumerate(zs):
            write_embeddings(out / artifacts[f"embeddings_view{r}"], zr)
    hard = communities(views[0], result.params, cfg, 0)
    (out / artifacts["communities"]).write_text("".join(f"{int(h)}\n" for h in hard), encoding="utf-8")

    metrics = evaluate_embeddings(mg, z, cfg, zs if algorithm == "multiplex" else None)
    adj0 = adjacency_matrix(mg.views[0], mg.num_nodes)
    deca_metrics = {"ed": edge_density_score(adj0, hard, result.num_communities)}
    if mg.labels is not None:
        deca_metrics["nmi"], deca_metrics["ari"] = clustering_scores(hard, mg.labels)
        deca_metrics["ch"] = class_entropy_score(hard, mg.labels, result.num_communities)
    metrics["communities"] = deca_metrics
    _write_json(out / artifacts["metrics"], metrics)
    return metrics


def cmd_train(dataset: str | None, config: str | None, out: str, seed: int | None = None, manifest: str | None = None, quiet: bool = False) -> dict:
    if manifest is not None:
        m = _read_json(manifest)
        cfg = TrainConfig.from_dict(m["config"])
        if seed is not None:
            cfg.seed = seed
        dataset = dataset or m["dataset"]["path"]
        if dataset_fingerprint(dataset) != m["dataset"]["fingerprint"]:
            raise ConfigError(f"dataset at {dataset} does not match the manifest fingerprint")
    else:
        if dataset is None:
            raise UsageError("train needs a dataset directory or --manifest")
        cfg = load_config(config, seed)
    return run_training(dataset, cfg, out, quiet=quiet)


def cmd_eval(dataset: str, embeddings: str, config: str | None, out: str, seed: int | None = None) -> dict:
    cfg = load_config(config, seed)
    mg = load_dataset(dataset)
    z = read_embeddings(embeddings)
    per_view = None
    if mg.num_views > 1:
        base = Path(embeddings).parent
        paths = [base / f"embeddings_view{r}.csv" for r in range(mg.num_views)]
        if all(p.is_file() for p in paths):
            per_view = [read_embeddings(p) for p in paths]
    metrics = evaluate_embeddings(mg, z, cfg, per_view)
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "metrics.json", metrics)
    return metrics


def parse_variants(spec: str | None) -> list[list[str]]:
    if not spec:
        return []
    variants = []
    for item in spec.split(";"):
        item = item.strip()
        if not item:
            continue
        terms = [t.strip() for t in item.replace(",", "+").split("+") if t.strip()]
        bad = [t for t in terms if t not in ("node", "deca", "com")]
        if bad:
            raise UsageError(f"unknown loss term(s) {bad} in variant {item!r}")
        variants.append(sorted(set(terms), key=("node", "deca", "com").index))
    return variants


def cmd_ablate(dataset: str, config: str | None, out: str, variants: str | None = None, ks: str | None = None, seed: int | None = None, quiet: bool = True) -> list[dict]:
    base = load_config(config, seed)
    var_list = parse_variants(variants)
    try:
        k_list = [int(k) for k in ks.split(",") if k.strip()] if ks else []
    except ValueError:
        raise UsageError(f"--ks must be a comma separated list of integers, got {ks!r}") from None
    if not var_list and not k_list:
        raise UsageError("ablate needs at least one variant (--variants) or community count (--ks)")
    var_list = var_list or [list(base.loss_terms)]
    k_choices: list[int | None] = list(k_list) or [base.num_communities]
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for terms in var_list:
        for k in k_choices:
            cfg = TrainConfig.from_dict({**base.to_dict(), "loss_terms": terms, "num_communities": k})
            name = "+".join(terms) + (f"_k{k}" if k is not None else "")
            metrics = run_training(dataset, cfg, outdir / name, quiet=quiet)
            row = {"variant": "+".join(terms), "num_communities": k}
            row.update({key: val for key, val in metrics.items() if key not in ("per_seed",)})
            rows.append(row)
            log.info("%s: micro_f1=%s nmi=%s", name, row.get("micro_f1"), row.get("nmi"))
    _write_json(outdir / "ablation.json", rows)
    cols = ["variant", "num_communities", "micro_f1", "macro_f1", "nmi", "ari", "ed", "ch", "modularity"]
    with open(outdir / "ablation.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join("" if r.get(c) is None else str(r.get(c)) for c in cols) + "\n")
    return rows


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    parser = argparse.ArgumentParser(prog="commcontrast", description="Community-aware graph contrastive learning.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="generate an SBM dataset")

    p = sub.add_parser("train", parents=[common], help="train and export artifacts")
    p.add_argument("dataset", nargs="?", help="dataset directory")
    p.add_argument("--manifest", help="re-run from a previous run's manifest.json")

    p = sub.add_parser("eval", parents=[common], help="evaluate exported embeddings")
    p.add_argument("dataset")
    p.add_argument("--embeddings", required=True)

    p = sub.add_parser("ablate", parents=[common], help="loss-term and community-count sweeps")
    p.add_argument("dataset")
    p.add_argument("--variants", help="e.g. 'node;node+com;node+deca+com'")
    p.add_argument("--ks", help="community counts, e.g. '2,4,6,8'")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s", force=True)
    try:
        if args.command == "synth":
            cmd_synth(args.config, args.out, args.seed)
        elif args.command == "train":
            cmd_train(args.dataset, args.config, args.out, args.seed, args.manifest, args.quiet)
        elif args.command == "eval":
            cmd_eval(args.dataset, args.embeddings, args.config, args.out, args.seed)
        elif args.command == "ablate":
            cmd_ablate(args.dataset, args.config, args.out, args.variants, args.ks, args.seed, args.quiet)
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (GraphFormatError, OSError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (ConfigError, UsageError, TypeError, KeyError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
