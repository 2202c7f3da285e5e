"""Command-line entry point: data generation, staged training, clustering
inspection, and verification evaluation.

Exit codes are a stable contract:
 0 success, 2 usage/config, 3 I/O, 4 stage order, 5 numeric divergence,
 6 clustering failure, 7 degenerate embeddings.
The environment variable IMAN_SEED overrides the configured seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .clustering import ClusterConfig, cluster_pipeline
from .config import RunConfig, config_hash, load_config
from .data import (
    Dataset,
    fmt_float,
    generate_domains,
    load_csv,
    load_labels,
    save_csv,
    save_labels,
)
from .errors import (
    ClusteringError,
    ConfigError,
    DegenerateFeatureError,
    NumericError,
    ParseError,
    SchemaError,
    StageOrderError,
)
from .evaluation import (
    PairList,
    all_pairs,
    discrepancy_report,
    embed,
    projection_2d,
    roc_and_tar,
    score_pairs,
    select_difficult_pairs,
    tenfold_accuracy,
    _best_threshold,
)
from .kernels import KernelSpec
from .pipeline import (
    STAGE_INIT,
    STAGE_MIADAPT,
    STAGE_PREADAPT,
    STAGE_PRETRAIN,
    init_model,
    mi_adapt,
    pre_adapt,
    pretrain,
    run_iman,
)

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_STAGE_ORDER = 4
EXIT_DIVERGENCE = 5
EXIT_CLUSTERING = 6
EXIT_DEGENERATE = 7


def _load_run_config(path: str | None) -> RunConfig:
    cfg = load_config(path) if path else RunConfig()
    env_seed = os.environ.get("IMAN_SEED")
    if env_seed is not None:
        try:
            cfg = cfg.with_seed(int(env_seed))
        except ValueError:
            raise ConfigError(f"IMAN_SEED must be an integer, got {env_seed!r}")
    return cfg


def cmd_gen(args) -> int:
    cfg = _load_run_config(args.config)
    spec = cfg.data
    overrides = {}
    for attr, flag in (
        ("classes", args.classes),
        ("per_class", args.per_class),
        ("dim", args.dim),
        ("spread", args.spread),
        ("noise", args.noise),
        ("rotation_deg", args.rotation),
    ):
        if flag is not None:
            overrides[attr] = flag
    if args.translation is not None:
        overrides["translation"] = tuple(
            float(v) for v in args.translation.split(",")
        )
    if overrides:
        from dataclasses import replace

        spec = replace(spec, **overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    source, target, hidden = generate_domains(spec)
    save_csv(source, out / "source.csv")
    save_csv(target, out / "target.csv")
    save_labels(hidden, out / "hidden_target_labels.csv")
    pairs = all_pairs(hidden)
    pairs.save_csv(out / "pairs_all.csv")
    # no trained model exists yet: the raw features act as reference scorer
    k_pos = min(cfg.evaluation.k_pos, sum(1 for p in pairs.pairs if p[2]))
    k_neg = min(cfg.evaluation.k_neg, sum(1 for p in pairs.pairs if not p[2]))
    difficult = select_difficult_pairs(target.features, hidden, k_pos, k_neg)
    difficult.save_csv(out / "pairs_difficult.csv")
    print(f"wrote {out}/source.csv target.csv hidden_target_labels.csv "
          f"pairs_all.csv pairs_difficult.csv")
    return 0


def _write_train_report(path, cfg: RunConfig, history_payload: dict) -> None:
    payload = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        **history_payload,
    }
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
        f.write("\n")


def _stage_payload(reports) -> list[dict]:
    out = []
    for rep in reports:
        out.append(
            {
                "stage": rep.stage,
                "n_clusters": rep.n_clusters,
                "n_assigned": rep.n_assigned,
                "epochs": [
                    {
                        "l_c": e.l_c,
                        "mmd_sum": e.mmd_sum,
                        "l_m": e.l_m,
                        "l_pseudo": e.l_pseudo,
                    }
                    for e in rep.epochs
                ],
            }
        )
    return out


def cmd_train(args) -> int:
    cfg = _load_run_config(args.config)
    data_dir = Path(args.data_dir)
    source = load_csv(data_dir / "source.csv")
    target = load_csv(data_dir / "target.csv")
    tcfg = cfg.train

    if args.stage == "full":
        model, history = run_iman(source, target, tcfg)
        payload = {
            "stages": _stage_payload(history.reports),
            "rand_indices": history.rand_indices,
            "converged": history.converged,
            "iterations": history.iterations,
        }
    else:
        if args.stage == "pretrain":
            n_classes = int(np.unique(source.labels).size)
            model = init_model(tcfg.trunk_dims, n_classes, tcfg.seed)
            model, rep = pretrain(source, target, model, tcfg)
        else:
            if not args.checkpoint_in:
                raise StageOrderError(
                    f"stage {args.stage} needs --checkpoint-in from an "
                    f"earlier stage"
                )
            model = ckpt.load_checkpoint(args.checkpoint_in)
            if args.stage == "preadapt":
                if model.stage == STAGE_INIT:
                    raise StageOrderError("preadapt requires a pretrain checkpoint")
                pseudo = cluster_pipeline(embed(model, target), tcfg.cluster)
                model, rep = pre_adapt(source, target, pseudo, model, tcfg)
            else:  # miadapt
                model, rep = mi_adapt(source, target, model, tcfg)
        payload = {"stages": _stage_payload([rep])}

    ckpt.save_checkpoint(model, args.out)
    if args.report:
        _write_train_report(args.report, cfg, payload)
    print(f"wrote checkpoint {args.out} (stage {model.stage})")
    return 0


def cmd_cluster(args) -> int:
    model = ckpt.load_checkpoint(args.checkpoint)
    target = load_csv(args.target)
    config = ClusterConfig(lam=args.lam, min_size=args.min_size)
    pseudo = cluster_pipeline(embed(model, target), config)
    if pseudo.n_clusters == 0:
        raise ClusteringError(
            f"no clusters at lambda={args.lam} min_size={args.min_size}"
        )
    pseudo.save_csv(args.out)
    print(
        f"n_clusters={pseudo.n_clusters} assigned={len(pseudo.assignment)} "
        f"abandoned={len(pseudo.abandoned)}"
    )
    return 0


def cmd_eval(args) -> int:
    cfg = _load_run_config(args.config)
    model = ckpt.load_checkpoint(args.checkpoint)
    data_dir = Path(args.data_dir)
    source = load_csv(data_dir / "source.csv")
    target = load_csv(data_dir / "target.csv")
    pairs = PairList.load_csv(args.pairs)
    far_list = (
        tuple(float(v) for v in args.far.split(","))
        if args.far
        else cfg.evaluation.far_list
    )

    emb_t = embed(model, target)
    emb_s = embed(model, source)
    scores = score_pairs(emb_t, pairs)
    same = pairs.same_flags()
    acc_mean, acc_std, _ = tenfold_accuracy(scores, same)
    best_t, _ = _best_threshold(scores, same)
    _, tars = roc_and_tar(scores, same, far_list)
    spec = KernelSpec.from_median(emb_s, emb_t)
    mmd = discrepancy_report(emb_s, emb_t, spec)
    proj, retained = projection_2d(emb_t)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        f.write("metric,value\n")
        f.write(f"accuracy_mean,{fmt_float(acc_mean)}\n")
        f.write(f"accuracy_std,{fmt_float(acc_std)}\n")
        f.write(f"best_threshold,{fmt_float(best_t)}\n")
        for far in far_list:
            f.write(f"tar_at_far_{fmt_float(far)},{fmt_float(tars[far])}\n")
        f.write(f"mmd_discrepancy,{fmt_float(mmd)}\n")
        f.write(f"projection_retained_variance,{fmt_float(retained)}\n")
        f.write(f"seed,{cfg.seed}\n")
        f.write(f"config_hash,{config_hash(cfg)}\n")
    proj_path = args.projection or str(out) + ".projection.csv"
    with open(proj_path, "w") as f:
        f.write("id,p0,p1\n")
        for i in range(proj.shape[0]):
            f.write(f"{i},{fmt_float(proj[i, 0])},{fmt_float(proj[i, 1])}\n")
    print(f"accuracy {acc_mean:.4f} +- {acc_std:.4f}; report {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iman",
        description="Domain-adaptation toolkit: generate data, train the "
        "staged adaptation pipeline, inspect clusters, evaluate verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic source/target CSVs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="run config file")
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--spread", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--rotation", type=float)
    p.add_argument("--translation", help="comma-separated vector")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="run one training stage or the full loop")
    p.add_argument(
        "--stage",
        required=True,
        choices=["pretrain", "preadapt", "miadapt", "full"],
    )
    p.add_argument("--config", help="run config file")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--checkpoint-in", dest="checkpoint_in")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--report", help="stage report JSON path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cluster", help="pseudo-label a target CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--lam", type=float, default=ClusterConfig().lam)
    p.add_argument("--min-size", dest="min_size", type=int,
                   default=ClusterConfig().min_size)
    p.add_argument("--out", required=True, help="pseudo-label CSV path")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval", help="verification report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--far", help="comma-separated FAR grid")
    p.add_argument("--config", help="run config file")
    p.add_argument("--out", required=True, help="report path")
    p.add_argument("--projection", help="projection CSV path")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, SchemaError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except StageOrderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE_ORDER
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ClusteringError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CLUSTERING
    except DegenerateFeatureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
