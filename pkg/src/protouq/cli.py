"""Command-line pipeline: corpus generation, training, scoring, re-ranking,
evaluation, and analysis, all emitting CSV artifacts plus a one-line
machine-readable summary on stdout.

Exit codes: 0 success, 1 runtime failure (single-line diagnostic on
stderr), 2 usage errors (argparse).
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .embed import TEXT, VISION, PairSet, batch_means, similarity_matrix
from .errors import ProtoUQError
from .evidence import (
    EVIDENCE_KINDS,
    EvidenceConfig,
    generate_evidence,
    uncertainty_scores,
)
from .fileio import (
    Checkpoint,
    read_checkpoint,
    read_embeddings,
    read_embeddings_csv,
    read_pairs,
    write_checkpoint,
    write_embeddings,
    write_pairs,
)
from .metrics import (
    DIRECTIONS,
    GALLERY_SIDE,
    QUERY_SIDE,
    RANDOM_MODE,
    UNCERTAINTY_MODE,
    entropy,
    evaluate_retrieval,
    msvd_collision_logprob,
    pearson,
    removal_curve,
    softmax,
)
from .rerank import DEFAULT_BETA_GRID, RerankParams, apply_rerank, fit_betas
from .synth import SyntheticSpec, generate_corpus
from .train import H_MAPPINGS, OPTIMIZERS, TrainConfig, map_targets, train


def _load_embeddings(path, modality):
    if str(path).endswith(".csv"):
        return read_embeddings_csv(path, modality)
    return read_embeddings(path)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _summary(command: str, **fields) -> None:
    parts = [command] + [f"{k}={v}" for k, v in fields.items()]
    print(" ".join(parts))


# ---- subcommand handlers ----


def _cmd_gen_synth(args) -> int:
    weights = tuple(float(w) for w in args.weights.split(","))
    spec = SyntheticSpec(
        n_items=args.n_items,
        d=args.d,
        k_true=args.k_true,
        ambiguity_weights=weights,
        noise_sigma=args.noise_sigma,
        captions_per_item=args.captions_per_item,
        seed=args.seed,
    )
    vis, txt, pairs, labels = generate_corpus(spec)
    write_embeddings(vis, args.vis)
    write_embeddings(txt, args.txt)
    write_pairs(pairs, args.pairs)
    if args.labels:
        _write_csv(
            args.labels,
            ("item", "m", "semantics"),
            [
                (i, m, ";".join(map(str, chosen)))
                for i, (m, chosen) in enumerate(zip(labels.counts, labels.semantic_sets))
            ],
        )
    _summary(
        "gen-synth",
        n_items=spec.n_items,
        n_captions=txt.n,
        d=spec.d,
        k_true=spec.k_true,
        seed=spec.seed,
        vis=args.vis,
        txt=args.txt,
        pairs=args.pairs,
    )
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        seed=args.seed,
        k=args.k,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        lambda_div=args.lambda_div,
        evidence=EvidenceConfig(
            kind=args.evidence, gamma=args.gamma, theta=args.theta, tau=args.tau
        ),
        optimizer=args.optimizer,
        h_mapping=args.h_mapping,
    )


def _cmd_train(args) -> int:
    vis = _load_embeddings(args.vis, VISION)
    txt = _load_embeddings(args.txt, TEXT)
    pairs = read_pairs(args.pairs)
    cfg = _train_config(args)
    bank_v, bank_t, history = train(vis, txt, pairs, cfg)
    ckpt = Checkpoint(
        bank_v=bank_v,
        bank_t=bank_t,
        evidence=cfg.evidence,
        rerank=RerankParams(beta1=args.beta1, beta2=args.beta2),
        train_meta={
            "epochs": str(cfg.epochs),
            "seed": str(cfg.seed),
            "k": str(cfg.k),
            "batch_size": str(cfg.batch_size),
            "learning_rate": repr(cfg.learning_rate),
            "lambda_div": repr(cfg.lambda_div),
            "optimizer": cfg.optimizer,
            "h_mapping": cfg.h_mapping,
            "n_vision": str(vis.n),
            "n_text": str(txt.n),
        },
    )
    write_checkpoint(ckpt, args.ckpt)
    if args.out:
        _write_csv(
            args.out,
            ("epoch", "uct_v", "uct_t", "div_v", "div_t", "total"),
            [
                (r.epoch, repr(r.uct_v), repr(r.uct_t), repr(r.div_v), repr(r.div_t), repr(r.total))
                for r in history.records
            ],
        )
    final = history.final
    _summary(
        "train",
        epochs=cfg.epochs,
        seed=cfg.seed,
        final_total=f"{final.total:.6f}",
        final_uct_v=f"{final.uct_v:.6f}",
        final_uct_t=f"{final.uct_t:.6f}",
        ckpt=args.ckpt,
    )
    return 0


def _cmd_score(args) -> int:
    ckpt = read_checkpoint(args.ckpt)
    rows = []
    summary = {}
    if not args.vis and not args.txt:
        raise ProtoUQError("score needs --vis and/or --txt")
    if args.vis:
        vis = _load_embeddings(args.vis, VISION)
        u_v = uncertainty_scores(vis, ckpt.bank_t, ckpt.evidence)
        rows += [(VISION, i, repr(float(u))) for i, u in enumerate(u_v)]
        summary["mean_u_vision"] = f"{u_v.mean():.6f}"
    if args.txt:
        txt = _load_embeddings(args.txt, TEXT)
        u_t = uncertainty_scores(txt, ckpt.bank_v, ckpt.evidence)
        rows += [(TEXT, j, repr(float(u))) for j, u in enumerate(u_t)]
        summary["mean_u_text"] = f"{u_t.mean():.6f}"
    if args.out:
        _write_csv(args.out, ("modality", "index", "uncertainty"), rows)
        summary["out"] = args.out
    _summary("score", n_scored=len(rows), **summary)
    return 0


def _scored_corpus(args):
    """Shared loader: embeddings, pairs, checkpoint, similarity, u vectors."""
    ckpt = read_checkpoint(args.ckpt)
    vis = _load_embeddings(args.vis, VISION)
    txt = _load_embeddings(args.txt, TEXT)
    pairs = read_pairs(args.pairs)
    pairs.check_against(vis.n, txt.n)
    m = similarity_matrix(vis, txt, threads=args.threads)
    u_v = uncertainty_scores(vis, ckpt.bank_t, ckpt.evidence)
    u_t = uncertainty_scores(txt, ckpt.bank_v, ckpt.evidence)
    return ckpt, vis, txt, pairs, m, u_v, u_t


def _report_rows(m, pairs, prefix=""):
    rows = []
    for direction in DIRECTIONS:
        rep = evaluate_retrieval(m, pairs, direction)
        rows += [
            (prefix + "r1", direction, f"{rep.r1:.4f}"),
            (prefix + "r5", direction, f"{rep.r5:.4f}"),
            (prefix + "r10", direction, f"{rep.r10:.4f}"),
            (prefix + "mdr", direction, f"{rep.mdr:.1f}"),
            (prefix + "mnr", direction, f"{rep.mnr:.4f}"),
        ]
    return rows


def _mean_r1(m, pairs) -> float:
    return 0.5 * sum(evaluate_retrieval(m, pairs, d).r1 for d in DIRECTIONS)


def _cmd_rerank(args) -> int:
    ckpt, vis, txt, pairs, m, u_v, u_t = _scored_corpus(args)
    if args.fit_betas:
        grid = (
            tuple(float(g) for g in args.grid.split(","))
            if args.grid
            else DEFAULT_BETA_GRID
        )
        params = fit_betas(m, u_v, u_t, pairs, grid=grid)
        if args.ckpt_out:
            write_checkpoint(
                Checkpoint(
                    bank_v=ckpt.bank_v,
                    bank_t=ckpt.bank_t,
                    evidence=ckpt.evidence,
                    rerank=params,
                    train_meta=ckpt.train_meta,
                ),
                args.ckpt_out,
            )
    else:
        beta1 = args.beta1 if args.beta1 is not None else ckpt.rerank.beta1
        beta2 = args.beta2 if args.beta2 is not None else ckpt.rerank.beta2
        params = RerankParams(beta1=beta1, beta2=beta2)
    reranked = apply_rerank(m, u_v, u_t, params)
    if args.out:
        rows = _report_rows(m, pairs) + _report_rows(reranked, pairs, prefix="reranked_")
        _write_csv(args.out, ("metric", "direction", "value"), rows)
    if args.out_matrix:
        _write_csv(
            args.out_matrix,
            [f"t{j}" for j in range(reranked.cols)],
            [[repr(float(x)) for x in row] for row in reranked.values],
        )
    _summary(
        "rerank",
        beta1=params.beta1,
        beta2=params.beta2,
        fitted=str(bool(args.fit_betas)).lower(),
        mean_r1_before=f"{_mean_r1(m, pairs):.4f}",
        mean_r1_after=f"{_mean_r1(reranked, pairs):.4f}",
    )
    return 0


def _cmd_evaluate(args) -> int:
    vis = _load_embeddings(args.vis, VISION)
    txt = _load_embeddings(args.txt, TEXT)
    pairs = read_pairs(args.pairs)
    pairs.check_against(vis.n, txt.n)
    m = similarity_matrix(vis, txt, threads=args.threads)
    rows = _report_rows(m, pairs)
    summary = {}
    for metric, direction, value in rows:
        if metric in ("r1", "mdr"):
            summary[f"{metric}_{direction}"] = value
    if args.ckpt:
        ckpt = read_checkpoint(args.ckpt)
        u_v = uncertainty_scores(vis, ckpt.bank_t, ckpt.evidence)
        u_t = uncertainty_scores(txt, ckpt.bank_v, ckpt.evidence)
        reranked = apply_rerank(m, u_v, u_t, ckpt.rerank)
        rows += _report_rows(reranked, pairs, prefix="reranked_")
        summary["reranked_mean_r1"] = f"{_mean_r1(reranked, pairs):.4f}"
    if args.out:
        _write_csv(args.out, ("metric", "direction", "value"), rows)
    _summary("evaluate", n_queries_t2v=txt.n, n_queries_v2t=vis.n, **summary)
    return 0


def _cmd_analyze_pcc(args) -> int:
    _, vis, txt, pairs, m, u_v, u_t = _scored_corpus(args)
    h_v, h_t = (map_targets(h) for h in batch_means(m))
    rows = [
        ("pcc_u_h", VISION, f"{pearson(u_v, h_v):.6f}"),
        ("pcc_u_h", TEXT, f"{pearson(u_t, h_t):.6f}"),
    ]
    if args.labels:
        m_items = _read_labels_column(args.labels, vis.n)
        texts_of = pairs.texts_of()
        m_caps = np.empty(txt.n)
        for item, caps in texts_of.items():
            m_caps[caps] = m_items[item]
        rows.append(("pcc_u_m", VISION, f"{pearson(u_v, m_items):.6f}"))
        rows.append(("pcc_u_m", TEXT, f"{pearson(u_t, m_caps):.6f}"))
    if args.out:
        _write_csv(args.out, ("metric", "modality", "value"), rows)
    _summary("analyze-pcc", **{f"{r[0]}_{r[1]}": r[2] for r in rows})
    return 0


def _read_labels_column(path, n_items) -> np.ndarray:
    m_items = np.zeros(n_items)
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            m_items[int(row["item"])] = float(row["m"])
    return m_items


def _cmd_analyze_removal(args) -> int:
    _, vis, txt, pairs, m, u_v, u_t = _scored_corpus(args)
    n_pairs = len(pairs)
    if args.counts:
        counts = [int(c) for c in args.counts.split(",")]
    else:
        fractions = [float(f) for f in args.fractions.split(",")]
        counts = [int(round(f * n_pairs)) for f in fractions]
    curve = removal_curve(
        m, u_v, u_t, pairs, counts, mode=args.mode, seed=args.seed, side=args.side
    )
    rows = [
        (curve.mode, p.removed, f"{p.r1_t2v:.4f}", f"{p.r1_v2t:.4f}")
        for p in curve.points
    ]
    if args.out:
        _write_csv(args.out, ("mode", "removed", "r1_t2v", "r1_v2t"), rows)
    last = curve.points[-1] if curve.points else None
    _summary(
        "analyze-removal-curve",
        mode=curve.mode,
        side=curve.side,
        n_points=len(curve.points),
        last_removed=getattr(last, "removed", 0),
        last_r1_t2v=f"{last.r1_t2v:.4f}" if last else "nan",
        last_r1_v2t=f"{last.r1_v2t:.4f}" if last else "nan",
    )
    return 0


def _cmd_analyze_entropy_demo(args) -> int:
    cfg = EvidenceConfig(kind="exponential")
    strong = np.full(4, 0.8)
    weak = np.full(4, 0.2)
    ent_strong = entropy(softmax(strong))
    ent_weak = entropy(softmax(weak))

    def u_of(level):
        e = generate_evidence(np.full(4, level), cfg)
        return float(1.0 - 4.0 / (4.0 + e.sum()))

    u_strong, u_weak = u_of(0.8), u_of(0.2)
    rows = [
        ("entropy_softmax_0.8x4", repr(ent_strong)),
        ("entropy_softmax_0.2x4", repr(ent_weak)),
        ("u_0.8x4", repr(u_strong)),
        ("u_0.2x4", repr(u_weak)),
    ]
    if args.out:
        _write_csv(args.out, ("quantity", "value"), rows)
    _summary(
        "analyze-entropy-demo",
        entropy_gap=f"{abs(ent_strong - ent_weak):.3e}",
        u_strong=f"{u_strong:.6f}",
        u_weak=f"{u_weak:.6f}",
    )
    return 0


def _cmd_analyze_msvd(args) -> int:
    logp = msvd_collision_logprob(args.n, args.batch, args.group)
    _summary(
        "analyze-msvd-prob",
        n=args.n,
        batch=args.batch,
        group=args.group,
        log_prob=f"{logp:.6f}",
    )
    return 0


# ---- parser ----


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=8, help="prototypes per bank")
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lambda-div", type=float, default=1.0)
    p.add_argument("--optimizer", choices=sorted(OPTIMIZERS), default="adam")
    p.add_argument("--h-mapping", choices=sorted(H_MAPPINGS), default="clamp")
    p.add_argument("--beta1", type=float, default=0.0, help="stored rerank weight")
    p.add_argument("--beta2", type=float, default=0.0, help="stored rerank weight")


def _add_evidence_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--evidence", choices=list(EVIDENCE_KINDS), default="exponential")
    p.add_argument("--tau", type=float, default=5.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--theta", type=float, default=20.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protouq",
        description="Prototype-based aleatoric uncertainty over frozen embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic corpus")
    p.add_argument("--vis", required=True, help="output vision embeddings")
    p.add_argument("--txt", required=True, help="output text embeddings")
    p.add_argument("--pairs", required=True, help="output pairs file")
    p.add_argument("--labels", help="optional ambiguity labels CSV")
    p.add_argument("--n-items", type=int, default=2000)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--k-true", type=int, default=8)
    p.add_argument("--weights", default="0.25,0.25,0.25,0.25",
                   help="comma weights for m=1,2,...")
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--captions-per-item", type=int, default=2)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("train", help="train prototype banks")
    p.add_argument("--vis", required=True)
    p.add_argument("--txt", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--ckpt", required=True, help="output checkpoint")
    p.add_argument("--out", help="optional loss history CSV")
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p)
    _add_evidence_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("score", help="per-instance uncertainty from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vis")
    p.add_argument("--txt")
    p.add_argument("--out", help="output CSV (modality,index,uncertainty)")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("rerank", help="uncertainty-weighted re-ranking")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vis", required=True)
    p.add_argument("--txt", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--fit-betas", action="store_true",
                   help="grid-fit betas on the given (validation) data")
    p.add_argument("--grid", help="comma list of beta candidates")
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--ckpt-out", help="write checkpoint with fitted betas")
    p.add_argument("--out", help="before/after report CSV")
    p.add_argument("--out-matrix", help="re-ranked similarity matrix CSV")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_rerank)

    p = sub.add_parser("evaluate", help="retrieval metrics for a corpus")
    p.add_argument("--vis", required=True)
    p.add_argument("--txt", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--ckpt", help="also evaluate re-ranked with stored betas")
    p.add_argument("--out", help="report CSV (metric,direction,value)")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("analyze", help="uncertainty analyses")
    asub = p.add_subparsers(dest="submode", required=True)

    a = asub.add_parser("pcc", help="correlation between u and mean similarity")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--vis", required=True)
    a.add_argument("--txt", required=True)
    a.add_argument("--pairs", required=True)
    a.add_argument("--labels", help="gen-synth labels CSV for pcc against m")
    a.add_argument("--out")
    a.add_argument("--threads", type=int, default=1)
    a.set_defaults(func=_cmd_analyze_pcc)

    a = asub.add_parser("removal-curve", help="R@1 after removing risky pairs")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--vis", required=True)
    a.add_argument("--txt", required=True)
    a.add_argument("--pairs", required=True)
    a.add_argument("--mode", choices=(UNCERTAINTY_MODE, RANDOM_MODE),
                   default=UNCERTAINTY_MODE)
    a.add_argument("--side", choices=(GALLERY_SIDE, QUERY_SIDE), default=GALLERY_SIDE)
    a.add_argument("--counts", help="comma list of pair counts to remove")
    a.add_argument("--fractions", default="0.05,0.1,0.2,0.3",
                   help="comma list of pair fractions (used when --counts absent)")
    a.add_argument("--seed", type=int, default=0, help="random-mode draw seed")
    a.add_argument("--out")
    a.add_argument("--threads", type=int, default=1)
    a.set_defaults(func=_cmd_analyze_removal)

    a = asub.add_parser("entropy-demo",
                        help="confidence contrast softmax entropy misses")
    a.add_argument("--out")
    a.set_defaults(func=_cmd_analyze_entropy_demo)

    a = asub.add_parser("msvd-prob", help="batch group-collision log probability")
    a.add_argument("--n", type=int, required=True)
    a.add_argument("--batch", type=int, required=True)
    a.add_argument("--group", type=int, required=True)
    a.set_defaults(func=_cmd_analyze_msvd)

    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ProtoUQError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
