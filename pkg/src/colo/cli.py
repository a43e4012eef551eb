"""Command-line entry point.

Subcommands cover the full pipeline: corpus synthesis, the two extractive
training regimes, abstractive training, evaluation, throughput and training
cost benchmarks, the candidate-embedding visualization export, and a
single-pair scorer.  Every run writes its resolved configuration (all
defaults applied) next to its outputs, and all randomness derives from the
seed, so reruns are byte-identical apart from timing columns.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import abstractive as abs_mod
from . import bench as bench_mod
from .candidates import CandidateSpec
from .config import RunConfig, apply_overrides, load_config
from .corpus import (
    Dataset,
    SynthSpec,
    load_jsonl,
    save_jsonl,
    synth_corpus,
)
from .encoder import EncoderConfig, ExtractiveModel
from .errors import ColoError
from .inference import (
    EvalConfig,
    SystemKind,
    evaluate,
    export_candidate_embeddings,
    tercile_separation,
    write_eval_csv,
    write_viz_csv,
    write_viz_svg,
)
from .metrics import DiscriminatorKind, js2_divergence, rouge_l, rouge_n
from .training import (
    TrainConfig,
    train,
    train_naive_offline,
    write_step_reports,
)


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a sectioned key=value config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
    common.add_argument("--seed", type=int, help="override [run] seed")
    common.add_argument("--out", help="override [run] out directory")

    p = argparse.ArgumentParser(
        prog="colo",
        description="One-stage contrastive re-ranking summarizer, desk scale.",
    )
    sub = p.add_subparsers(dest="command")

    sub.add_parser("synth", parents=[common],
                   help="write a synthetic corpus as train/test jsonl")

    for name in ("train-ext", "train-naive"):
        sp = sub.add_parser(name, parents=[common],
                            help=f"extractive training ({name.split('-')[1]} sampling)")
        sp.add_argument("--data", help="train jsonl (default: <out>/train.jsonl)")

    sp = sub.add_parser("train-abs", parents=[common],
                        help="abstractive training (NLL then NLL+rank)")
    sp.add_argument("--data", help="train jsonl (default: <out>/train.jsonl)")

    for name in ("eval", "eval-abs"):
        sp = sub.add_parser(
            name, parents=[common],
            help=f"{'abstractive' if name == 'eval-abs' else 'extractive'} held-out evaluation",
        )
        sp.add_argument("--checkpoint", help="trained model checkpoint")
        sp.add_argument("--data", help="eval jsonl (default: <out>/test.jsonl)")
        if name == "eval":
            sp.add_argument("--systems", default="colo,topk,lead,oracle",
                            help="comma list: colo,topk,lead,oracle")

    sp = sub.add_parser("bench", parents=[common],
                        help="one-stage vs two-stage throughput sweep")
    sp.add_argument("--checkpoint", help="trained extractive checkpoint (optional)")

    sub.add_parser("cost", parents=[common], help="training-cost comparison report")

    sp = sub.add_parser("viz", parents=[common],
                        help="export candidate embeddings as 2-D scatter")
    sp.add_argument("--checkpoint", help="trained extractive checkpoint")
    sp.add_argument("--data", help="eval jsonl (default: <out>/test.jsonl)")
    sp.add_argument("--doc", help="document id (default: first)")
    sp.add_argument("--svg", action="store_true", help="also write an SVG scatter")

    sp = sub.add_parser("score", parents=[common],
                        help="score candidate/reference text pairs")
    sp.add_argument("--candidate", help="candidate text file (with --reference)")
    sp.add_argument("--reference", help="reference text file (with --candidate)")
    sp.add_argument("--pairs", help="jsonl file with id/candidate/reference fields")
    return p


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg.values["run"]["seed"] = args.seed
    if args.out is not None:
        cfg.values["run"]["out"] = args.out
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.get("run", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved(cfg: RunConfig, out: Path, name: str) -> None:
    (out / name).write_text(cfg.resolved_text(), encoding="utf-8")


def _synth_spec(cfg: RunConfig) -> SynthSpec:
    c = cfg.values["corpus"]
    return SynthSpec(
        n_docs=c["n_docs"],
        vocab_size=c["vocab_size"],
        sentences_range=c["sentences_range"],
        tokens_range=c["tokens_range"],
        summary_range=c["summary_range"],
        topic_size=c["topic_size"],
        salient_fraction=c["salient_fraction"],
        topic_density=c["topic_density"],
        secondary_density=c["secondary_density"],
        filler_density=c["filler_density"],
        redundancy_prob=c["redundancy_prob"],
        variant_overlap=c["variant_overlap"],
        noise_rate=c["noise_rate"],
        size_by_length=c["size_by_length"],
    )


def _encoder_config(cfg: RunConfig, vocab_size: int) -> EncoderConfig:
    e = cfg.values["encoder"]
    return EncoderConfig(
        vocab_size=vocab_size,
        d_model=e["d_model"],
        n_layers=e["n_layers"],
        n_heads=e["n_heads"],
        ffn_dim=e["ffn_dim"],
        max_len=e["max_len"],
        use_positions=e["use_positions"],
        max_rel=e["max_rel"],
    )


def _candidate_spec(cfg: RunConfig, section: str = "candidates") -> CandidateSpec:
    c = cfg.values[section]
    return CandidateSpec(nums=tuple(c["n"]), n_prime=c["n_prime"])


def _train_config(cfg: RunConfig, seed: int) -> TrainConfig:
    t = cfg.values["training"]
    return TrainConfig(
        margin=t["margin"],
        warmup_steps_bce=t["warmup_steps_bce"],
        combined_steps=t["combined_steps"],
        batch_size=t["batch_size"],
        seed=seed,
        kind=DiscriminatorKind(t["discriminator"]),
        rank_loss_normalize=t["rank_loss_normalize"],
        margin_scaled_by_rank_gap=t["margin_scaled_by_rank_gap"],
        candidate_spec=_candidate_spec(cfg),
        lr_warmup=t["lr_warmup"],
        lr_scale=t["lr_scale"],
        label_max_sents=t["label_max_sents"] or None,
        checkpoint_every=t["checkpoint_every"],
    )


def _dataset(path_arg, cfg: RunConfig, default_name: str) -> Dataset:
    path = Path(path_arg) if path_arg else _out_dir(cfg) / default_name
    if not path.exists():
        raise ColoError(f"dataset not found: {path} (run `colo synth` first?)")
    return load_jsonl(path)


def _split(ds: Dataset, holdout: int) -> tuple[Dataset, Dataset]:
    if holdout <= 0 or holdout >= len(ds.documents):
        return ds, ds
    return (
        Dataset(ds.documents[:-holdout], ds.vocab),
        Dataset(ds.documents[-holdout:], ds.vocab),
    )


def cmd_synth(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    seed = cfg.get("run", "seed")
    ds = synth_corpus(_synth_spec(cfg), seed=seed)
    holdout = cfg.get("corpus", "holdout")
    train_ds, test_ds = _split(ds, holdout)
    save_jsonl(train_ds, out / "train.jsonl")
    save_jsonl(test_ds, out / "test.jsonl")
    _write_resolved(cfg, out, "synth.resolved.cfg")
    print(f"wrote {len(train_ds.documents)} train / {len(test_ds.documents)} test docs to {out}")
    return 0


def cmd_train_ext(args, cfg: RunConfig, sampling: str) -> int:
    out = _out_dir(cfg)
    seed = cfg.get("run", "seed")
    ds = _dataset(args.data, cfg, "train.jsonl")
    model = ExtractiveModel(_encoder_config(cfg, len(ds.vocab)), seed=seed)
    tcfg = _train_config(cfg, seed)
    name = "model_ext.npz" if sampling == "online" else "model_naive.npz"
    if sampling == "online":
        result = train(model, ds, tcfg, sampling="online",
                       checkpoint_path=out / name)
    else:
        result = train_naive_offline(model, ds, tcfg)
    model.save(out / name)
    write_step_reports(out / f"steps_{sampling}.csv", result.reports)
    _write_resolved(cfg, out, f"train_{sampling}.resolved.cfg")
    last = result.reports[-1] if result.reports else None
    tail = f", final total loss {last.total:.4f}" if last else ""
    print(f"trained {tcfg.total_steps} steps ({sampling} sampling){tail}; saved {out / name}")
    return 0


_SYSTEM_ALIASES = {
    "colo": SystemKind.COLO_EXT,
    "topk": SystemKind.CLASSIFIER_TOPK,
    "lead": SystemKind.LEAD,
    "oracle": SystemKind.ORACLE_SET,
}


def cmd_eval(args, cfg: RunConfig) -> int:
    if not args.checkpoint:
        raise ColoError("missing --checkpoint")
    out = _out_dir(cfg)
    seed = cfg.get("run", "seed")
    ds = _dataset(args.data, cfg, "test.jsonl")
    model = ExtractiveModel.load(args.checkpoint)
    systems = []
    for name in args.systems.split(","):
        name = name.strip()
        if name not in _SYSTEM_ALIASES:
            raise ColoError(f"unknown system {name!r} (choose from {sorted(_SYSTEM_ALIASES)})")
        systems.append(_SYSTEM_ALIASES[name])
    ecfg = EvalConfig(spec=_candidate_spec(cfg),
                      kind=DiscriminatorKind(cfg.get("training", "discriminator")),
                      seed=seed)
    rows = evaluate(ds, systems, model, ecfg)
    write_eval_csv(out / "eval.csv", rows)
    _write_resolved(cfg, out, "eval.resolved.cfg")
    for r in rows:
        print(f"{r.system:8s} r1={r.r1:.4f} r2={r.r2:.4f} rl={r.rl:.4f} js2={r.js2:.4f}")
    print(f"wrote {out / 'eval.csv'}")
    return 0


def _abs_configs(cfg: RunConfig, vocab_size: int, seed: int):
    a = cfg.values["abstractive"]
    enc = _encoder_config(cfg, vocab_size)
    mcfg = abs_mod.Seq2SeqConfig(
        encoder=enc,
        dec_layers=a["dec_layers"],
        dec_heads=a["dec_heads"],
        max_decode_len=a["max_decode_len"],
        beam_size=a["beam_size"],
        num_groups=a["num_groups"],
        diversity_penalty=a["diversity_penalty"],
    )
    tcfg = abs_mod.AbsTrainConfig(
        margin=cfg.get("training", "margin"),
        warmup_steps_nll=a["warmup_steps_nll"],
        combined_steps=a["combined_steps"],
        batch_size=a["batch_size"],
        seed=seed,
        kind=DiscriminatorKind(cfg.get("training", "discriminator")),
        rank_loss_normalize=cfg.get("training", "rank_loss_normalize"),
        lr_warmup=a["lr_warmup"],
        lr_scale=a["lr_scale"],
    )
    return mcfg, tcfg


def cmd_train_abs(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    seed = cfg.get("run", "seed")
    ds = _dataset(args.data, cfg, "train.jsonl")
    mcfg, tcfg = _abs_configs(cfg, len(ds.vocab), seed)
    model = abs_mod.Seq2SeqModel(mcfg, seed=seed)
    result = abs_mod.train_abs(model, ds, tcfg, checkpoint_path=out / "model_abs.npz")
    write_step_reports(out / "steps_abs.csv", result.reports)
    _write_resolved(cfg, out, "train_abs.resolved.cfg")
    print(f"trained {tcfg.total_steps} steps; saved {out / 'model_abs.npz'}")
    return 0


def cmd_eval_abs(args, cfg: RunConfig) -> int:
    if not args.checkpoint:
        raise ColoError("missing --checkpoint")
    out = _out_dir(cfg)
    seed = cfg.get("run", "seed")
    ds = _dataset(args.data, cfg, "test.jsonl")
    model = abs_mod.Seq2SeqModel.load(args.checkpoint)
    rows = []
    for by in ("cosine", "map"):
        r1s = r2s = rls = 0.0
        for doc in ds.documents:
            cand = abs_mod.select_abs(model, doc, ds.vocab, by=by)
            toks = cand.text_tokens()
            r1s += rouge_n(toks, doc.reference, 1).f1
            r2s += rouge_n(toks, doc.reference, 2).f1
            rls += rouge_l(toks, doc.reference).f1
        n = len(ds.documents)
        rows.append((by, r1s / n, r2s / n, rls / n))
    with open(out / "eval_abs.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["selection", "rouge1_f1", "rouge2_f1", "rougel_f1", "n_docs", "seed"])
        for by, r1, r2, rl in rows:
            w.writerow([by, f"{r1:.6f}", f"{r2:.6f}", f"{rl:.6f}", len(ds.documents), seed])
    _write_resolved(cfg, out, "eval_abs.resolved.cfg")
    for by, r1, r2, rl in rows:
        print(f"{by:7s} r1={r1:.4f} r2={r2:.4f} rl={rl:.4f}")
    print(f"wrote {out / 'eval_abs.csv'}")
    return 0


def cmd_bench(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    seed = cfg.get("run", "seed")
    b = cfg.values["bench"]
    spec = _synth_spec(cfg)
    bcfg = bench_mod.BenchConfig(
        sizes=tuple(b["sizes"]),
        batch_mode=b["batch_mode"],
        repetitions=b["repetitions"],
        warmup_batches=b["warmup_batches"],
        cand_len_cap=b["cand_len_cap"],
        byte_budget=b["byte_budget_mb"] * (1 << 20),
        n_docs=b["n_docs"],
    )
    min_sents = max(bcfg.sizes)
    if spec.sentences_range[0] < min_sents:
        spec = SynthSpec(
            n_docs=max(bcfg.n_docs, 2 * bcfg.warmup_batches + 1),
            vocab_size=spec.vocab_size,
            sentences_range=(min_sents, min_sents + 4),
            tokens_range=spec.tokens_range,
            summary_range=spec.summary_range,
            topic_size=spec.topic_size,
        )
    ds = synth_corpus(spec, seed=seed)
    ds = Dataset(ds.documents[: bcfg.n_docs], ds.vocab)
    enc = _encoder_config(cfg, len(ds.vocab))
    if args.checkpoint:
        one_stage = ExtractiveModel.load(args.checkpoint)
    else:
        one_stage = ExtractiveModel(enc, seed=seed)
    reranker = ExtractiveModel(enc, seed=seed + 1)
    rows = bench_mod.benchmark(ds, one_stage, reranker, bcfg)
    bench_mod.write_bench_csv(out / "bench.csv", rows)
    _write_resolved(cfg, out, "bench.resolved.cfg")
    for r in rows:
        print(f"{r.system:10s} |C|={r.c:3d} {r.samples_per_s:9.2f} samples/s "
              f"tokens/doc={r.tokens_per_doc:6.0f} peak_bytes={r.peak_bytes}")
    print(f"wrote {out / 'bench.csv'}")
    return 0


def cmd_cost(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    seed = cfg.get("run", "seed")
    ds = synth_corpus(_synth_spec(cfg), seed=seed)
    tcfg = _train_config(cfg, seed)
    enc = _encoder_config(cfg, len(ds.vocab))
    rows = bench_mod.training_cost_report(ds, enc, tcfg, seed=seed)
    bench_mod.write_cost_csv(out / "cost.csv", rows)
    _write_resolved(cfg, out, "cost.resolved.cfg")
    for r in rows:
        print(f"{r.pipeline:10s} {r.stage:22s} {r.seconds:8.2f}s")
    print(f"wrote {out / 'cost.csv'}")
    return 0


def cmd_viz(args, cfg: RunConfig) -> int:
    if not args.checkpoint:
        raise ColoError("missing --checkpoint")
    out = _out_dir(cfg)
    ds = _dataset(args.data, cfg, "test.jsonl")
    model = ExtractiveModel.load(args.checkpoint)
    doc = ds.documents[0]
    if args.doc:
        matches = [d for d in ds.documents if d.id == args.doc]
        if not matches:
            raise ColoError(f"document id {args.doc!r} not in dataset")
        doc = matches[0]
    spec = _candidate_spec(cfg, "viz")
    kind = DiscriminatorKind(cfg.get("training", "discriminator"))
    rows = export_candidate_embeddings(model, doc, spec, kind, ds.vocab)
    write_viz_csv(out / "viz.csv", rows)
    sep = tercile_separation(rows)
    _write_resolved(cfg, out, "viz.resolved.cfg")
    if args.svg:
        write_viz_svg(out / "viz.svg", rows)
        print(f"wrote {out / 'viz.svg'}")
    print(f"wrote {out / 'viz.csv'} (doc {doc.id}, "
          f"top-vs-bottom tercile cosine gap {sep:+.4f})")
    return 0


def _read_score_pairs(args) -> list[tuple[str, str, str]]:
    """(id, candidate text, reference text) rows from files or a jsonl."""
    if args.pairs:
        if args.candidate or args.reference:
            raise ColoError("score: use --pairs or --candidate/--reference, not both")
        path = Path(args.pairs)
        if not path.exists():
            raise ColoError(f"pairs file not found: {path}")
        rows = []
        for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ColoError(f"{path}: bad json at line {i}: {e}") from e
            for field in ("candidate", "reference"):
                if field not in obj:
                    raise ColoError(f"{path}: line {i} missing {field!r}")
            rows.append((str(obj.get("id", i)), obj["candidate"], obj["reference"]))
        if not rows:
            raise ColoError(f"{path}: no pairs")
        return rows
    if not (args.candidate and args.reference):
        raise ColoError("score: need --candidate and --reference files, or --pairs")
    for name in (args.candidate, args.reference):
        if not Path(name).exists():
            raise ColoError(f"text file not found: {name}")
    cand = Path(args.candidate).read_text(encoding="utf-8")
    ref = Path(args.reference).read_text(encoding="utf-8")
    return [(Path(args.candidate).stem, cand, ref)]


def cmd_score(args, cfg: RunConfig) -> int:
    from .corpus import Vocabulary, tokenize

    out = _out_dir(cfg)
    pairs = _read_score_pairs(args)
    with open(out / "scores.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["id", "r1", "r2", "rl", "js2"])
        for pair_id, cand_text, ref_text in pairs:
            vocab = Vocabulary.build([cand_text, ref_text])
            cand = tokenize(cand_text, vocab)
            ref = tokenize(ref_text, vocab)
            row = [
                rouge_n(cand, ref, 1).f1,
                rouge_n(cand, ref, 2).f1,
                rouge_l(cand, ref).f1,
                js2_divergence(cand, ref),
            ]
            w.writerow([pair_id] + [f"{v:.6f}" for v in row])
            print(f"{pair_id} r1={row[0]:.4f} r2={row[1]:.4f} rl={row[2]:.4f} js2={row[3]:.4f}")
    _write_resolved(cfg, out, "score.resolved.cfg")
    print(f"wrote {out / 'scores.csv'}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = _load_run_config(args)
        if args.command == "synth":
            return cmd_synth(args, cfg)
        if args.command == "train-ext":
            return cmd_train_ext(args, cfg, "online")
        if args.command == "train-naive":
            return cmd_train_ext(args, cfg, "naive")
        if args.command == "train-abs":
            return cmd_train_abs(args, cfg)
        if args.command == "eval":
            return cmd_eval(args, cfg)
        if args.command == "eval-abs":
            return cmd_eval_abs(args, cfg)
        if args.command == "bench":
            return cmd_bench(args, cfg)
        if args.command == "cost":
            return cmd_cost(args, cfg)
        if args.command == "viz":
            return cmd_viz(args, cfg)
        if args.command == "score":
            return cmd_score(args, cfg)
        parser.print_usage(sys.stderr)
        return 2
    except ColoError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
