"""Command line driver for the whole pipeline.

One flat JSON config file carries every tunable; each subcommand reads the
keys it needs and rejects anything it does not know.  Seeds come only from
that file, never from the clock, so every command is replayable: the same
config and inputs produce byte-identical outputs.  Validation problems exit
with status 2, numeric failures with status 3, and every error is printed
to stderr as "error[<code>]: message".
"""

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import figures
from .captioning import (CaptionConfig, ContextMode, beam_decode,
                         context_vectors, init_caption_params)
from .corpus import (RESERVED_TOKENS, SyntheticSpec, Vocabulary, build_vocab,
                     decode, encode_sentence, generate_synthetic, load_dataset,
                     load_features, save_dataset, store_features)
from .errors import (ConfigError, DeterminismError, EventCapError, FormatError,
                     GenerationError, IncompatibilityError, NumericError,
                     ValidationError)
from .gradcheck import GRAD_TOLERANCE, SCOPES, run_gradient_suite
from .metrics import CaptionedInterval, DenseCaptionConfig, PAIR_METRICS, \
    dense_caption_breakdown
from .numerics import ParamStore
from .proposals import (ProposalConfig, hiddens_for_intervals,
                        init_proposal_params, propose_stream, recall_curve)
from .retrieval import (RetrievalConfig, encode_paragraph, encode_proposals,
                        init_retrieval_params, retrieval_param_names,
                        retrieval_report, similarity_matrix, train_retrieval)
from .training import (TrainConfig, Trainer, config_fingerprint,
                       gt_interval_hidden, read_checkpoint, write_checkpoint,
                       write_loss_log)

FEATURE_EXT = ".dvcf"
VARIANTS = ("none", "online-attn", "online", "full-attn", "full")

# config-file key -> dataclass field, grouped by the config it feeds
_SYNTH_KEYS = {
    "n_videos": "n_videos", "n_activity_types": "n_activity_types",
    "events_per_video": "events_per_video", "duration_range": "duration_range",
    "overlap_probability": "overlap_probability",
    "dependency_strength": "dependency_strength",
    "feature_noise_sigma": "feature_noise_sigma", "feature_dim": "feature_dim",
    "delta_frames": "delta_frames", "fps": "fps",
}
_PROP_KEYS = {
    "strides": "strides", "proposals_per_step": "proposals_per_step",
    "proposal_hidden_size": "hidden_size", "score_threshold": "score_threshold",
    "tiou_positive": "tiou_positive",
}
_CAP_KEYS = {
    "embed_dim": "embed_dim", "caption_hidden_size": "hidden_size",
    "max_caption_len": "max_len", "reinject_context": "reinject_context",
}
_TRAIN_KEYS = {
    "lambda_cap": "lambda_cap", "lambda_prop": "lambda_prop",
    "lr_caption": "lr_caption", "lr_proposal": "lr_proposal",
    "momentum": "momentum", "alternate_every": "alternate_every",
    "warmup_epochs": "warmup_epochs", "batch_size": "batch_size",
    "caption_iou_gate": "caption_iou_gate",
    "pair_with_proposals": "pair_with_proposals", "max_epochs": "max_epochs",
    "init_sigma": "init_sigma",
}
_RET_KEYS = {
    "joint_dim": "joint_dim", "margin": "margin",
    "retrieval_embed_dim": "embed_dim",
    "retrieval_hidden_size": "hidden_size",
    "context_pooling": "context_pooling",
}
_EXTRA_KEYS = ("seed", "min_count", "retrieval_epochs", "retrieval_lr",
               "retrieval_momentum", "retrieval_init_sigma")
KNOWN_KEYS = frozenset(_EXTRA_KEYS) | _SYNTH_KEYS.keys() | _PROP_KEYS.keys() \
    | _CAP_KEYS.keys() | _TRAIN_KEYS.keys() | _RET_KEYS.keys()

_TUPLE_KEYS = ("events_per_video", "duration_range", "strides")


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path}: top level must be an object")
    unknown = sorted(set(raw) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"config {path}: unknown keys {unknown}")
    if "seed" not in raw:
        raise ConfigError(f"config {path}: a seed is required")
    if not isinstance(raw["seed"], int) or isinstance(raw["seed"], bool):
        raise ConfigError(f"config {path}: seed must be an integer")
    for key in _TUPLE_KEYS:
        if key in raw:
            raw[key] = tuple(raw[key])
    return raw


def _pick(cfg: dict, mapping: dict) -> dict:
    return {field: cfg[key] for key, field in mapping.items() if key in cfg}


def synthetic_spec(cfg: dict) -> SyntheticSpec:
    return SyntheticSpec(seed=cfg["seed"], **_pick(cfg, _SYNTH_KEYS))


def proposal_config(cfg: dict) -> ProposalConfig:
    return ProposalConfig(**_pick(cfg, _PROP_KEYS))


def caption_config(cfg: dict, vocab_size: int) -> CaptionConfig:
    return CaptionConfig(vocab_size=vocab_size,
                         context_dim=proposal_config(cfg).hidden_size,
                         **_pick(cfg, _CAP_KEYS))


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(seed=cfg["seed"], **_pick(cfg, _TRAIN_KEYS))


def retrieval_config(cfg: dict, vocab_size: int) -> RetrievalConfig:
    return RetrievalConfig(vocab_size=vocab_size,
                           context_dim=proposal_config(cfg).hidden_size,
                           **_pick(cfg, _RET_KEYS))


# ---------------------------------------------------------------------------
# shared loading helpers


def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path, what: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"{what} file {path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{what} {path}: not valid JSON ({exc})") from exc


def _load_feature_dir(features_dir, cfg: dict) -> dict:
    delta = cfg.get("delta_frames", SyntheticSpec().delta_frames)
    fps = cfg.get("fps", SyntheticSpec().fps)
    paths = sorted(Path(features_dir).glob("*" + FEATURE_EXT))
    if not paths:
        raise ValidationError(f"no {FEATURE_EXT} files under {features_dir}")
    seqs = {}
    for p in paths:
        seq = load_features(p, delta_frames=delta, fps=fps, video_id=p.stem)
        seqs[seq.video_id] = seq
    dims = {s.dim for s in seqs.values()}
    if len(dims) != 1:
        raise ValidationError(f"mixed feature dims {sorted(dims)} under {features_dir}")
    return seqs


def _vocab_from_header(header: dict) -> Vocabulary:
    tokens = header.get("vocab")
    if not tokens or tuple(tokens[:len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
        raise FormatError("checkpoint vocabulary is missing its reserved tokens")
    return Vocabulary(tokens[len(RESERVED_TOKENS):])


def _load_joint_model(cfg: dict, checkpoint_path, feature_dim: int):
    """Rebuild (store, vocab, mode, prop_config, cap_config) for inference."""
    header, tensors = read_checkpoint(checkpoint_path)
    if header.get("kind", "joint") != "joint":
        raise IncompatibilityError(
            f"{checkpoint_path} is not a joint model checkpoint")
    vocab = _vocab_from_header(header)
    mode = ContextMode.from_name(header["mode"])
    prop = proposal_config(cfg)
    cap = caption_config(cfg, len(vocab))
    fingerprint = config_fingerprint(prop, cap, train_config(cfg), mode,
                                     feature_dim)
    if header["config"] != fingerprint:
        raise IncompatibilityError(
            "checkpoint was written under a different configuration")
    store = ParamStore(0)
    init_proposal_params(store, feature_dim, prop)
    init_caption_params(store, cap)
    for name, kind, arr in tensors:
        if kind != "param":
            continue
        if name not in store.values or store.values[name].shape != arr.shape:
            raise IncompatibilityError(
                f"checkpoint tensor {name!r} does not fit this model")
        store.values[name][...] = arr
    return store, vocab, mode, prop, cap


class _Segment:
    """A captionable interval: GT event or retained proposal."""

    def __init__(self, t_start, t_end, score, h):
        self.t_start = float(t_start)
        self.t_end = float(t_end)
        self.score = float(score)
        self.h = h


def _retrieval_fingerprint(ret_config: RetrievalConfig, joint_hash: str) -> str:
    payload = {"retrieval": asdict(ret_config), "joint": joint_hash}
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _retrieval_items(records, seqs, vocab, store, prop, cap):
    """Per-video (proposal hiddens, encoded sentences) from GT segments."""
    items = []
    for rec in sorted(records, key=lambda r: r.video_id):
        if rec.video_id not in seqs:
            raise ValidationError(f"no features for video {rec.video_id!r}")
        seq = seqs[rec.video_id]
        hiddens = np.stack([
            gt_interval_hidden(seq, store, prop, ev.t_start, ev.t_end)
            for ev in rec.events])
        sentences = [encode_sentence(ev.tokens, vocab, cap.max_len)
                     for ev in rec.events]
        items.append((hiddens, sentences))
    return items


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    cfg = load_config(args.spec)
    spec = synthetic_spec(cfg)
    records, seqs = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "features").mkdir(exist_ok=True)
    save_dataset(records, out / "dataset.json")
    for seq in seqs:
        store_features(seq, out / "features" / (seq.video_id + FEATURE_EXT))
    n_events = sum(len(rec.events) for rec in records)
    print(f"wrote {len(records)} videos ({n_events} events) under {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    records = load_dataset(args.data)
    seqs = _load_feature_dir(args.features, cfg)
    vocab = build_vocab(records, cfg.get("min_count", 1))
    prop = proposal_config(cfg)
    cap = caption_config(cfg, len(vocab))
    tr = train_config(cfg)
    mode = ContextMode.from_name(args.mode)
    if args.resume:
        trainer = Trainer.resume(args.resume, records, seqs, vocab, prop, cap,
                                 tr, mode)
    else:
        trainer = Trainer(records, seqs, vocab, prop, cap, tr, mode)
    out = Path(args.out)
    trainer.run(abort_path=out.with_suffix(".abort.ckpt"),
                stop_after_iteration=args.stop_after)
    trainer.save_checkpoint(out)
    loss_csv = out.with_suffix(".loss.csv")
    write_loss_log(trainer.log, loss_csv)
    figures.loss_curve_figure(trainer.log, out.with_suffix(".loss.png"))
    last = trainer.log[-1][2] if trainer.log else float("nan")
    print(f"trained {trainer.epoch} epochs ({trainer.iteration} iterations), "
          f"last loss {last:.4f}; checkpoint {out}")
    return 0


def cmd_propose(args) -> int:
    cfg = load_config(args.config)
    seqs = _load_feature_dir(args.features, cfg)
    dim = next(iter(seqs.values())).dim
    store, _, _, prop, _ = _load_joint_model(cfg, args.checkpoint, dim)
    out = {}
    for vid in sorted(seqs):
        entries = propose_stream(seqs[vid], store, prop,
                                 retain_all=args.retain_all)
        out[vid] = [[p.t_start, p.t_end, p.score, p.stride] for p in entries]
    _write_json(out, args.out)
    total = sum(len(v) for v in out.values())
    print(f"wrote {total} proposals for {len(out)} videos to {args.out}")
    return 0


def _caption_segments(args, cfg, seqs, store, vocab, prop, cap):
    """Per-video segment lists with hiddens, from proposals or GT events."""
    by_video = {}
    if args.proposals:
        dumped = _read_json(args.proposals, "proposals")
        for vid in sorted(dumped):
            if vid not in seqs:
                raise ValidationError(f"no features for video {vid!r}")
            rows = dumped[vid]
            hiddens = hiddens_for_intervals(
                [(row[1], int(row[3])) for row in rows], seqs[vid], store, prop)
            by_video[vid] = [
                _Segment(row[0], row[1], row[2], h)
                for row, h in zip(rows, hiddens)]
    else:
        records = load_dataset(args.data)
        for rec in sorted(records, key=lambda r: r.video_id):
            if rec.video_id not in seqs:
                raise ValidationError(f"no features for video {rec.video_id!r}")
            seq = seqs[rec.video_id]
            by_video[rec.video_id] = [
                _Segment(ev.t_start, ev.t_end, 1.0,
                         gt_interval_hidden(seq, store, prop,
                                            ev.t_start, ev.t_end))
                for ev in rec.events]
    return by_video


def cmd_caption(args) -> int:
    if bool(args.proposals) == bool(args.gt):
        raise ConfigError("pass exactly one of --proposals or --gt")
    if args.gt and not args.data:
        raise ConfigError("--gt captioning needs --data for the intervals")
    if args.beam < 1:
        raise ConfigError("beam width must be at least 1")
    cfg = load_config(args.config)
    seqs = _load_feature_dir(args.features, cfg)
    dim = next(iter(seqs.values())).dim
    store, vocab, mode, prop, cap = _load_joint_model(cfg, args.checkpoint, dim)
    by_video = _caption_segments(args, cfg, seqs, store, vocab, prop, cap)
    out = {}
    for vid in sorted(by_video):
        segments = by_video[vid]
        rows = []
        for i, seg in enumerate(segments):
            bundle = context_vectors(i, segments, store, mode)
            dec = beam_decode(bundle, store, cap, beam=args.beam)
            sentence = " ".join(decode(dec.tokens, vocab))
            rows.append([seg.t_start, seg.t_end, seg.score, sentence])
        out[vid] = rows
    _write_json(out, args.out)
    total = sum(len(v) for v in out.values())
    print(f"wrote {total} captions for {len(out)} videos to {args.out}")
    return 0


def cmd_eval_dense(args) -> int:
    raw = _read_json(args.captions, "captions")
    preds = {}
    for vid, rows in raw.items():
        preds[vid] = [CaptionedInterval(row[0], row[1], row[2],
                                        tuple(str(row[3]).split()))
                      for row in rows]
    records = load_dataset(args.gt)
    gt_by_video = {rec.video_id: rec for rec in records}
    dense = DenseCaptionConfig(tiou_thresholds=tuple(args.tiou),
                               top_n=args.top_n, metric=args.metric)
    breakdown = dense_caption_breakdown(preds, gt_by_video, dense)
    average = sum(breakdown.values()) / len(breakdown)
    report = {
        "metric": args.metric,
        "per_threshold": {f"{tau:g}": v for tau, v in breakdown.items()},
        "average": average,
    }
    out = Path(args.out)
    _write_json(report, out)
    figures.dense_bars_figure(breakdown, average, args.metric,
                              out.with_suffix(".png"))
    print(f"dense {args.metric}: {average:.6f} "
          f"(averaged over tIoU {', '.join(f'{t:g}' for t in args.tiou)})")
    return 0


class _Prop:
    __slots__ = ("t_start", "t_end", "score")

    def __init__(self, t_start, t_end, score):
        self.t_start = float(t_start)
        self.t_end = float(t_end)
        self.score = float(score)


def cmd_eval_recall(args) -> int:
    dumped = _read_json(args.proposals, "proposals")
    proposals = {vid: [_Prop(r[0], r[1], r[2]) for r in rows]
                 for vid, rows in dumped.items()}
    records = load_dataset(args.gt)
    gt_by_video = {rec.video_id: rec.events for rec in records}
    if args.max_n < 1:
        raise ConfigError("--max-n must be at least 1")
    table = recall_curve(proposals, gt_by_video, args.max_n, tuple(args.tiou))
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("n,tau,recall\n")
        for n, tau, rec in table.rows():
            fh.write(f"{n},{tau:g},{rec!r}\n")
    figures.recall_curve_figure(table, out.with_suffix(".png"))
    tail = ", ".join(f"{tau:g}: {table.at(args.max_n, tau):.4f}"
                     for tau in table.taus)
    print(f"recall at {args.max_n} proposals by tIoU -> {tail}")
    return 0


def cmd_train_retrieval(args) -> int:
    cfg = load_config(args.config)
    records = load_dataset(args.data)
    seqs = _load_feature_dir(args.features, cfg)
    dim = next(iter(seqs.values())).dim
    store, vocab, _, prop, cap = _load_joint_model(cfg, args.checkpoint, dim)
    joint_hash = read_checkpoint(args.checkpoint)[0]["config"]
    items = _retrieval_items(records, seqs, vocab, store, prop, cap)
    ret = retrieval_config(cfg, len(vocab))
    ret_store = ParamStore(cfg["seed"])
    # sigma well below 0.5 leaves the stacked LSTM output so small that the
    # unit-norm layer amplifies a degenerate direction and training stalls
    init_retrieval_params(ret_store, ret,
                          sigma=cfg.get("retrieval_init_sigma", 0.5))
    losses = train_retrieval(items, ret_store, ret,
                             epochs=cfg.get("retrieval_epochs", 30),
                             lr=cfg.get("retrieval_lr", 0.05),
                             momentum=cfg.get("retrieval_momentum", 0.9))
    out = Path(args.out)
    write_checkpoint(out, {
        "kind": "retrieval",
        "config": _retrieval_fingerprint(ret, joint_hash),
        "vocab": vocab.tokens,
        "epochs": len(losses),
    }, [(n, "param", ret_store.values[n])
        for n in retrieval_param_names(ret_store)])
    loss_csv = out.with_suffix(".loss.csv")
    with open(loss_csv, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(losses):
            fh.write(f"{i},{loss!r}\n")
    figures.retrieval_loss_figure(losses, out.with_suffix(".loss.png"))
    print(f"retrieval loss {losses[0]:.4f} -> {losses[-1]:.4f} over "
          f"{len(losses)} epochs; checkpoint {out}")
    return 0


def cmd_eval_retrieval(args) -> int:
    cfg = load_config(args.config)
    records = load_dataset(args.data)
    seqs = _load_feature_dir(args.features, cfg)
    dim = next(iter(seqs.values())).dim
    store, vocab, _, prop, cap = _load_joint_model(cfg, args.checkpoint, dim)
    joint_hash = read_checkpoint(args.checkpoint)[0]["config"]
    header, tensors = read_checkpoint(args.retrieval)
    if header.get("kind") != "retrieval":
        raise IncompatibilityError(
            f"{args.retrieval} is not a retrieval checkpoint")
    ret = retrieval_config(cfg, len(vocab))
    if header["config"] != _retrieval_fingerprint(ret, joint_hash):
        raise IncompatibilityError(
            "retrieval checkpoint was written under a different configuration")
    ret_store = ParamStore(0)
    init_retrieval_params(ret_store, ret)
    for name, kind, arr in tensors:
        if name not in ret_store.values or \
                ret_store.values[name].shape != arr.shape:
            raise IncompatibilityError(
                f"checkpoint tensor {name!r} does not fit this model")
        ret_store.values[name][...] = arr
    items = _retrieval_items(records, seqs, vocab, store, prop, cap)
    proposal_sets = [encode_proposals(h, ret_store, ret)[0] for h, _ in items]
    paragraph_sets = [encode_paragraph(s, ret_store, ret)[0] for _, s in items]
    S = similarity_matrix(proposal_sets, paragraph_sets)
    report = retrieval_report(S)
    report["n_videos"] = len(items)
    out = Path(args.out)
    _write_json(report, out)
    figures.retrieval_bars_figure(report, out.with_suffix(".png"))
    p2v = report["paragraph_to_video"]
    print(f"paragraph->video median rank {p2v['median_rank']} of "
          f"{len(items)}, R@1 {p2v['R@1']:.3f}, R@5 {p2v['R@5']:.3f}")
    return 0


def cmd_grad_check(args) -> int:
    results = run_gradient_suite(args.scope)
    worst = max(err for _, err in results)
    for name, err in results:
        flag = "ok" if err <= GRAD_TOLERANCE else "FAIL"
        print(f"{name}: max relative error {err:.3e} [{flag}]")
    if worst > GRAD_TOLERANCE:
        raise NumericError(
            f"gradient suite failed: worst relative error {worst:.3e} "
            f"exceeds {GRAD_TOLERANCE:g}")
    print(f"all {len(results)} scenarios within {GRAD_TOLERANCE:g}")
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eventcap",
        description="Temporal event proposals, context-aware captioning, "
                    "and retrieval over feature sequences.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a captioned video corpus")
    p.add_argument("--spec", required=True, help="flat JSON config with a seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="joint proposal + caption training")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset.json")
    p.add_argument("--features", required=True, help="feature directory")
    p.add_argument("--mode", default="full", choices=VARIANTS)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-after", type=int, default=None, metavar="N",
                   help="pause after N total iterations, leaving a resumable "
                        "checkpoint")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("propose", help="dump scored event proposals")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--retain-all", action="store_true",
                   help="keep every candidate, ignoring the score threshold")
    p.add_argument("--out", required=True, help="proposals JSON path")
    p.set_defaults(func=cmd_propose)

    p = sub.add_parser("caption", help="decode captions for proposals or GT")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--proposals", help="proposals JSON from the propose step")
    p.add_argument("--gt", action="store_true",
                   help="caption the ground-truth intervals instead")
    p.add_argument("--data", help="dataset.json (required with --gt)")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--out", required=True, help="captions JSON path")
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("eval-dense", help="tIoU-matched caption scoring")
    p.add_argument("--captions", required=True)
    p.add_argument("--gt", required=True, help="dataset.json")
    p.add_argument("--metric", default="meteor", choices=sorted(PAIR_METRICS))
    p.add_argument("--tiou", type=float, nargs="+", default=[0.3, 0.5, 0.7])
    p.add_argument("--top-n", type=int, default=1000)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_eval_dense)

    p = sub.add_parser("eval-recall", help="proposal recall against budget")
    p.add_argument("--proposals", required=True)
    p.add_argument("--gt", required=True, help="dataset.json")
    p.add_argument("--max-n", type=int, default=1000)
    p.add_argument("--tiou", type=float, nargs="+", default=[0.3, 0.5, 0.7])
    p.add_argument("--out", required=True, help="recall CSV path")
    p.set_defaults(func=cmd_eval_recall)

    p = sub.add_parser("train-retrieval", help="fit the bi-encoder ranker")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True, help="joint model checkpoint")
    p.add_argument("--out", required=True, help="retrieval checkpoint path")
    p.set_defaults(func=cmd_train_retrieval)

    p = sub.add_parser("eval-retrieval", help="paired ranking evaluation")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True, help="joint model checkpoint")
    p.add_argument("--retrieval", required=True, help="retrieval checkpoint")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("grad-check",
                       help="compare analytic gradients to central differences")
    p.add_argument("--scope", default="all", choices=SCOPES)
    p.set_defaults(func=cmd_grad_check)

    return parser


_ERROR_CODES = (
    (DeterminismError, "determinism", 3),
    (NumericError, "numeric", 3),
    (IncompatibilityError, "incompatible", 2),
    (GenerationError, "generation", 2),
    (ConfigError, "config", 2),
    (FormatError, "format", 2),
    (ValidationError, "validation", 2),
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EventCapError as exc:
        for cls, code, status in _ERROR_CODES:
            if isinstance(exc, cls):
                print(f"error[{code}]: {exc}", file=sys.stderr)
                return status
        print(f"error[internal]: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
