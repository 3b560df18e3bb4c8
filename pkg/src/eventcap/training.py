"""Joint alternating training of the proposal and caption modules.

One iteration consumes one video.  Both loss terms are evaluated every
iteration for logging, but gradients flow only through the active phase:
caption steps never move proposal weights and vice versa.  Early epochs run
with all neighboring events masked so the decoder first learns to caption
events in isolation; after that, captions are trained on gated proposals
(falling back to the ground-truth interval when nothing passes the gate).

Checkpoints are single binary files holding every parameter and velocity
tensor plus the counters needed to resume bit-identically.
"""

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .captioning import (CaptionConfig, ContextMode, caption_param_names,
                         event_caption_loss, init_caption_params)
from .corpus import encode_sentence, time_to_row
from .errors import (ConfigError, FormatError, IncompatibilityError,
                     NumericError, ValidationError)
from .numerics import ParamStore, lstm_cell, make_velocity, sgd_momentum_step
from .proposals import (ProposalConfig, _sigmoid, init_proposal_params,
                        make_targets, proposal_loss_from_logits,
                        proposal_param_names, stride_backward, stride_forward,
                        stride_intervals, tiou)
from .rng import SplitMix64, derive

CHECKPOINT_MAGIC = b"DVCK"
CHECKPOINT_VERSION = 1
PHASES = ("caption", "proposal")


class SkipVideo(Exception):
    """Raised when a video offers nothing to train on this iteration."""


@dataclass
class TrainConfig:
    lambda_cap: float = 1.0
    lambda_prop: float = 0.1
    lr_caption: float = 1e-2
    lr_proposal: float = 1e-3
    momentum: float = 0.9
    alternate_every: int = 500
    warmup_epochs: int = 10
    batch_size: int = 1
    caption_iou_gate: float = 0.5
    pair_with_proposals: bool = True
    max_epochs: int = 20
    init_sigma: float = 0.01
    seed: int = 0

    def validate(self):
        if self.lambda_cap < 0 or self.lambda_prop < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.lr_caption <= 0 or self.lr_proposal <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.alternate_every < 1:
            raise ConfigError("alternation period must be at least 1 iteration")
        if self.warmup_epochs < 0:
            raise ConfigError("warm-up epoch count cannot be negative")
        if self.batch_size != 1:
            raise ConfigError("only batch size 1 is supported")
        if not 0.0 < self.caption_iou_gate <= 1.0:
            raise ConfigError("caption tIoU gate must lie in (0, 1]")
        if self.max_epochs < 1:
            raise ConfigError("need at least one epoch")
        if self.init_sigma <= 0:
            raise ConfigError("init_sigma must be positive")


def phase_for(iteration: int, alternate_every: int) -> str:
    return PHASES[(iteration // alternate_every) % 2]


@dataclass
class CaptionPair:
    """One caption training example: an event hidden plus its sentence."""
    t_end: float
    h: np.ndarray
    sentence: list


def gt_interval_hidden(seq, store: ParamStore, config: ProposalConfig,
                       t_start: float, t_end: float) -> np.ndarray:
    """Final hidden of the smallest-stride LSTM run across an interval's rows."""
    s = config.strides[0]
    r0 = time_to_row(t_start, seq)
    r1 = int(math.ceil(t_end * seq.fps / seq.delta_frames))
    r1 = min(seq.n_rows, max(r1, r0 + 1))
    rows = seq.matrix[r0:r1:s].astype(np.float64)
    W_x, W_h, b = (store[f"prop/s{s}/lstm/{n}"] for n in ("W_x", "W_h", "b"))
    h = np.zeros(config.hidden_size)
    c = np.zeros(config.hidden_size)
    for x in rows:
        h, c, _ = lstm_cell(x, h, c, W_x, W_h, b)
    return h


def select_caption_pairs(record, seq, vocab, store: ParamStore,
                         prop_config: ProposalConfig, train_config: TrainConfig,
                         hiddens_by_stride, logits_by_stride,
                         warmup: bool, max_len: int) -> list:
    """One pair per GT event.

    Warm-up pairs every GT sentence with a hidden computed over its own
    interval.  Afterwards each GT takes the retained proposal that overlaps
    it best at tIoU >= caption_iou_gate, keeping the GT-interval fallback
    for events no proposal reaches yet.  When pair_with_proposals is off the
    fallback applies throughout; streamed hiddens carry earlier events in
    their state, so interval-local conditioning is the cleaner choice when
    measuring what the explicit context pathway contributes.
    """
    if not record.events:
        raise SkipVideo(record.video_id)

    def fallback(ev):
        return gt_interval_hidden(seq, store, prop_config, ev.t_start, ev.t_end)

    pairs = []
    retained = []
    if not warmup and train_config.pair_with_proposals:
        for s in prop_config.strides:
            scores = _sigmoid(logits_by_stride[s])
            intervals = stride_intervals(seq, s, prop_config.proposals_per_step)
            for m, k in zip(*np.nonzero(scores >= prop_config.score_threshold)):
                retained.append((float(intervals[m, k, 0]),
                                 float(intervals[m, k, 1]), s, int(m)))
    for ev in record.events:
        sentence = encode_sentence(ev.tokens, vocab, max_len)
        best = None
        for idx, (t0, t1, s, m) in enumerate(retained):
            overlap = tiou((t0, t1), (ev.t_start, ev.t_end))
            if overlap >= train_config.caption_iou_gate and \
                    (best is None or overlap > best[0]):
                best = (overlap, idx)
        if best is None:
            pairs.append(CaptionPair(ev.t_end, fallback(ev), sentence))
        else:
            t0, t1, s, m = retained[best[1]]
            pairs.append(CaptionPair(t1, hiddens_by_stride[s][m].copy(), sentence))
    return pairs


def joint_loss(record, seq, vocab, store: ParamStore,
               prop_config: ProposalConfig, cap_config: CaptionConfig,
               train_config: TrainConfig, mode: ContextMode, phase: str,
               warmup: bool = False, backward: bool = True):
    """Evaluate both loss terms on one video; accumulate the active phase's
    gradients.  Returns (weighted total, caption term, proposal term)."""
    if phase not in PHASES:
        raise ValidationError(f"unknown training phase {phase!r}")
    keep = backward and phase == "proposal"
    hiddens, logits, caches = {}, {}, {}
    for s in prop_config.strides:
        hiddens[s], logits[s], caches[s] = stride_forward(
            seq, store, prop_config, s, keep_caches=keep)
    targets = make_targets(record.events, seq, prop_config)
    prop_term, dlogits = proposal_loss_from_logits(logits, targets)

    pairs = select_caption_pairs(record, seq, vocab, store, prop_config,
                                 train_config, hiddens, logits, warmup,
                                 cap_config.max_len)
    eff_mode = ContextMode.from_name("none") if warmup else mode
    scale = None
    if backward and phase == "caption":
        scale = train_config.lambda_cap / len(pairs)
    cap_term = 0.0
    for i, pair in enumerate(pairs):
        cap_term += event_caption_loss(i, pairs, pair.sentence, store,
                                       cap_config, eff_mode, grad_scale=scale)
    cap_term /= len(pairs)

    if keep:
        for s in prop_config.strides:
            stride_backward(train_config.lambda_prop * dlogits[s], hiddens[s],
                            caches[s], store, prop_config, s)
    total = train_config.lambda_cap * cap_term + train_config.lambda_prop * prop_term
    return total, cap_term, prop_term


def config_fingerprint(prop_config, cap_config, train_config, mode,
                       feature_dim: int) -> str:
    payload = {
        "proposal": asdict(prop_config),
        "caption": asdict(cap_config),
        "train": asdict(train_config),
        "mode": mode.name,
        "feature_dim": feature_dim,
    }
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def write_checkpoint(path, header: dict, tensors) -> None:
    """Binary checkpoint: magic, version, JSON header, little-endian f8 blobs.

    tensors is an ordered list of (name, kind, array); the header carries
    their names and shapes so the payload needs no per-tensor framing.
    """
    table = [{"name": n, "kind": k, "shape": list(a.shape)}
             for n, k, a in tensors]
    head = json.dumps({**header, "tensors": table},
                      sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(head)))
        fh.write(head)
        for _, _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_checkpoint(path):
    """(header, [(name, kind, array), ...]) from a checkpoint file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, head_len = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[12:12 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable checkpoint header") from exc
    tensors = []
    offset = 12 + head_len
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise FormatError(f"{path}: truncated checkpoint payload")
        arr = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        tensors.append((entry["name"], entry["kind"], arr))
        offset = end
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return header, tensors


class Trainer:
    """Owns the parameter store, optimizer state, and iteration counters."""

    def __init__(self, records, features, vocab, prop_config: ProposalConfig,
                 cap_config: CaptionConfig, train_config: TrainConfig,
                 mode: ContextMode):
        prop_config.validate()
        cap_config.validate()
        train_config.validate()
        if not records:
            raise ValidationError("training needs at least one video")
        for rec in records:
            if rec.video_id not in features:
                raise ValidationError(f"no features for video {rec.video_id!r}")
        dims = {features[rec.video_id].dim for rec in records}
        if len(dims) != 1:
            raise ValidationError(f"mixed feature dims {sorted(dims)}")
        if cap_config.context_dim != prop_config.hidden_size:
            raise ConfigError("caption context width must equal the proposal "
                              "hidden size")
        if cap_config.vocab_size != len(vocab.tokens):
            raise ConfigError("caption vocab size does not match the vocabulary")
        self.records = list(records)
        self.features = features
        self.vocab = vocab
        self.prop_config = prop_config
        self.cap_config = cap_config
        self.train_config = train_config
        self.mode = mode
        self.feature_dim = dims.pop()
        self.fingerprint = config_fingerprint(prop_config, cap_config,
                                              train_config, mode,
                                              self.feature_dim)
        self.store = ParamStore(train_config.seed)
        init_proposal_params(self.store, self.feature_dim, prop_config,
                             sigma=train_config.init_sigma)
        init_caption_params(self.store, cap_config,
                            sigma=train_config.init_sigma)
        self.velocity = make_velocity(self.store)
        self.epoch = 0
        self.pos_in_epoch = 0
        self.iteration = 0
        self.log = []

    # tag separating the epoch-order stream from any other use of the seed
    ORDER_STREAM = 0xE0

    def _epoch_order(self, epoch: int) -> list:
        ids = sorted(rec.video_id for rec in self.records)
        SplitMix64(derive(self.train_config.seed, self.ORDER_STREAM,
                          epoch)).shuffle(ids)
        return ids

    def run(self, epochs: int | None = None, abort_path=None,
            stop_after_iteration: int | None = None) -> list:
        """Train until max_epochs (or the given earlier epoch bound).

        stop_after_iteration pauses mid-epoch once that many iterations have
        run in total, leaving the trainer resumable.  Divergence (non-finite
        loss, gradient, or post-step parameter) rolls the step back, saves
        the finite state to abort_path when given, then raises.
        """
        by_id = {rec.video_id: rec for rec in self.records}
        limit = self.train_config.max_epochs if epochs is None else epochs
        cfg = self.train_config
        while self.epoch < limit:
            order = self._epoch_order(self.epoch)
            warmup = self.epoch < cfg.warmup_epochs
            while self.pos_in_epoch < len(order):
                if stop_after_iteration is not None and \
                        self.iteration >= stop_after_iteration:
                    return self.log
                record = by_id[order[self.pos_in_epoch]]
                seq = self.features[record.video_id]
                phase = phase_for(self.iteration, cfg.alternate_every)
                try:
                    total, cap_term, prop_term = joint_loss(
                        record, seq, self.vocab, self.store, self.prop_config,
                        self.cap_config, cfg, self.mode, phase, warmup=warmup)
                except SkipVideo:
                    self.pos_in_epoch += 1
                    continue
                if not math.isfinite(total):
                    self.store.zero_grads()
                    if abort_path is not None:
                        self.save_checkpoint(abort_path)
                    raise NumericError(
                        f"training diverged at iteration {self.iteration} "
                        f"(video {record.video_id!r}, loss {total!r})")
                if phase == "caption":
                    names, lr = caption_param_names(self.store), cfg.lr_caption
                else:
                    names, lr = proposal_param_names(self.store), cfg.lr_proposal
                kept = {n: (self.store.values[n].copy(), self.velocity[n].copy())
                        for n in names}
                try:
                    sgd_momentum_step(self.store, self.velocity, lr,
                                      cfg.momentum, names=names)
                except NumericError:
                    if abort_path is not None:
                        self.save_checkpoint(abort_path)
                    raise
                if any(not np.isfinite(self.store.values[n]).all()
                       or not np.isfinite(self.velocity[n]).all()
                       for n in names):
                    for n, (value, vel) in kept.items():
                        self.store.values[n][...] = value
                        self.velocity[n][...] = vel
                    if abort_path is not None:
                        self.save_checkpoint(abort_path)
                    raise NumericError(
                        f"optimizer step overflowed at iteration "
                        f"{self.iteration} (video {record.video_id!r})")
                self.log.append((self.iteration, phase, total, cap_term,
                                 prop_term))
                self.iteration += 1
                self.pos_in_epoch += 1
            self.pos_in_epoch = 0
            self.epoch += 1
        return self.log

    # -- checkpoint I/O ----------------------------------------------------

    def save_checkpoint(self, path) -> None:
        tensors = [(name, "param", self.store.values[name])
                   for name in self.store.names()]
        tensors += [(name, "velocity", self.velocity[name])
                    for name in self.store.names()]
        write_checkpoint(path, {
            "config": self.fingerprint,
            "epoch": self.epoch,
            "pos_in_epoch": self.pos_in_epoch,
            "iteration": self.iteration,
            "vocab": self.vocab.tokens,
            "mode": self.mode.name,
        }, tensors)

    @classmethod
    def resume(cls, path, records, features, vocab, prop_config, cap_config,
               train_config, mode: ContextMode) -> "Trainer":
        trainer = cls(records, features, vocab, prop_config, cap_config,
                      train_config, mode)
        header, tensors = read_checkpoint(path)
        if header["config"] != trainer.fingerprint:
            raise IncompatibilityError(
                "checkpoint was written under a different configuration")
        if header["vocab"] != vocab.tokens:
            raise IncompatibilityError("checkpoint vocabulary does not match")
        for name, kind, arr in tensors:
            dest = trainer.store.values if kind == "param" else trainer.velocity
            if name not in dest or dest[name].shape != arr.shape:
                raise IncompatibilityError(
                    f"checkpoint tensor {name!r} ({kind}) does not fit this model")
            dest[name][...] = arr
        trainer.epoch = header["epoch"]
        trainer.pos_in_epoch = header["pos_in_epoch"]
        trainer.iteration = header["iteration"]
        return trainer


def train(records, features, vocab, prop_config, cap_config, train_config,
          mode="full"):
    """One-call training; returns (trainer, per-iteration loss log)."""
    if isinstance(mode, str):
        mode = ContextMode.from_name(mode)
    trainer = Trainer(records, features, vocab, prop_config, cap_config,
                      train_config, mode)
    log = trainer.run()
    return trainer, log


def write_loss_log(log, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,phase,loss,caption_loss,proposal_loss\n")
        for iteration, phase, total, cap_term, prop_term in log:
            fh.write(f"{iteration},{phase},{total!r},{cap_term!r},{prop_term!r}\n")
