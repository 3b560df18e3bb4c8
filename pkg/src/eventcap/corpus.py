"""Dataset records, feature-file ingestion, vocabulary, synthetic corpora.

A video record is a duration plus a list of timestamped, tokenized event
sentences.  Features are per-window vectors: row n of an N x D matrix covers
video time [n*delta/fps, (n+1)*delta/fps).  The synthetic generator replaces
real feature extraction at desk scale: each event carries a latent activity
whose prototype vector is written into the rows it covers, and captions are
activity templates that, with configurable probability, end in a token
determined by the previous event's activity.
"""

import json
import math
import struct
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, GenerationError, ValidationError
from .rng import SplitMix64

FEATURE_MAGIC = b"DVCF"
FEATURE_VERSION = 1

# one feature row per second under the default temporal resolution
DEFAULT_DELTA_FRAMES = 16
DEFAULT_FPS = 16.0

MIN_EVENT_SECONDS = 2.0

_NOUNS = ("man woman dog girl boy chef runner crowd team horse "
          "cat bird coach player singer child couple artist clown diver").split()
_VERBS = ("running jumping cooking dancing swimming climbing painting singing "
          "drumming skating rowing boxing juggling surfing knitting diving "
          "fencing skiing lifting throwing").split()


@dataclass
class Event:
    t_start: float
    t_end: float
    tokens: list[str]


@dataclass
class VideoRecord:
    video_id: str
    duration_s: float
    events: list[Event]

    def validate(self) -> None:
        if self.duration_s <= 0:
            raise ValidationError(f"video {self.video_id!r}: duration must be positive")
        if not self.events:
            raise ValidationError(f"video {self.video_id!r}: needs at least one event")
        for k, ev in enumerate(self.events):
            if not 0 <= ev.t_start < ev.t_end:
                raise ValidationError(
                    f"video {self.video_id!r} event {k}: bad interval "
                    f"[{ev.t_start}, {ev.t_end}]"
                )
            if ev.t_end > self.duration_s:
                raise ValidationError(
                    f"video {self.video_id!r} event {k}: t_end {ev.t_end} exceeds "
                    f"duration {self.duration_s}"
                )
            if not ev.tokens:
                raise ValidationError(f"video {self.video_id!r} event {k}: empty sentence")


@dataclass
class FeatureSequence:
    video_id: str
    delta_frames: int
    fps: float
    matrix: np.ndarray  # N x D, float32 (the on-disk dtype)

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim != 2 or self.matrix.shape[0] < 1 or self.matrix.shape[1] < 1:
            raise ValidationError(
                f"feature matrix for {self.video_id!r} must be N x D with N, D >= 1"
            )
        if self.delta_frames <= 0 or self.fps <= 0:
            raise ValidationError("delta_frames and fps must be positive")

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def row_seconds(self) -> float:
        return self.delta_frames / self.fps

    @property
    def duration_s(self) -> float:
        return self.n_rows * self.row_seconds


def time_to_row(t_seconds: float, seq: FeatureSequence) -> int:
    """floor(t * fps / delta), clamped into [0, N-1]."""
    if t_seconds < 0:
        raise ValueError(f"time {t_seconds} is negative")
    return min(int(math.floor(t_seconds / seq.row_seconds)), seq.n_rows - 1)


# ---------------------------------------------------------------------------
# dataset JSON


def load_dataset(path) -> list[VideoRecord]:
    """Parse {video_id: {duration, timestamps, sentences}} into records."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"dataset {path}: not valid JSON ({e})") from e
    if not isinstance(raw, dict):
        raise FormatError(f"dataset {path}: top level must be an object")
    records = []
    for vid, entry in raw.items():
        if not isinstance(entry, dict):
            raise FormatError(f"dataset {path}: entry {vid!r} must be an object")
        for key in ("duration", "timestamps", "sentences"):
            if key not in entry:
                raise FormatError(f"dataset {path}: entry {vid!r} missing field {key!r}")
        stamps, sents = entry["timestamps"], entry["sentences"]
        if len(stamps) != len(sents):
            raise ValidationError(
                f"video {vid!r}: {len(stamps)} timestamps vs {len(sents)} sentences"
            )
        events = []
        for ts, sent in zip(stamps, sents):
            if not (isinstance(ts, (list, tuple)) and len(ts) == 2):
                raise FormatError(f"video {vid!r}: timestamp {ts!r} is not a pair")
            events.append(Event(float(ts[0]), float(ts[1]), str(sent).split()))
        rec = VideoRecord(str(vid), float(entry["duration"]), events)
        rec.validate()
        records.append(rec)
    return records


def save_dataset(records: list[VideoRecord], path) -> None:
    out = {}
    for rec in records:
        out[rec.video_id] = {
            "duration": rec.duration_s,
            "timestamps": [[ev.t_start, ev.t_end] for ev in rec.events],
            "sentences": [" ".join(ev.tokens) for ev in rec.events],
        }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(out, f, indent=2)
        f.write("\n")


# ---------------------------------------------------------------------------
# feature binary files

_HEADER = struct.Struct("<III")  # version, N, D after the 4 magic bytes


def store_features(seq: FeatureSequence, path) -> None:
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(_HEADER.pack(FEATURE_VERSION, seq.n_rows, seq.dim))
        f.write(np.ascontiguousarray(seq.matrix, dtype="<f4").tobytes())


def load_features(path, delta_frames: int = DEFAULT_DELTA_FRAMES,
                  fps: float = DEFAULT_FPS, video_id: str | None = None) -> FeatureSequence:
    """Read one N x D float32 matrix; temporal metadata is supplied by the caller."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != FEATURE_MAGIC:
        raise FormatError(f"feature file {path}: bad magic {blob[:4]!r}")
    if len(blob) < 4 + _HEADER.size:
        raise FormatError(f"feature file {path}: truncated header")
    version, n, d = _HEADER.unpack_from(blob, 4)
    if version != FEATURE_VERSION:
        raise FormatError(f"feature file {path}: unsupported version {version}")
    if n < 1 or d < 1:
        raise FormatError(f"feature file {path}: bad dimensions {n} x {d}")
    payload = blob[4 + _HEADER.size:]
    expected = n * d * 4
    if len(payload) != expected:
        raise FormatError(
            f"feature file {path}: payload holds {len(payload)} bytes, "
            f"expected {expected} for {n} x {d}"
        )
    matrix = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    bad = np.argwhere(~np.isfinite(matrix))
    if bad.size:
        r, c = bad[0]
        raise FormatError(f"feature file {path}: non-finite value at row {r}, column {c}")
    if video_id is None:
        name = str(path)
        video_id = name.rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return FeatureSequence(video_id, delta_frames, fps, matrix.copy())


# ---------------------------------------------------------------------------
# vocabulary

PAD, SOS, EOS, UNK = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<sos>", "<eos>", "<unk>")


class Vocabulary:
    """Token/index map with fixed reserved slots PAD=0, SOS=1, EOS=2, UNK=3."""

    def __init__(self, tokens: list[str], min_count: int = 1):
        self.min_count = min_count
        self.tokens = list(RESERVED_TOKENS) + list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValidationError("vocabulary tokens must be unique")

    def __len__(self) -> int:
        return len(self.tokens)

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNK)


def build_vocab(records: list[VideoRecord], min_count: int = 1) -> Vocabulary:
    """Index tokens with frequency >= min_count, most frequent first, ties a-z."""
    if min_count < 1:
        raise ValidationError("min_count must be >= 1")
    counts = Counter()
    for rec in records:
        for ev in rec.events:
            counts.update(ev.tokens)
    if not counts:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count and t not in RESERVED_TOKENS),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(kept, min_count)


def encode_sentence(tokens: list[str], vocab: Vocabulary, max_len: int = 30) -> list[int]:
    """Truncate to max_len tokens, map through the vocab, append EOS."""
    return [vocab.lookup(t) for t in tokens[:max_len]] + [EOS]


def decode(indices, vocab: Vocabulary) -> list[str]:
    out = []
    for i in indices:
        if not 0 <= i < len(vocab):
            raise IndexError(f"index {i} outside vocabulary of size {len(vocab)}")
        if i >= len(RESERVED_TOKENS):
            out.append(vocab.tokens[i])
    return out


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass
class SyntheticSpec:
    n_videos: int = 50
    n_activity_types: int = 8
    events_per_video: tuple[int, int] = (2, 4)
    duration_range: tuple[float, float] = (20.0, 60.0)
    overlap_probability: float = 0.3
    dependency_strength: float = 0.9
    feature_noise_sigma: float = 0.3
    seed: int = 0
    feature_dim: int = 32
    delta_frames: int = DEFAULT_DELTA_FRAMES
    fps: float = DEFAULT_FPS

    def validate(self) -> None:
        if min(self.n_videos, self.n_activity_types, self.feature_dim,
               self.delta_frames) < 1 or self.fps <= 0:
            raise ValidationError("synthetic spec counts must be positive")
        lo, hi = self.events_per_video
        if not 1 <= lo <= hi:
            raise ValidationError("events_per_video range must satisfy 1 <= lo <= hi")
        dlo, dhi = self.duration_range
        if not 0 < dlo <= dhi:
            raise ValidationError("duration range must satisfy 0 < lo <= hi")
        for p in (self.overlap_probability, self.dependency_strength):
            if not 0.0 <= p <= 1.0:
                raise ValidationError("probabilities must lie in [0, 1]")
        if self.feature_noise_sigma < 0:
            raise ValidationError("feature_noise_sigma must be nonnegative")


def activity_words(k: int) -> tuple[str, str]:
    """Distinct (noun, verb) for activity k; suffixed past the base word lists."""
    suffix = "" if k < len(_VERBS) else str(k // len(_VERBS))
    return _NOUNS[k % len(_NOUNS)] + suffix, _VERBS[k % len(_VERBS)] + suffix


def dependency_token(prev_activity: int) -> str:
    return "after_" + activity_words(prev_activity)[1]


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[VideoRecord], list[FeatureSequence]]:
    """Deterministic synthetic corpus; see the module docstring for the model."""
    spec.validate()
    lo, hi = spec.events_per_video
    dlo, dhi = spec.duration_range
    if hi * MIN_EVENT_SECONDS > dlo:
        raise GenerationError(
            f"{hi} events of at least {MIN_EVENT_SECONDS} s cannot fit a "
            f"{dlo} s video"
        )
    rng = SplitMix64(spec.seed)
    prototypes = rng.normals((spec.n_activity_types, spec.feature_dim))
    row_seconds = spec.delta_frames / spec.fps
    records, features = [], []
    for v in range(spec.n_videos):
        duration = float(int(dlo) + rng.below(int(dhi) - int(dlo) + 1))
        n_ev = lo + rng.below(hi - lo + 1)
        activities = [rng.below(spec.n_activity_types) for _ in range(n_ev)]
        # contiguous segments with a floor length, then optional back-extension
        gaps = rng.uniforms(n_ev)
        total = gaps.sum()
        if total == 0.0:
            gaps = np.full(n_ev, 1.0)
            total = float(n_ev)
        seg_len = MIN_EVENT_SECONDS + (duration - n_ev * MIN_EVENT_SECONDS) * gaps / total
        bounds = np.concatenate([[0.0], np.cumsum(seg_len)])
        bounds[-1] = duration
        events = []
        for j in range(n_ev):
            t_start, t_end = float(bounds[j]), float(bounds[j + 1])
            if j > 0 and rng.uniform() < spec.overlap_probability:
                reach = 0.5 * min(seg_len[j - 1], seg_len[j])
                t_start = max(0.0, t_start - (0.25 + 0.5 * rng.uniform()) * reach)
            noun, verb = activity_words(activities[j])
            det = "a" if rng.uniform() < 0.5 else "the"
            tokens = [det, noun, "is", verb]
            if j > 0 and rng.uniform() < spec.dependency_strength:
                tokens.append(dependency_token(activities[j - 1]))
            events.append(Event(t_start, t_end, tokens))
        record = VideoRecord(f"v{v:04d}", duration, events)
        record.validate()
        records.append(record)

        n_rows = max(1, int(math.ceil(duration / row_seconds)))
        matrix = np.zeros((n_rows, spec.feature_dim), dtype=np.float64)
        row_start = np.arange(n_rows) * row_seconds
        for ev, act in zip(events, activities):
            covered = (np.minimum(row_start + row_seconds, ev.t_end)
                       - np.maximum(row_start, ev.t_start)) > 1e-9
            matrix[covered] += prototypes[act]
        matrix += spec.feature_noise_sigma * rng.normals((n_rows, spec.feature_dim))
        features.append(FeatureSequence(record.video_id, spec.delta_frames, spec.fps,
                                        matrix))
    return records, features
