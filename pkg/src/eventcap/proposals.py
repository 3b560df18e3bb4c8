"""Multi-stride event proposals from strided LSTM passes.

For each stride s the feature rows are subsampled (0, s, 2s, ...) and an
LSTM private to that stride scores K candidate intervals per step.  Step m
looks back k * s * delta / fps seconds for k = 1..K from the window end
(m * s + 1) * delta / fps, so larger strides propose longer events.  No
suppression is applied; overlapping proposals from all strides are kept as
individual candidates.
"""

import math
from dataclasses import dataclass

import numpy as np

from .corpus import FeatureSequence
from .errors import ValidationError
from .numerics import ParamStore, affine, affine_backward, lstm_cell, lstm_cell_backward


@dataclass
class ProposalConfig:
    strides: tuple = (1, 2, 4, 8)
    proposals_per_step: int = 8          # K scores per strided step
    hidden_size: int = 512
    score_threshold: float = 0.5
    tiou_positive: float = 0.5

    def validate(self) -> None:
        s = tuple(self.strides)
        if not s or any(b <= a for a, b in zip(s, s[1:])) or s[0] < 1:
            raise ValidationError("strides must be strictly increasing positive integers")
        if self.proposals_per_step < 1 or self.hidden_size < 1:
            raise ValidationError("proposals_per_step and hidden_size must be >= 1")
        if not 0.0 < self.score_threshold < 1.0:
            raise ValidationError("score_threshold must lie in (0, 1)")
        if not 0.0 < self.tiou_positive <= 1.0:
            raise ValidationError("tiou_positive must lie in (0, 1]")


@dataclass(eq=False)
class EventProposal:
    t_start: float
    t_end: float
    score: float
    h: np.ndarray   # proposal-LSTM hidden at the emission step
    stride: int


def tiou(a, b) -> float:
    """Temporal intersection over union of two (start, end) intervals."""
    (a0, a1), (b0, b1) = a, b
    if a0 >= a1 or b0 >= b1:
        raise ValueError(f"degenerate interval: {a} vs {b}")
    inter = min(a1, b1) - max(a0, b0)
    if inter <= 0.0:
        return 0.0
    return inter / (max(a1, b1) - min(a0, b0))


def sample_stride(seq: FeatureSequence, s: int) -> np.ndarray:
    """Rows 0, s, 2s, ... as float64; length ceil(N / s)."""
    if s < 1:
        raise ValueError("stride must be >= 1")
    if s > seq.n_rows:
        raise ValueError(f"stride {s} exceeds the {seq.n_rows}-row sequence")
    return seq.matrix[::s].astype(np.float64)


def init_proposal_params(store: ParamStore, input_dim: int, config: ProposalConfig,
                         sigma: float = 0.01) -> None:
    H = config.hidden_size
    for s in config.strides:
        store.add(f"prop/s{s}/lstm/W_x", (4 * H, input_dim), sigma=sigma)
        store.add(f"prop/s{s}/lstm/W_h", (4 * H, H), sigma=sigma)
        store.add(f"prop/s{s}/lstm/b", (4 * H,), sigma=sigma)
        store.add(f"prop/s{s}/score/W", (config.proposals_per_step, H), sigma=sigma)
        store.add(f"prop/s{s}/score/b", (config.proposals_per_step,), sigma=sigma)


def proposal_param_names(store: ParamStore) -> list[str]:
    return [n for n in store.names() if n.startswith("prop/")]


def stride_intervals(seq: FeatureSequence, stride: int, K: int) -> np.ndarray:
    """(steps, K, 2) array of candidate intervals, starts clipped to 0."""
    steps = math.ceil(seq.n_rows / stride)
    step_sec = stride * seq.row_seconds
    ends = (np.arange(steps) * stride + 1) * seq.row_seconds
    ends = np.minimum(ends, seq.duration_s)
    lengths = np.arange(1, K + 1) * step_sec
    starts = np.maximum(ends[:, None] - lengths[None, :], 0.0)
    out = np.empty((steps, K, 2))
    out[:, :, 0] = starts
    out[:, :, 1] = ends[:, None]
    return out


def stride_forward(seq: FeatureSequence, store: ParamStore, config: ProposalConfig,
                   stride: int, keep_caches: bool = False):
    """LSTM pass over one stride's rows.

    Returns (hiddens (steps, H), logits (steps, K), caches); caches is None
    unless requested for a backward pass.
    """
    rows = sample_stride(seq, stride)
    W_x, W_h, b = (store[f"prop/s{stride}/lstm/{n}"] for n in ("W_x", "W_h", "b"))
    H = config.hidden_size
    h, c = np.zeros(H), np.zeros(H)
    hiddens = np.empty((rows.shape[0], H))
    caches = [] if keep_caches else None
    for m, x in enumerate(rows):
        h, c, cache = lstm_cell(x, h, c, W_x, W_h, b)
        hiddens[m] = h
        if keep_caches:
            caches.append(cache)
    logits = affine(hiddens, store[f"prop/s{stride}/score/W"],
                    store[f"prop/s{stride}/score/b"])
    return hiddens, logits, caches


def stride_backward(dlogits: np.ndarray, hiddens: np.ndarray, caches: list,
                    store: ParamStore, config: ProposalConfig, stride: int,
                    dhiddens: np.ndarray | None = None) -> None:
    """Accumulate gradients for one stride given dL/dlogits (and optionally
    extra dL/dhidden terms arriving from elsewhere in the graph)."""
    W = store[f"prop/s{stride}/score/W"]
    dh_seq, dW, db = affine_backward(dlogits, hiddens, W)
    store.grads[f"prop/s{stride}/score/W"] += dW
    store.grads[f"prop/s{stride}/score/b"] += db
    if dhiddens is not None:
        dh_seq = dh_seq + dhiddens
    W_x, W_h = store[f"prop/s{stride}/lstm/W_x"], store[f"prop/s{stride}/lstm/W_h"]
    H = config.hidden_size
    dh, dc = np.zeros(H), np.zeros(H)
    gW_x = store.grads[f"prop/s{stride}/lstm/W_x"]
    gW_h = store.grads[f"prop/s{stride}/lstm/W_h"]
    gb = store.grads[f"prop/s{stride}/lstm/b"]
    for m in range(len(caches) - 1, -1, -1):
        dh = dh + dh_seq[m]
        _, dh, dc, dWx_m, dWh_m, db_m = lstm_cell_backward(dh, dc, caches[m], W_x, W_h)
        gW_x += dWx_m
        gW_h += dWh_m
        gb += db_m


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def propose_stream(seq: FeatureSequence, store: ParamStore, config: ProposalConfig,
                   retain_all: bool = False) -> list[EventProposal]:
    """All retained proposals over all strides, in (stride, step, k) order."""
    config.validate()
    if seq.n_rows < 1:
        raise ValidationError("cannot propose on an empty feature sequence")
    K = config.proposals_per_step
    out = []
    for s in config.strides:
        hiddens, logits, _ = stride_forward(seq, store, config, s)
        scores = _sigmoid(logits)
        intervals = stride_intervals(seq, s, K)
        for m in range(hiddens.shape[0]):
            h = hiddens[m]
            for k in range(K):
                if retain_all or scores[m, k] >= config.score_threshold:
                    t0, t1 = intervals[m, k]
                    out.append(EventProposal(float(t0), float(t1),
                                             float(scores[m, k]), h.copy(), s))
    return out


def hiddens_for_intervals(entries, seq: FeatureSequence, store: ParamStore,
                          config: ProposalConfig) -> list[np.ndarray]:
    """Recompute emission-step hiddens for dumped (t_end, stride) proposals.

    The hidden attached to a streamed proposal depends only on its stride
    and emission step, so one forward pass per stride recovers it.
    """
    per_stride = {}
    out = []
    for t_end, stride in entries:
        if stride not in per_stride:
            if stride not in config.strides:
                raise ValidationError(f"stride {stride} not in config {config.strides}")
            per_stride[stride], _, _ = stride_forward(seq, store, config, stride)
        hiddens = per_stride[stride]
        m = int(round((t_end / seq.row_seconds - 1.0) / stride))
        if not 0 <= m < hiddens.shape[0]:
            raise ValidationError(
                f"proposal ending at {t_end} s has no stride-{stride} emission step"
            )
        out.append(hiddens[m].copy())
    return out


def make_targets(gt_events, seq: FeatureSequence, config: ProposalConfig) -> dict:
    """Per-stride (steps, K) arrays: 1 where a candidate interval reaches
    tiou_positive against any ground-truth event."""
    gt = [(ev.t_start, ev.t_end) if hasattr(ev, "t_start") else tuple(ev)
          for ev in gt_events]
    targets = {}
    for s in config.strides:
        intervals = stride_intervals(seq, s, config.proposals_per_step)
        t = np.zeros(intervals.shape[:2])
        for m in range(intervals.shape[0]):
            for k in range(intervals.shape[1]):
                iv = (intervals[m, k, 0], intervals[m, k, 1])
                if any(tiou(iv, g) >= config.tiou_positive for g in gt):
                    t[m, k] = 1.0
        targets[s] = t
    return targets


def _flatten(by_stride):
    if isinstance(by_stride, dict):
        return np.concatenate([np.asarray(by_stride[k], dtype=np.float64).reshape(-1)
                               for k in sorted(by_stride)])
    return np.asarray(by_stride, dtype=np.float64).reshape(-1)


def positive_weight(targets) -> float:
    """neg/pos ratio over one video's targets; 1 when nothing is positive."""
    t = _flatten(targets)
    pos = t.sum()
    if pos == 0:
        return 1.0
    return float((t.shape[0] - pos) / pos)


def proposal_loss(scores, targets) -> float:
    """Weighted binary cross-entropy, mean over all entries."""
    p = _flatten(scores)
    t = _flatten(targets)
    if p.shape != t.shape:
        raise ValueError(f"scores shape {p.shape} vs targets shape {t.shape}")
    w_pos = positive_weight(t)
    with np.errstate(divide="ignore"):
        terms = np.where(t == 1.0, -w_pos * np.log(p), -np.log1p(-p))
    return float(terms.mean())


def proposal_loss_from_logits(logits_by_stride: dict, targets: dict, scale: float = 1.0):
    """(loss, dlogits per stride): the training-path form of proposal_loss.

    Written against logits for stability: -log sigma(z) = softplus(-z).
    dL/dz = (w+ * t * (p - 1) + (1 - t) * p) / M, scaled.
    """
    total = sum(targets[s].size for s in targets)
    w_pos = positive_weight(targets)
    loss = 0.0
    dlogits = {}
    for s in sorted(targets):
        z = logits_by_stride[s]
        t = targets[s]
        p = _sigmoid(z)
        loss += float(np.where(t == 1.0, w_pos * np.logaddexp(0.0, -z),
                               np.logaddexp(0.0, z)).sum())
        dlogits[s] = scale * (w_pos * t * (p - 1.0) + (1.0 - t) * p) / total
    return scale * loss / total, dlogits


def rank_proposals(entries) -> list:
    """Descending score; ties by earlier start, then shorter length."""
    return sorted(entries, key=lambda e: (-e.score, e.t_start, e.t_end - e.t_start))


@dataclass
class RecallTable:
    taus: list
    recall: np.ndarray  # (max_n, len(taus)); row n-1 holds recall@n

    def at(self, n: int, tau: float) -> float:
        return float(self.recall[n - 1, self.taus.index(tau)])

    def rows(self):
        for i in range(self.recall.shape[0]):
            for j, tau in enumerate(self.taus):
                yield i + 1, tau, float(self.recall[i, j])


def recall_curve(proposals_by_video: dict, gt_by_video: dict, max_n: int,
                 thresholds) -> RecallTable:
    """recall[n][tau] = matched GT / total GT using each video's top-n.

    A ground-truth event is matched when at least one of the top-n ranked
    proposals reaches tIoU >= tau; counts aggregate across the dataset.
    """
    taus = list(thresholds)
    matched = np.zeros((max_n, len(taus)))
    total_gt = 0
    for vid, gt_events in gt_by_video.items():
        gt = [(ev.t_start, ev.t_end) if hasattr(ev, "t_start") else tuple(ev)
              for ev in gt_events]
        total_gt += len(gt)
        ranked = rank_proposals(proposals_by_video.get(vid, []))[:max_n]
        if not ranked:
            continue
        iou = np.array([[tiou((p.t_start, p.t_end), g) for p in ranked] for g in gt])
        for gi in range(len(gt)):
            for j, tau in enumerate(taus):
                hits = np.nonzero(iou[gi] >= tau)[0]
                if hits.size:
                    matched[hits[0]:, j] += 1.0
    if total_gt == 0:
        raise ValidationError("recall needs at least one ground-truth event")
    return RecallTable(taus, matched / total_gt)
