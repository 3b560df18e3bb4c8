"""Context-aware caption decoding over event proposals.

Every event is captioned from three vectors of the proposal hidden size H:
a weighted mean of hidden states from events that end strictly earlier
(the past bucket), the event's own hidden state, and a weighted mean over
events that end at the same time or later (the future bucket; ties go to
the future).  Weights are either a learned unnormalized dot attention
w_j = (w_a h_i + b_a) . h_j or the constant 1 (mean-pool ablation); each
bucket sum is divided by the bucket count, and an empty bucket contributes
a zero vector.

The concatenated (past, self, future) triple enters a 2-layer LSTM as the
step-0 input through a learned projection; step 1 feeds the start token and
word logits are read from step 1 onward.
"""

from dataclasses import dataclass

import numpy as np

from .corpus import EOS, SOS
from .errors import ValidationError
from .numerics import (
    ParamStore, affine, affine_backward, lstm_cell_backward, lstm_step, softmax_xent,
    zero_state,
)

VARIANT_NAMES = ("none", "online-attn", "online", "full-attn", "full")


@dataclass(frozen=True)
class ContextMode:
    scope: str       # none | past_only | past_and_future
    weighting: str   # dot_attention | uniform

    def __post_init__(self):
        if self.scope not in ("none", "past_only", "past_and_future"):
            raise ValidationError(f"unknown context scope {self.scope!r}")
        if self.weighting not in ("dot_attention", "uniform"):
            raise ValidationError(f"unknown context weighting {self.weighting!r}")

    @classmethod
    def from_name(cls, name: str) -> "ContextMode":
        table = {
            "none": ("none", "uniform"),
            "online-attn": ("past_only", "uniform"),
            "online": ("past_only", "dot_attention"),
            "full-attn": ("past_and_future", "uniform"),
            "full": ("past_and_future", "dot_attention"),
        }
        if name not in table:
            raise ValidationError(f"unknown variant {name!r}; pick from {VARIANT_NAMES}")
        return cls(*table[name])

    @property
    def name(self) -> str:
        for n in VARIANT_NAMES:
            if ContextMode.from_name(n) == self:
                return n
        return f"{self.scope}/{self.weighting}"


@dataclass
class ContextBundle:
    h_past: np.ndarray
    h_self: np.ndarray
    h_future: np.ndarray

    def concat(self) -> np.ndarray:
        return np.concatenate([self.h_past, self.h_self, self.h_future])


@dataclass
class CaptionConfig:
    vocab_size: int
    context_dim: int          # H: proposal hidden size feeding the bundle
    embed_dim: int = 256      # E
    hidden_size: int = 512    # per LSTM layer
    max_len: int = 30         # decoded words, EOS excluded
    reinject_context: bool = False  # add the projected bundle to every word input

    def validate(self):
        if self.vocab_size < 4:
            raise ValidationError("vocabulary must hold at least the reserved tokens")
        if min(self.context_dim, self.embed_dim, self.hidden_size, self.max_len) < 1:
            raise ValidationError("caption model dims must be positive")


@dataclass
class DecodedCaption:
    tokens: list[int]
    logprob: float


def init_caption_params(store: ParamStore, config: CaptionConfig,
                        sigma: float = 0.01) -> None:
    config.validate()
    V, E, U, H = (config.vocab_size, config.embed_dim, config.hidden_size,
                  config.context_dim)
    store.add("cap/embed", (V, E), sigma=sigma)
    store.add("cap/in_proj/W", (E, 3 * H), sigma=sigma)
    store.add("cap/in_proj/b", (E,), sigma=sigma)
    for layer in (0, 1):
        X = E if layer == 0 else U
        store.add(f"cap/lstm{layer}/W_x", (4 * U, X), sigma=sigma)
        store.add(f"cap/lstm{layer}/W_h", (4 * U, U), sigma=sigma)
        store.add(f"cap/lstm{layer}/b", (4 * U,), sigma=sigma)
    store.add("cap/out/W", (V, U), sigma=sigma)
    store.add("cap/out/b", (V,), sigma=sigma)
    store.add("cap/attn/w_a", (H, H), sigma=sigma)
    store.add("cap/attn/b_a", (H,), sigma=sigma)


def caption_param_names(store: ParamStore) -> list[str]:
    return [n for n in store.names() if n.startswith("cap/")]


# ---------------------------------------------------------------------------
# context


def bucket_events(i: int, events) -> tuple[list[int], list[int]]:
    """Indices j != i split by end time: strictly earlier ends are past,
    equal or later ends are future."""
    if not 0 <= i < len(events):
        raise IndexError(f"event index {i} outside list of {len(events)}")
    end_i = events[i].t_end
    past = [j for j in range(len(events)) if j != i and events[j].t_end < end_i]
    future = [j for j in range(len(events)) if j != i and events[j].t_end >= end_i]
    return past, future


def attention_weights(h_i: np.ndarray, others, store: ParamStore,
                      weighting: str) -> list[float]:
    """Unnormalized scalar weight per neighbor hidden."""
    if weighting == "uniform":
        return [1.0] * len(others)
    a = store["cap/attn/w_a"] @ h_i + store["cap/attn/b_a"]
    return [float(a @ h_j) for h_j in others]


def _bucket_mean(weights, hiddens, dim):
    if not hiddens:
        return np.zeros(dim)
    acc = np.zeros(dim)
    for w, h in zip(weights, hiddens):
        acc += w * h
    return acc / len(hiddens)


def context_vectors(i: int, events, store: ParamStore, mode: ContextMode) -> ContextBundle:
    """The (h_past, h_self, h_future) triple for event i of `events`.

    Each element of `events` carries t_end and a hidden vector h.
    """
    h_i = np.asarray(events[i].h, dtype=np.float64)
    dim = h_i.shape[0]
    if mode.scope == "none":
        return ContextBundle(np.zeros(dim), h_i.copy(), np.zeros(dim))
    past_idx, future_idx = bucket_events(i, events)
    if mode.scope != "past_and_future":
        future_idx = []
    past_h = [np.asarray(events[j].h, dtype=np.float64) for j in past_idx]
    fut_h = [np.asarray(events[j].h, dtype=np.float64) for j in future_idx]
    w_past = attention_weights(h_i, past_h, store, mode.weighting)
    w_fut = attention_weights(h_i, fut_h, store, mode.weighting)
    return ContextBundle(_bucket_mean(w_past, past_h, dim), h_i.copy(),
                         _bucket_mean(w_fut, fut_h, dim))


# ---------------------------------------------------------------------------
# decoder forward / backward


def _decoder_weights(store):
    return [(store["cap/lstm0/W_x"], store["cap/lstm0/W_h"], store["cap/lstm0/b"]),
            (store["cap/lstm1/W_x"], store["cap/lstm1/W_h"], store["cap/lstm1/b"])]


def caption_forward(ctx: np.ndarray, prefix: list[int], store: ParamStore,
                    config: CaptionConfig):
    """Teacher-forced pass: returns (logits (L+1, V), cache).

    ctx is the concatenated context bundle (3H); prefix holds the L word
    indices (no SOS, no EOS).  Logits row t predicts word position t+1:
    the L words followed by EOS.
    """
    if ctx.shape[0] != 3 * config.context_dim:
        raise ValueError(
            f"context of size {ctx.shape[0]} does not match 3 x {config.context_dim}"
        )
    if len(prefix) + 1 > config.max_len + 1:
        raise ValidationError(f"prefix of {len(prefix)} words exceeds {config.max_len}")
    embed = store["cap/embed"]
    x0 = affine(ctx, store["cap/in_proj/W"], store["cap/in_proj/b"])
    inputs = [x0]
    tokens_in = [None]
    for tok in [SOS] + list(prefix):
        x = embed[tok].copy()
        if config.reinject_context:
            x += x0
        inputs.append(x)
        tokens_in.append(tok)
    weights = _decoder_weights(store)
    state = zero_state([config.hidden_size] * 2)
    tops = []
    caches = []
    for x in inputs:
        top, state, step_caches = lstm_step(x, state, weights)
        tops.append(top)
        caches.append(step_caches)
    tops_arr = np.stack(tops[1:])  # word positions only
    logits = affine(tops_arr, store["cap/out/W"], store["cap/out/b"])
    cache = (ctx, inputs, tokens_in, caches, tops_arr)
    return logits, cache


def caption_backward(dlogits: np.ndarray, cache, store: ParamStore,
                     config: CaptionConfig) -> np.ndarray:
    """Accumulate decoder gradients; returns dL/dctx for the attention path."""
    ctx, inputs, tokens_in, caches, tops_arr = cache
    dtops, dW_out, db_out = affine_backward(dlogits, tops_arr, store["cap/out/W"])
    store.grads["cap/out/W"] += dW_out
    store.grads["cap/out/b"] += db_out
    U = config.hidden_size
    weights = _decoder_weights(store)
    carry = [(np.zeros(U), np.zeros(U)) for _ in range(2)]
    dx0 = np.zeros(config.embed_dim)
    for t in range(len(inputs) - 1, -1, -1):
        dh_top = carry[1][0].copy()
        if t >= 1:
            dh_top += dtops[t - 1]
        dx1, dh1, dc1, dWx1, dWh1, db1 = lstm_cell_backward(
            dh_top, carry[1][1], caches[t][1], weights[1][0], weights[1][1])
        store.grads["cap/lstm1/W_x"] += dWx1
        store.grads["cap/lstm1/W_h"] += dWh1
        store.grads["cap/lstm1/b"] += db1
        dh0 = carry[0][0] + dx1
        dx, dh0p, dc0, dWx0, dWh0, db0 = lstm_cell_backward(
            dh0, carry[0][1], caches[t][0], weights[0][0], weights[0][1])
        store.grads["cap/lstm0/W_x"] += dWx0
        store.grads["cap/lstm0/W_h"] += dWh0
        store.grads["cap/lstm0/b"] += db0
        carry = [(dh0p, dc0), (dh1, dc1)]
        if t == 0:
            dx0 += dx
        else:
            store.grads["cap/embed"][tokens_in[t]] += dx
            if config.reinject_context:
                dx0 += dx
    dctx, dW_in, db_in = affine_backward(dx0, ctx, store["cap/in_proj/W"])
    store.grads["cap/in_proj/W"] += dW_in
    store.grads["cap/in_proj/b"] += db_in
    return dctx


def caption_logits_sequence(bundle: ContextBundle, prefix: list[int],
                            store: ParamStore, config: CaptionConfig) -> np.ndarray:
    """Per-word-position vocabulary logits under teacher forcing."""
    logits, _ = caption_forward(bundle.concat(), prefix, store, config)
    return logits


def _trim_to_eos(sentence) -> list[int]:
    toks = list(sentence)
    if not toks:
        raise ValueError("cannot caption an empty sentence")
    if EOS not in toks:
        raise ValueError("sentence must be EOS-terminated")
    return toks[:toks.index(EOS) + 1]


def caption_loss(bundle: ContextBundle, sentence, store: ParamStore,
                 config: CaptionConfig) -> float:
    """Mean softmax cross-entropy over the L+1 word positions including EOS.

    Anything after the first EOS (padding) is ignored.
    """
    targets = _trim_to_eos(sentence)
    logits, _ = caption_forward(bundle.concat(), targets[:-1], store, config)
    return sum(softmax_xent(logits[t], tok)[0]
               for t, tok in enumerate(targets)) / len(targets)


def event_caption_loss(i: int, events, sentence, store: ParamStore,
                       config: CaptionConfig, mode: ContextMode,
                       grad_scale: float | None = None) -> float:
    """Caption loss for event i in the context of its neighbors.

    With grad_scale set, accumulates gradients for every caption-path
    parameter including the attention map; the neighbor hidden states
    themselves are treated as constants (they belong to the proposal
    module, which trains in its own phase).
    """
    targets = _trim_to_eos(sentence)
    h_i = np.asarray(events[i].h, dtype=np.float64)
    dim = h_i.shape[0]
    use_attn = mode.weighting == "dot_attention" and mode.scope != "none"
    if mode.scope == "none":
        past_h, fut_h = [], []
    else:
        past_idx, future_idx = bucket_events(i, events)
        if mode.scope != "past_and_future":
            future_idx = []
        past_h = [np.asarray(events[j].h, dtype=np.float64) for j in past_idx]
        fut_h = [np.asarray(events[j].h, dtype=np.float64) for j in future_idx]
    w_past = attention_weights(h_i, past_h, store, mode.weighting)
    w_fut = attention_weights(h_i, fut_h, store, mode.weighting)
    bundle = ContextBundle(_bucket_mean(w_past, past_h, dim), h_i,
                           _bucket_mean(w_fut, fut_h, dim))
    ctx = bundle.concat()
    logits, cache = caption_forward(ctx, targets[:-1], store, config)
    loss = 0.0
    if grad_scale is None:
        for t, tok in enumerate(targets):
            loss += softmax_xent(logits[t], tok)[0]
        return loss / len(targets)
    dlogits = np.empty_like(logits)
    for t, tok in enumerate(targets):
        step_loss, dl = softmax_xent(logits[t], tok)
        loss += step_loss
        dlogits[t] = dl * (grad_scale / len(targets))
    dctx = caption_backward(dlogits, cache, store, config)
    if use_attn:
        d_past, d_future = dctx[:dim], dctx[2 * dim:]
        da = np.zeros(dim)
        for dpart, hs in ((d_past, past_h), (d_future, fut_h)):
            if hs:
                for h_j in hs:
                    da += (float(dpart @ h_j) / len(hs)) * h_j
        store.grads["cap/attn/w_a"] += np.outer(da, h_i)
        store.grads["cap/attn/b_a"] += da
    return loss / len(targets)


# ---------------------------------------------------------------------------
# decoding


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


@dataclass
class _Hyp:
    tokens: list
    logprob: float
    state: list
    finished: bool


def _hyp_key(h: _Hyp):
    return (-h.logprob, len(h.tokens), h.tokens)


def beam_decode(bundle: ContextBundle, store: ParamStore, config: CaptionConfig,
                beam: int = 5, max_len: int | None = None) -> DecodedCaption:
    """Length-capped beam search; EOS freezes a hypothesis.

    The answer is the finished hypothesis with the highest total log
    probability (no length normalization), falling back to unfinished ones
    when nothing terminated; ties prefer shorter, then lexicographically
    smaller token sequences.
    """
    if beam < 1:
        raise ValidationError("beam size must be >= 1")
    max_len = config.max_len if max_len is None else max_len
    embed = store["cap/embed"]
    weights = _decoder_weights(store)
    x0 = affine(bundle.concat(), store["cap/in_proj/W"], store["cap/in_proj/b"])
    state = zero_state([config.hidden_size] * 2)
    _, state, _ = lstm_step(x0, state, weights)
    hyps = [_Hyp([], 0.0, state, False)]
    while any(not h.finished and len(h.tokens) < max_len for h in hyps):
        candidates = []
        for h in hyps:
            if h.finished or len(h.tokens) == max_len:
                candidates.append(h)
                continue
            prev = SOS if not h.tokens else h.tokens[-1]
            x = embed[prev] + x0 if config.reinject_context else embed[prev]
            top, new_state, _ = lstm_step(x, h.state, weights)
            logp = _log_softmax(affine(top, store["cap/out/W"], store["cap/out/b"]))
            order = np.argsort(-logp, kind="stable")[:beam]
            for tok in order:
                tok = int(tok)
                if tok == EOS:
                    candidates.append(_Hyp(h.tokens, h.logprob + float(logp[tok]),
                                           new_state, True))
                else:
                    cand = _Hyp(h.tokens + [tok], h.logprob + float(logp[tok]),
                                new_state, False)
                    candidates.append(cand)
        candidates.sort(key=_hyp_key)
        hyps = candidates[:beam]
    finished = [h for h in hyps if h.finished]
    best = min(finished or hyps, key=_hyp_key)
    return DecodedCaption(list(best.tokens), best.logprob)


def greedy_decode(bundle: ContextBundle, store: ParamStore, config: CaptionConfig,
                  max_len: int | None = None) -> DecodedCaption:
    """Stepwise argmax decoding with the same stop conventions as the beam."""
    max_len = config.max_len if max_len is None else max_len
    embed = store["cap/embed"]
    weights = _decoder_weights(store)
    x0 = affine(bundle.concat(), store["cap/in_proj/W"], store["cap/in_proj/b"])
    state = zero_state([config.hidden_size] * 2)
    _, state, _ = lstm_step(x0, state, weights)
    tokens, logprob, prev = [], 0.0, SOS
    while len(tokens) < max_len:
        x = embed[prev] + x0 if config.reinject_context else embed[prev]
        top, state, _ = lstm_step(x, state, weights)
        logp = _log_softmax(affine(top, store["cap/out/W"], store["cap/out/b"]))
        tok = int(np.argmax(logp))
        logprob += float(logp[tok])
        if tok == EOS:
            break
        tokens.append(tok)
        prev = tok
    return DecodedCaption(tokens, logprob)
