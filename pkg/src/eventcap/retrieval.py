"""Bi-encoder video/paragraph retrieval.

Sentences run through their own embedding table and two-layer LSTM; the
final hidden is projected into a joint space and L2-normalized.  Proposals
enter as fixed hidden vectors (from the proposal model) and get their own
learned projection.  A video and a paragraph score as the mean over the
paragraph's sentences of each sentence's best cosine against the video's
proposals.  Training pulls each video toward its own paragraph with a
max-margin hinge in both query directions.

The context variant blends every vector with the mean of its peers before
normalization, on both sides: sentences with the rest of their paragraph,
proposals with the rest of their video.  Pooling one side alone just adds
a term the other side cannot match, so the switch covers both encoders.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError
from .numerics import (ParamStore, affine, affine_backward, lstm_cell_backward,
                       lstm_step, make_velocity, sgd_momentum_step, zero_state)


@dataclass
class RetrievalConfig:
    vocab_size: int
    context_dim: int            # width of the incoming proposal hiddens
    embed_dim: int = 256
    hidden_size: int = 512
    joint_dim: int = 512        # J
    margin: float = 0.2
    context_pooling: bool = False  # blend vectors with their in-item peers

    def validate(self):
        if self.vocab_size < 4:
            raise ConfigError("vocabulary must hold at least the reserved tokens")
        if min(self.context_dim, self.embed_dim, self.hidden_size,
               self.joint_dim) < 1:
            raise ConfigError("retrieval dims must be positive")
        if self.margin <= 0:
            raise ConfigError("margin must be positive")


def init_retrieval_params(store: ParamStore, config: RetrievalConfig,
                          sigma: float = 0.01) -> None:
    config.validate()
    V, E, U = config.vocab_size, config.embed_dim, config.hidden_size
    J, H = config.joint_dim, config.context_dim
    store.add("ret/embed", (V, E), sigma=sigma)
    for layer, x_dim in ((0, E), (1, U)):
        store.add(f"ret/sent/lstm{layer}/W_x", (4 * U, x_dim), sigma=sigma)
        store.add(f"ret/sent/lstm{layer}/W_h", (4 * U, U), sigma=sigma)
        store.add(f"ret/sent/lstm{layer}/b", (4 * U,), zero=True)
    store.add("ret/sent/proj/W", (J, U), sigma=sigma)
    store.add("ret/sent/proj/b", (J,), zero=True)
    store.add("ret/prop/proj/W", (J, H), sigma=sigma)
    store.add("ret/prop/proj/b", (J,), zero=True)


def retrieval_param_names(store: ParamStore) -> list[str]:
    return [n for n in store.names() if n.startswith("ret/")]


def _normalize(x: np.ndarray):
    n = float(np.linalg.norm(x))
    if n == 0.0:
        return np.zeros_like(x), 0.0
    return x / n, n


def _normalize_backward(du: np.ndarray, u: np.ndarray, n: float) -> np.ndarray:
    if n == 0.0:
        return np.zeros_like(du)
    return (du - u * float(u @ du)) / n


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)


def _sentence_weights(store: ParamStore):
    return [(store[f"ret/sent/lstm{l}/W_x"], store[f"ret/sent/lstm{l}/W_h"],
             store[f"ret/sent/lstm{l}/b"]) for l in (0, 1)]


def _sentence_forward(ids, store: ParamStore, config: RetrievalConfig):
    if len(ids) == 0:
        raise ValidationError("cannot encode an empty sentence")
    embed = store["ret/embed"]
    weights = _sentence_weights(store)
    state = zero_state([config.hidden_size] * 2)
    caches = []
    top = None
    for t in ids:
        if not 0 <= t < config.vocab_size:
            raise ValidationError(f"token id {t} outside the vocabulary")
        top, state, step_caches = lstm_step(embed[t], state, weights)
        caches.append(step_caches)
    x = affine(top, store["ret/sent/proj/W"], store["ret/sent/proj/b"])
    u, norm = _normalize(x)
    return u, (list(ids), caches, top, x, u, norm)


def encode_sentence_r(ids, store: ParamStore, config: RetrievalConfig) -> np.ndarray:
    """Joint-space unit vector for one sentence (zero stays zero)."""
    return _sentence_forward(ids, store, config)[0]


def _context_pool(pre_norms):
    # each vector blended with the mean of the others, before normalization
    k = len(pre_norms)
    if k == 1:
        return [p.copy() for p in pre_norms]
    total = np.sum(pre_norms, axis=0)
    return [p + (total - p) / (k - 1) for p in pre_norms]


def encode_paragraph(sentences, store: ParamStore, config: RetrievalConfig):
    """(S, J) array of sentence vectors; optional paragraph context pooling."""
    if not sentences:
        raise ValidationError("a paragraph needs at least one sentence")
    outs, caches = [], []
    for ids in sentences:
        u, cache = _sentence_forward(ids, store, config)
        outs.append(u)
        caches.append(cache)
    if config.context_pooling:
        pooled = _context_pool([c[3] for c in caches])
        pairs = [_normalize(x) for x in pooled]
        outs = [u for u, _ in pairs]
    return np.stack(outs), caches


def encode_proposals(hiddens, store: ParamStore, config: RetrievalConfig):
    """(P, J) array of proposal vectors from fixed (P, H) hidden rows."""
    hiddens = np.asarray(hiddens, dtype=np.float64)
    if hiddens.ndim != 2 or hiddens.shape[0] < 1:
        raise ValidationError("need a (P, H) array with at least one proposal")
    pre = affine(hiddens, store["ret/prop/proj/W"], store["ret/prop/proj/b"])
    rows = list(pre)
    if config.context_pooling:
        rows = _context_pool(rows)
    out = np.empty_like(pre)
    norms = np.empty(pre.shape[0])
    for i, row in enumerate(rows):
        out[i], norms[i] = _normalize(row)
    return out, (hiddens, pre, out, norms)


def score_pair(sentence_vec: np.ndarray, proposal_vecs: np.ndarray) -> float:
    """Best cosine between one sentence and any of a video's proposals."""
    if len(proposal_vecs) == 0:
        raise ValidationError("need at least one proposal vector")
    return max(cosine(sentence_vec, p) for p in proposal_vecs)


def video_paragraph_score(sentence_vecs, proposal_vecs) -> float:
    return sum(score_pair(s, proposal_vecs) for s in sentence_vecs) / len(sentence_vecs)


def similarity_matrix(proposal_sets, paragraph_sets) -> np.ndarray:
    """S[v, w] = score of video v's proposals against paragraph w."""
    S = np.empty((len(proposal_sets), len(paragraph_sets)))
    for v, props in enumerate(proposal_sets):
        for w, sents in enumerate(paragraph_sets):
            S[v, w] = video_paragraph_score(sents, props)
    return S


def margin_loss(pos_score: float, neg_scores, margin: float) -> float:
    """One-direction hinge: sum of max(0, margin - pos + neg)."""
    if len(neg_scores) == 0:
        raise ValidationError("need at least one negative score")
    return float(sum(max(0.0, margin - pos_score + n) for n in neg_scores))


def retrieval_loss(S: np.ndarray, margin: float):
    """Both-direction hinge over a square similarity matrix.

    Returns (loss, dL/dS).  Row direction ranks paragraphs for each video,
    column direction ranks videos for each paragraph; the diagonal is the
    matched pair in both.
    """
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValidationError("pair ranking needs a square matrix")
    n = S.shape[0]
    loss = 0.0
    dS = np.zeros_like(S)
    for i in range(n):
        pos = S[i, i]
        for j in range(n):
            if j == i:
                continue
            row = margin - pos + S[i, j]
            if row > 0.0:
                loss += row
                dS[i, j] += 1.0
                dS[i, i] -= 1.0
            col = margin - pos + S[j, i]
            if col > 0.0:
                loss += col
                dS[j, i] += 1.0
                dS[i, i] -= 1.0
    return loss, dS


# ---------------------------------------------------------------------------
# training


def _sentence_backward(dx_pre, cache, store: ParamStore, config: RetrievalConfig):
    """Push a gradient on the pre-normalization projection back to params."""
    ids, caches, top, _x, _u, _norm = cache
    dtop, dW, db = affine_backward(dx_pre, top, store["ret/sent/proj/W"])
    store.grads["ret/sent/proj/W"] += dW
    store.grads["ret/sent/proj/b"] += db
    weights = _sentence_weights(store)
    U = config.hidden_size
    dh = [np.zeros(U), dtop]
    dc = [np.zeros(U), np.zeros(U)]
    g_embed = store.grads["ret/embed"]
    for t in range(len(ids) - 1, -1, -1):
        dx_layer = None
        for layer in (1, 0):
            W_x, W_h, _ = weights[layer]
            dh_in = dh[layer] if dx_layer is None else dh[layer] + dx_layer
            dx_layer, dh[layer], dc[layer], dWx, dWh, dbv = lstm_cell_backward(
                dh_in, dc[layer], caches[t][layer], W_x, W_h)
            store.grads[f"ret/sent/lstm{layer}/W_x"] += dWx
            store.grads[f"ret/sent/lstm{layer}/W_h"] += dWh
            store.grads[f"ret/sent/lstm{layer}/b"] += dbv
        g_embed[ids[t]] += dx_layer


def _pool_backward(dpooled):
    k = len(dpooled)
    if k == 1:
        return [d.copy() for d in dpooled]
    total = np.sum(dpooled, axis=0)
    return [d + (total - d) / (k - 1) for d in dpooled]


def batch_retrieval_loss(items, store: ParamStore, config: RetrievalConfig,
                         backward: bool = False) -> float:
    """Hinge loss over one batch of (proposal_hiddens, sentences) items.

    Proposal hiddens are treated as fixed inputs; gradients accumulate on
    the retrieval parameters only.
    """
    if len(items) < 2:
        raise ValidationError("retrieval training needs at least two videos")
    prop_vecs, prop_caches = [], []
    para_vecs, para_caches = [], []
    for hiddens, sentences in items:
        pv, pc = encode_proposals(hiddens, store, config)
        prop_vecs.append(pv)
        prop_caches.append(pc)
        sv, sc = encode_paragraph(sentences, store, config)
        para_vecs.append(sv)
        para_caches.append(sc)
    S = np.empty((len(items), len(items)))
    argmax = {}
    for v in range(len(items)):
        for w in range(len(items)):
            scores = para_vecs[w] @ prop_vecs[v].T  # unit vectors: dot = cosine
            best = np.argmax(scores, axis=1)
            argmax[v, w] = best
            S[v, w] = float(scores[np.arange(len(best)), best].mean())
    loss, dS = retrieval_loss(S, config.margin)
    if not backward or loss == 0.0:
        return loss

    d_para = [np.zeros_like(p) for p in para_vecs]
    d_prop = [np.zeros_like(p) for p in prop_vecs]
    for (v, w), best in argmax.items():
        g = dS[v, w]
        if g == 0.0:
            continue
        share = g / len(best)
        for i, j in enumerate(best):
            d_para[w][i] += share * prop_vecs[v][j]
            d_prop[v][j] += share * para_vecs[w][i]

    for v, (dp, (hiddens, pre, out, norms)) in enumerate(zip(d_prop, prop_caches)):
        rows = [_normalize_backward(dp[i], out[i], norms[i])
                for i in range(pre.shape[0])]
        if config.context_pooling:
            rows = _pool_backward(rows)
        _, dW, db = affine_backward(np.stack(rows), hiddens,
                                    store["ret/prop/proj/W"])
        store.grads["ret/prop/proj/W"] += dW
        store.grads["ret/prop/proj/b"] += db

    for w, (dv, caches) in enumerate(zip(d_para, para_caches)):
        if config.context_pooling:
            pooled = _context_pool([c[3] for c in caches])
            dpooled = []
            for i, x in enumerate(pooled):
                u, norm = _normalize(x)
                dpooled.append(_normalize_backward(dv[i], u, norm))
            dpre_list = _pool_backward(dpooled)
        else:
            dpre_list = [_normalize_backward(dv[i], caches[i][4], caches[i][5])
                         for i in range(len(caches))]
        for cache, dpre in zip(caches, dpre_list):
            _sentence_backward(dpre, cache, store, config)
    return loss


def train_retrieval(items, store: ParamStore, config: RetrievalConfig,
                    epochs: int = 30, lr: float = 0.05, momentum: float = 0.9,
                    seed: int = 0) -> list[float]:
    """Full-batch gradient descent on the hinge loss; returns per-epoch losses."""
    if epochs < 1:
        raise ConfigError("need at least one epoch")
    velocity = make_velocity(store, retrieval_param_names(store))
    log = []
    for _ in range(epochs):
        loss = batch_retrieval_loss(items, store, config, backward=True)
        sgd_momentum_step(store, velocity, lr, momentum,
                          names=retrieval_param_names(store))
        log.append(loss)
    return log


# ---------------------------------------------------------------------------
# evaluation


def rank_eval(S: np.ndarray, correct) -> dict:
    """Ranks of the correct target per query row, ties by ascending index."""
    S = np.asarray(S, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.int64)
    if S.ndim != 2 or correct.shape != (S.shape[0],):
        raise ValidationError("need one correct target per query row")
    if np.any(correct < 0) or np.any(correct >= S.shape[1]):
        raise ValidationError("correct target index outside the matrix")
    ranks = np.empty(S.shape[0], dtype=np.int64)
    for i, c in enumerate(correct):
        row = S[i]
        ranks[i] = 1 + int(np.sum(row > row[c])) + int(np.sum(row[:c] == row[c]))
    ranks_sorted = np.sort(ranks)
    median = int(ranks_sorted[(len(ranks_sorted) - 1) // 2])
    out = {f"R@{k}": float(np.mean(ranks <= k)) for k in (1, 5, 50)}
    out["median_rank"] = median
    return out


def retrieval_report(S: np.ndarray) -> dict:
    """Both query directions with the matched pair on the diagonal."""
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValidationError("paired evaluation needs a square matrix")
    diag = np.arange(S.shape[0])
    return {
        "video_to_paragraph": rank_eval(S, diag),
        "paragraph_to_video": rank_eval(S.T, diag),
    }
