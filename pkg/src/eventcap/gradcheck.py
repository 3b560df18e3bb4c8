"""Central-difference gradient scenarios behind the grad-check command.

Every backward pass in the package is hand-written, so each one gets a
fixed random scenario here that compares analytic gradients against
central differences.  Weights are drawn with sigma around 0.5, well above
the training default: near-zero weights leave some gradient components at
the 1e-8 scale where finite differences are pure cancellation noise.
"""

import numpy as np

from .captioning import (CaptionConfig, ContextMode, caption_param_names,
                         event_caption_loss, init_caption_params)
from .corpus import FeatureSequence, SyntheticSpec, build_vocab, generate_synthetic
from .numerics import ParamStore, grad_check
from .proposals import (ProposalConfig, init_proposal_params, make_targets,
                        proposal_loss_from_logits, proposal_param_names,
                        stride_backward, stride_forward)
from .retrieval import (RetrievalConfig, batch_retrieval_loss,
                        init_retrieval_params, retrieval_param_names)
from .rng import SplitMix64
from .training import TrainConfig, joint_loss
from .errors import ValidationError

GRAD_TOLERANCE = 1e-4
SCOPES = ("all", "captioning", "proposals", "retrieval")


class _Ev:
    def __init__(self, t_end, h):
        self.t_end = t_end
        self.h = h


def _events(ends, dim, seed):
    r = SplitMix64(seed)
    return [_Ev(t, r.normals(dim)) for t in ends]


def _caption_scenarios():
    out = []
    for name in ("none", "online-attn", "online", "full-attn", "full"):
        config = CaptionConfig(vocab_size=7, context_dim=3, embed_dim=4,
                               hidden_size=5)
        store = ParamStore(57)
        init_caption_params(store, config, sigma=0.5)
        events = _events([2.0, 5.0, 9.0], 3, seed=5)
        mode = ContextMode.from_name(name)

        def loss_fn(s, config=config, events=events, mode=mode):
            return event_caption_loss(1, events, [4, 6, 5, 2], s, config,
                                      mode, grad_scale=1.0)

        out.append((f"caption loss, mode {name}", loss_fn, store, None))

    config = CaptionConfig(vocab_size=7, context_dim=3, embed_dim=4,
                           hidden_size=5, reinject_context=True)
    store = ParamStore(57)
    init_caption_params(store, config, sigma=0.5)
    events = _events([2.0, 5.0, 9.0], 3, seed=5)

    def reinject_fn(s):
        return event_caption_loss(1, events, [4, 6, 5, 2], s, config,
                                  ContextMode.from_name("full"), grad_scale=1.0)

    out.append(("caption loss, context reinjection", reinject_fn, store, None))
    return out


def _proposal_scenario():
    seq = FeatureSequence("v", 8, 16.0, SplitMix64(2).normals((6, 4)))
    config = ProposalConfig(strides=(1, 2), proposals_per_step=3, hidden_size=5)
    store = ParamStore(7)
    init_proposal_params(store, seq.dim, config, sigma=0.4)
    targets = make_targets([(0.0, 1.5), (1.0, 3.0)], seq, config)

    def loss_fn(s):
        logits, hid, caches = {}, {}, {}
        for st in config.strides:
            hid[st], logits[st], caches[st] = stride_forward(
                seq, s, config, st, keep_caches=True)
        loss, dlogits = proposal_loss_from_logits(logits, targets)
        for st in config.strides:
            stride_backward(dlogits[st], hid[st], caches[st], s, config, st)
        return loss

    return [("proposal loss, two strides", loss_fn, store, None)]


def _joint_scenarios():
    spec = SyntheticSpec(n_videos=2, n_activity_types=4, events_per_video=(2, 3),
                         duration_range=(16.0, 24.0), dependency_strength=0.8,
                         feature_dim=6, seed=3)
    records, seqs = generate_synthetic(spec)
    vocab = build_vocab(records)
    prop = ProposalConfig(strides=(1, 2), proposals_per_step=2, hidden_size=7)
    cap = CaptionConfig(vocab_size=len(vocab), context_dim=7, embed_dim=5,
                        hidden_size=6)
    store = ParamStore(57)
    init_proposal_params(store, 6, prop, sigma=0.5)
    init_caption_params(store, cap, sigma=0.5)
    record = records[0]
    seq = {s.video_id: s for s in seqs}[record.video_id]
    cfg = TrainConfig()
    mode = ContextMode.from_name("full")

    def cap_fn(s):
        _, cap_term, _ = joint_loss(record, seq, vocab, s, prop, cap, cfg,
                                    mode, phase="caption", warmup=False)
        return cfg.lambda_cap * cap_term

    def prop_fn(s):
        _, _, prop_term = joint_loss(record, seq, vocab, s, prop, cap, cfg,
                                     mode, phase="proposal", warmup=False)
        return cfg.lambda_prop * prop_term

    return [
        ("joint loss, caption phase", cap_fn, store, caption_param_names(store)),
        ("joint loss, proposal phase", prop_fn, store, proposal_param_names(store)),
    ]


def _retrieval_scenarios():
    out = []
    for label, pooling, seed, rng_seed in (
            ("retrieval margin loss", False, 23, 40),
            ("retrieval margin loss, context pooling", True, 24, 41)):
        config = RetrievalConfig(vocab_size=9, context_dim=3, embed_dim=4,
                                 hidden_size=5, joint_dim=6, margin=0.6,
                                 context_pooling=pooling)
        store = ParamStore(seed)
        init_retrieval_params(store, config, sigma=0.5)
        rng = SplitMix64(rng_seed)
        items = []
        for _ in range(3):
            hiddens = rng.normals((2 + int(rng.below(2)), config.context_dim))
            sentences = [[4 + int(rng.below(config.vocab_size - 4))
                          for _ in range(2 + int(rng.below(3)))]
                         for _ in range(2 + int(rng.below(2)))]
            items.append((hiddens, sentences))

        def loss_fn(s, config=config, items=items):
            return batch_retrieval_loss(items, s, config, backward=True)

        out.append((label, loss_fn, store, retrieval_param_names(store)))
    return out


def scenarios_for(scope: str):
    """(name, loss_fn, store, names) tuples for one grad-check scope."""
    if scope not in SCOPES:
        raise ValidationError(f"unknown grad-check scope {scope!r}")
    out = []
    if scope in ("all", "captioning"):
        out += _caption_scenarios()
    if scope in ("all", "proposals"):
        out += _proposal_scenario()
    if scope == "all":
        out += _joint_scenarios()
    if scope in ("all", "retrieval"):
        out += _retrieval_scenarios()
    return out


def run_gradient_suite(scope: str = "all"):
    """[(scenario name, max relative error), ...] for the chosen scope."""
    results = []
    for name, loss_fn, store, names in scenarios_for(scope):
        err = grad_check(loss_fn, store, names=names)
        results.append((name, float(err)))
    return results
