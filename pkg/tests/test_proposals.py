import math

import numpy as np
import pytest

from eventcap.corpus import Event, FeatureSequence
from eventcap.errors import ValidationError
from eventcap.numerics import ParamStore, grad_check
from eventcap.proposals import (
    EventProposal, ProposalConfig, hiddens_for_intervals, init_proposal_params,
    make_targets, proposal_loss, proposal_loss_from_logits, propose_stream,
    rank_proposals, recall_curve, sample_stride, stride_backward, stride_forward,
    stride_intervals, tiou,
)
from eventcap.rng import SplitMix64


def half_second_seq(n_rows, dim=3, fill=0.0, video_id="v"):
    # delta/fps = 0.5 s per row
    m = np.full((n_rows, dim), fill, dtype=np.float32)
    return FeatureSequence(video_id, 8, 16.0, m)


def small_config(**kw):
    defaults = dict(strides=(1, 2), proposals_per_step=2, hidden_size=4,
                    score_threshold=0.5, tiou_positive=0.5)
    defaults.update(kw)
    return ProposalConfig(**defaults)


def make_store(seq, config, seed=0, sigma=0.01):
    store = ParamStore(seed)
    init_proposal_params(store, seq.dim, config, sigma=sigma)
    return store


# ---------------------------------------------------------------------------
# tiou


def test_tiou_basic_values():
    assert tiou((0, 2), (0, 2)) == 1.0
    assert tiou((0, 1), (2, 3)) == 0.0
    assert tiou((0, 2), (1, 3)) == pytest.approx(1 / 3, abs=1e-12)
    assert tiou((0, 2), (1, 3)) == tiou((1, 3), (0, 2))


def test_tiou_rejects_degenerate_interval():
    with pytest.raises(ValueError):
        tiou((2, 2), (0, 1))


def test_tiou_random_properties():
    r = SplitMix64(5)
    for _ in range(200):
        a = sorted((r.uniform() * 10, r.uniform() * 10 + 0.01))
        b = sorted((r.uniform() * 10, r.uniform() * 10 + 0.01))
        v = tiou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == tiou(b, a)
    assert tiou((1.5, 2.5), (1.5, 2.5)) == 1.0


# ---------------------------------------------------------------------------
# striding


def test_sample_stride_counts():
    seq = half_second_seq(8)
    assert sample_stride(seq, 2).shape[0] == 4
    assert np.array_equal(sample_stride(seq, 1),
                          seq.matrix.astype(np.float64))
    assert sample_stride(half_second_seq(5), 4).shape[0] == 2


def test_sample_stride_rejects_oversized_stride():
    with pytest.raises(ValueError):
        sample_stride(half_second_seq(5), 6)


def test_stride_interval_offsets():
    seq = half_second_seq(8)
    iv = stride_intervals(seq, 1, 2)
    # step m=1, k=2 covers [end - 2 * 0.5, end] with end = 2 * 0.5 = 1.0
    assert iv[1, 1, 0] == 0.0 and iv[1, 1, 1] == 1.0
    assert np.all(iv[:, :, 0] >= 0.0)
    assert np.all(iv[:, :, 1] <= seq.duration_s + 1e-12)
    assert np.all(iv[:, :, 0] < iv[:, :, 1])


# ---------------------------------------------------------------------------
# streaming proposals


def test_retain_all_count():
    seq = half_second_seq(8)
    config = small_config()
    props = propose_stream(seq, make_store(seq, config), config, retain_all=True)
    assert len(props) == 8 * 2 + 4 * 2
    for n_rows in (5, 9):
        s2 = half_second_seq(n_rows)
        got = propose_stream(s2, make_store(s2, config), config, retain_all=True)
        want = sum(config.proposals_per_step * math.ceil(n_rows / s)
                   for s in config.strides)
        assert len(got) == want


def test_zero_params_score_half_everywhere():
    seq = half_second_seq(6)
    config = small_config()
    store = ParamStore(0)
    H, K = config.hidden_size, config.proposals_per_step
    for s in config.strides:
        store.add(f"prop/s{s}/lstm/W_x", (4 * H, seq.dim), zero=True)
        store.add(f"prop/s{s}/lstm/W_h", (4 * H, H), zero=True)
        store.add(f"prop/s{s}/lstm/b", (4 * H,), zero=True)
        store.add(f"prop/s{s}/score/W", (K, H), zero=True)
        store.add(f"prop/s{s}/score/b", (K,), zero=True)
    props = propose_stream(seq, store, config, retain_all=False)
    assert all(p.score == 0.5 for p in props)
    # sigma(0) = 0.5 meets the inclusive threshold, so everything is kept
    assert len(props) == sum(K * math.ceil(6 / s) for s in config.strides)
    assert all(np.array_equal(p.h, np.zeros(H)) for p in props)


def test_stride_order_does_not_change_the_set():
    seq = half_second_seq(7, fill=0.3)
    a_cfg = small_config(strides=(1, 2))
    b_cfg = small_config(strides=(2, 1))
    # same per-stride weights regardless of declaration order
    store = make_store(seq, a_cfg, seed=3)
    b_cfg_sorted = small_config(strides=(1, 2))
    a = propose_stream(seq, store, a_cfg, retain_all=True)
    b = propose_stream(seq, store, b_cfg_sorted, retain_all=True)
    key = lambda p: (p.stride, p.t_start, p.t_end, p.score)
    assert sorted(map(key, a)) == sorted(map(key, b))


def test_hidden_state_matches_prefix_pass():
    seq = FeatureSequence("v", 8, 16.0, SplitMix64(4).normals((6, 3)))
    config = small_config()
    store = make_store(seq, config, seed=9)
    props = propose_stream(seq, store, config, retain_all=True)
    hiddens, _, _ = stride_forward(seq, store, config, 2)
    two = [p for p in props if p.stride == 2]
    per_step = {round(p.t_end / 0.5): p for p in two}
    for m in range(hiddens.shape[0]):
        p = per_step[m * 2 + 1]
        assert np.array_equal(p.h, hiddens[m])


def test_hiddens_for_intervals_recovers_stream_hiddens():
    seq = FeatureSequence("v", 8, 16.0, SplitMix64(4).normals((7, 3)))
    config = small_config()
    store = make_store(seq, config, seed=1)
    props = propose_stream(seq, store, config, retain_all=True)
    got = hiddens_for_intervals([(p.t_end, p.stride) for p in props], seq, store, config)
    for p, h in zip(props, got):
        assert np.array_equal(p.h, h)
    with pytest.raises(ValidationError):
        hiddens_for_intervals([(2.0, 5)], seq, store, config)


def test_empty_sequence_rejected():
    config = small_config()
    seq = half_second_seq(4)
    store = make_store(seq, config)
    bad = FeatureSequence.__new__(FeatureSequence)
    bad.video_id, bad.delta_frames, bad.fps = "v", 8, 16.0
    bad.matrix = np.zeros((0, 3), dtype=np.float32)
    with pytest.raises(ValidationError):
        propose_stream(bad, store, config)


# ---------------------------------------------------------------------------
# targets and loss


def test_targets_mark_matching_intervals():
    seq = half_second_seq(4)
    config = small_config(strides=(1,))
    t = make_targets([Event(0.0, 1.0, ["x"])], seq, config)[1]
    assert t[1, 1] == 1.0  # interval [0, 1.0] vs GT [0, 1.0]
    far = make_targets([(3.9, 4.0)], half_second_seq(80), config)
    assert far[1][:4].sum() == 0.0


def test_boundary_tiou_is_inclusive():
    seq = half_second_seq(4)
    config = small_config(strides=(1,), tiou_positive=0.5)
    t = make_targets([(0.0, 2.0)], seq, config)[1]
    # interval [0, 1.0] vs GT [0, 2.0]: tIoU exactly 0.5
    assert tiou((0.0, 1.0), (0.0, 2.0)) == 0.5
    assert t[1, 1] == 1.0


def test_proposal_loss_values():
    eps = 1e-12
    near = proposal_loss(np.array([eps, 1 - eps]), np.array([0.0, 1.0]))
    assert near == pytest.approx(0.0, abs=1e-9)
    balanced = proposal_loss(np.full(4, 0.5), np.array([1.0, 1.0, 0.0, 0.0]))
    assert balanced == pytest.approx(math.log(2), abs=1e-12)
    skew = proposal_loss(np.full(4, 0.5), np.array([1.0, 0.0, 0.0, 0.0]))
    assert skew == pytest.approx(1.5 * math.log(2), abs=1e-12)


def test_proposal_loss_accepts_per_stride_dicts():
    scores = {1: np.full((2, 2), 0.5), 2: np.full((1, 2), 0.5)}
    targets = {1: np.array([[1.0, 1.0], [0.0, 0.0]]), 2: np.array([[1.0, 0.0]])}
    assert proposal_loss(scores, targets) == pytest.approx(math.log(2), abs=1e-12)


def test_logit_form_agrees_with_probability_form():
    r = SplitMix64(6)
    z = {1: r.normals((3, 2)) * 2.0, 2: r.normals((2, 2)) * 2.0}
    t = {1: (r.uniforms(6) < 0.4).astype(float).reshape(3, 2),
         2: (r.uniforms(4) < 0.4).astype(float).reshape(2, 2)}
    loss, _ = proposal_loss_from_logits(z, t)
    probs = {s: 1.0 / (1.0 + np.exp(-z[s])) for s in z}
    assert loss == pytest.approx(proposal_loss(probs, t), abs=1e-10)


def test_proposal_gradients_pass_grad_check():
    # weights well away from zero so central differences can resolve them
    seq = FeatureSequence("v", 8, 16.0, SplitMix64(2).normals((6, 4)))
    config = small_config(strides=(1, 2), proposals_per_step=3, hidden_size=5)
    store = make_store(seq, config, seed=7, sigma=0.4)
    targets = make_targets([(0.0, 1.5), (1.0, 3.0)], seq, config)

    def loss_fn(s):
        logits, hid, caches = {}, {}, {}
        for st in config.strides:
            hid[st], logits[st], caches[st] = stride_forward(seq, s, config, st,
                                                             keep_caches=True)
        loss, dlogits = proposal_loss_from_logits(logits, targets)
        for st in config.strides:
            stride_backward(dlogits[st], hid[st], caches[st], s, config, st)
        return loss

    assert grad_check(loss_fn, store) < 1e-4


# ---------------------------------------------------------------------------
# recall


def prop(t0, t1, score):
    return EventProposal(t0, t1, score, np.zeros(1), 1)


def test_rank_breaks_ties_deterministically():
    ranked = rank_proposals([prop(2.0, 6.0, 0.5), prop(1.0, 9.0, 0.5),
                             prop(1.0, 4.0, 0.5), prop(0.0, 1.0, 0.9)])
    assert [(p.t_start, p.t_end) for p in ranked] == [
        (0.0, 1.0), (1.0, 4.0), (1.0, 9.0), (2.0, 6.0)]


def test_recall_worked_examples():
    table = recall_curve({"v": [prop(0.0, 10.0, 0.9)]}, {"v": [(0.0, 10.0)]},
                         max_n=3, thresholds=[0.3, 0.5, 0.7])
    assert np.all(table.recall == 1.0)

    empty = recall_curve({"v": []}, {"v": [(0.0, 10.0)]}, 3, [0.5])
    assert np.all(empty.recall == 0.0)

    two = recall_curve({"v": [prop(0.0, 6.0, 0.9), prop(0.0, 10.0, 0.8)]},
                       {"v": [(0.0, 10.0)]}, max_n=2, thresholds=[0.7])
    assert two.at(1, 0.7) == 0.0
    assert two.at(2, 0.7) == 1.0


def test_recall_monotonicity_on_random_data():
    r = SplitMix64(11)
    proposals, gt = {}, {}
    for v in range(6):
        vid = f"v{v}"
        gt[vid] = [tuple(sorted((r.uniform() * 20, r.uniform() * 20 + 0.5)))
                   for _ in range(3)]
        proposals[vid] = [prop(*sorted((r.uniform() * 20, r.uniform() * 20 + 0.5)),
                               r.uniform()) for _ in range(40)]
    table = recall_curve(proposals, gt, max_n=40,
                         thresholds=[0.1, 0.3, 0.5, 0.7, 0.9])
    assert np.all(np.diff(table.recall, axis=0) >= 0.0)   # nondecreasing in n
    assert np.all(np.diff(table.recall, axis=1) <= 0.0)   # nonincreasing in tau
