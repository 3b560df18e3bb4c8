import math

import numpy as np
import pytest

from eventcap.captioning import CaptionConfig, ContextMode, caption_param_names
from eventcap.corpus import (Event, FeatureSequence, SyntheticSpec, VideoRecord,
                             Vocabulary, build_vocab, generate_synthetic)
from eventcap.errors import (ConfigError, FormatError, IncompatibilityError,
                             NumericError)
from eventcap.numerics import ParamStore, grad_check, lstm_cell
from eventcap.proposals import (ProposalConfig, init_proposal_params,
                                proposal_param_names, stride_forward)
from eventcap.training import (SkipVideo, TrainConfig, Trainer,
                               config_fingerprint, gt_interval_hidden,
                               joint_loss, phase_for, select_caption_pairs,
                               train, write_loss_log)
from eventcap.captioning import init_caption_params


def tiny_corpus(n_videos=4, seed=0, feature_dim=8):
    spec = SyntheticSpec(n_videos=n_videos, n_activity_types=4,
                         events_per_video=(2, 3), duration_range=(16.0, 24.0),
                         dependency_strength=0.8, feature_dim=feature_dim,
                         seed=seed)
    records, seqs = generate_synthetic(spec)
    return records, {s.video_id: s for s in seqs}


def tiny_configs(vocab, feature_dim=8, **train_kw):
    prop = ProposalConfig(strides=(1, 2), proposals_per_step=3, hidden_size=10)
    cap = CaptionConfig(vocab_size=len(vocab), context_dim=10, embed_dim=6,
                        hidden_size=8)
    kw = dict(alternate_every=3, warmup_epochs=1, max_epochs=2, seed=7)
    kw.update(train_kw)
    return prop, cap, TrainConfig(**kw)


def test_train_config_validation():
    for bad in (dict(momentum=1.0), dict(batch_size=2), dict(lr_caption=0.0),
                dict(caption_iou_gate=0.0), dict(alternate_every=0),
                dict(lambda_cap=-1.0), dict(max_epochs=0)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()
    TrainConfig().validate()


def test_phase_schedule():
    assert phase_for(0, 500) == "caption"
    assert phase_for(499, 500) == "caption"
    assert phase_for(500, 500) == "proposal"
    assert phase_for(999, 500) == "proposal"
    assert phase_for(1000, 500) == "caption"
    assert [phase_for(i, 2) for i in range(6)] == \
        ["caption", "caption", "proposal", "proposal", "caption", "caption"]


def balanced_video(feature_dim=5):
    # one GT over [2, 4] of a 4-row sequence: stride-1 K=1 candidates are
    # [0,1] [1,2] [2,3] [3,4], so targets split 2/2 and the weight is 1
    record = VideoRecord("v", 4.0, [Event(2.0, 4.0, ["foo"])])
    seq = FeatureSequence("v", 16, 16.0,
                          np.zeros((4, feature_dim), dtype=np.float32))
    return record, seq


def test_joint_loss_zero_param_worked_value():
    record, seq = balanced_video()
    vocab = Vocabulary([])
    prop = ProposalConfig(strides=(1,), proposals_per_step=1, hidden_size=6)
    cap = CaptionConfig(vocab_size=4, context_dim=6, embed_dim=3, hidden_size=5)
    store = ParamStore(0)
    init_proposal_params(store, seq.dim, prop, sigma=0.0)
    init_caption_params(store, cap, sigma=0.0)
    cfg = TrainConfig()
    total, cap_term, prop_term = joint_loss(
        record, seq, vocab, store, prop, cap, cfg, ContextMode.from_name("full"),
        phase="caption", warmup=True, backward=False)
    assert cap_term == pytest.approx(math.log(4.0), abs=1e-12)
    assert prop_term == pytest.approx(math.log(2.0), abs=1e-12)
    assert total == pytest.approx(math.log(4.0) + 0.1 * math.log(2.0), abs=1e-12)


def test_joint_loss_zero_proposal_weight_is_caption_loss():
    record, seq = balanced_video()
    vocab = Vocabulary([])
    prop = ProposalConfig(strides=(1,), proposals_per_step=1, hidden_size=6)
    cap = CaptionConfig(vocab_size=4, context_dim=6, embed_dim=3, hidden_size=5)
    store = ParamStore(0)
    init_proposal_params(store, seq.dim, prop, sigma=0.0)
    init_caption_params(store, cap, sigma=0.0)
    cfg = TrainConfig(lambda_prop=0.0)
    total, cap_term, _ = joint_loss(
        record, seq, vocab, store, prop, cap, cfg, ContextMode.from_name("none"),
        phase="caption", warmup=True, backward=False)
    assert total == cap_term


def grad_setup(seed=57):
    records, seqs = tiny_corpus(n_videos=2, seed=3, feature_dim=6)
    vocab = build_vocab(records)
    prop = ProposalConfig(strides=(1, 2), proposals_per_step=2, hidden_size=7)
    cap = CaptionConfig(vocab_size=len(vocab), context_dim=7, embed_dim=5,
                        hidden_size=6)
    store = ParamStore(seed)
    init_proposal_params(store, 6, prop, sigma=0.5)
    init_caption_params(store, cap, sigma=0.5)
    record = records[0]
    seq = seqs[record.video_id]
    return record, seq, vocab, store, prop, cap


def test_joint_caption_phase_gradient():
    record, seq, vocab, store, prop, cap = grad_setup()
    cfg = TrainConfig()
    mode = ContextMode.from_name("full")

    def loss_fn(s):
        _, cap_term, _ = joint_loss(record, seq, vocab, s, prop, cap, cfg,
                                    mode, phase="caption", warmup=False)
        return cfg.lambda_cap * cap_term

    assert grad_check(loss_fn, store, names=caption_param_names(store)) < 1e-4


def test_joint_proposal_phase_gradient():
    record, seq, vocab, store, prop, cap = grad_setup()
    cfg = TrainConfig()
    mode = ContextMode.from_name("full")

    def loss_fn(s):
        _, _, prop_term = joint_loss(record, seq, vocab, s, prop, cap, cfg,
                                     mode, phase="proposal", warmup=False)
        return cfg.lambda_prop * prop_term

    assert grad_check(loss_fn, store, names=proposal_param_names(store)) < 1e-4


def test_gt_interval_hidden_matches_manual_pass():
    rng_rows = np.linspace(-1.0, 1.0, 4 * 5, dtype=np.float32).reshape(4, 5)
    seq = FeatureSequence("v", 16, 16.0, rng_rows)
    prop = ProposalConfig(strides=(1, 2), proposals_per_step=2, hidden_size=6)
    store = ParamStore(9)
    init_proposal_params(store, 5, prop, sigma=0.3)
    got = gt_interval_hidden(seq, store, prop, 2.0, 4.0)
    W_x = store["prop/s1/lstm/W_x"]
    W_h = store["prop/s1/lstm/W_h"]
    b = store["prop/s1/lstm/b"]
    h, c = np.zeros(6), np.zeros(6)
    for row in seq.matrix[2:4].astype(np.float64):
        h, c, _ = lstm_cell(row, h, c, W_x, W_h, b)
    assert np.array_equal(got, h)


def test_select_pairs_warmup_uses_gt_segments():
    record, seq = balanced_video()
    vocab = Vocabulary(["foo"])
    prop = ProposalConfig(strides=(1,), proposals_per_step=1, hidden_size=6)
    store = ParamStore(0)
    init_proposal_params(store, seq.dim, prop, sigma=0.0)
    pairs = select_caption_pairs(record, seq, vocab, store, prop, TrainConfig(),
                                 {}, {}, warmup=True, max_len=30)
    assert len(pairs) == 1
    assert pairs[0].t_end == 4.0
    assert np.array_equal(pairs[0].h, np.zeros(6))
    assert pairs[0].sentence == [4, 2]


def test_select_pairs_picks_best_gated_proposal():
    # with K=2 the exact interval [2,4] exists at step 3, so it must win
    record, seq = balanced_video()
    vocab = Vocabulary(["foo"])
    prop = ProposalConfig(strides=(1,), proposals_per_step=2, hidden_size=6)
    store = ParamStore(1)
    init_proposal_params(store, seq.dim, prop, sigma=0.01)
    hiddens, logits, _ = stride_forward(seq, store, prop, 1)
    pairs = select_caption_pairs(record, seq, vocab, store, prop, TrainConfig(),
                                 {1: hiddens}, {1: logits}, warmup=False,
                                 max_len=30)
    assert len(pairs) == 1
    assert pairs[0].t_end == 4.0
    assert np.array_equal(pairs[0].h, hiddens[3])


def test_select_pairs_falls_back_when_gate_unreached():
    record, seq = balanced_video()
    vocab = Vocabulary(["foo"])
    prop = ProposalConfig(strides=(1,), proposals_per_step=1, hidden_size=6,
                          score_threshold=0.99)
    store = ParamStore(1)
    init_proposal_params(store, seq.dim, prop, sigma=0.01)
    hiddens, logits, _ = stride_forward(seq, store, prop, 1)
    pairs = select_caption_pairs(record, seq, vocab, store, prop, TrainConfig(),
                                 {1: hiddens}, {1: logits}, warmup=False,
                                 max_len=30)
    assert pairs[0].t_end == 4.0
    expect = gt_interval_hidden(seq, store, prop, 2.0, 4.0)
    assert np.array_equal(pairs[0].h, expect)


def test_skip_signal_on_empty_video():
    seq = FeatureSequence("v", 16, 16.0, np.zeros((4, 5), dtype=np.float32))
    record = VideoRecord("v", 4.0, [])
    prop = ProposalConfig(strides=(1,), proposals_per_step=1, hidden_size=6)
    store = ParamStore(0)
    init_proposal_params(store, 5, prop, sigma=0.0)
    with pytest.raises(SkipVideo):
        select_caption_pairs(record, seq, Vocabulary([]), store, prop,
                             TrainConfig(), {}, {}, warmup=True, max_len=30)


def test_training_is_deterministic():
    records, features = tiny_corpus()
    vocab = build_vocab(records)
    runs = []
    for _ in range(2):
        prop, cap, cfg = tiny_configs(vocab)
        trainer = Trainer(records, features, vocab, prop, cap, cfg,
                          ContextMode.from_name("full"))
        log = trainer.run()
        runs.append((log, {n: trainer.store.values[n].copy()
                           for n in trainer.store.names()}))
    assert runs[0][0] == runs[1][0]
    assert len(runs[0][0]) == 2 * len(records)
    for n in runs[0][1]:
        assert np.array_equal(runs[0][1][n], runs[1][1][n])


def test_caption_phase_leaves_proposal_params_alone():
    records, features = tiny_corpus()
    vocab = build_vocab(records)
    prop, cap, cfg = tiny_configs(vocab, alternate_every=10 ** 6, max_epochs=1)
    trainer = Trainer(records, features, vocab, prop, cap, cfg,
                      ContextMode.from_name("full"))
    before = {n: trainer.store.values[n].copy()
              for n in proposal_param_names(trainer.store)}
    cap_before = {n: trainer.store.values[n].copy()
                  for n in caption_param_names(trainer.store)}
    log = trainer.run()
    assert all(entry[1] == "caption" for entry in log)
    for n, v in before.items():
        assert np.array_equal(trainer.store.values[n], v)
    assert any(not np.array_equal(trainer.store.values[n], v)
               for n, v in cap_before.items())


def test_alternation_switches_phase_and_module():
    records, features = tiny_corpus()
    vocab = build_vocab(records)
    prop, cap, cfg = tiny_configs(vocab, alternate_every=1, max_epochs=1)
    trainer = Trainer(records, features, vocab, prop, cap, cfg,
                      ContextMode.from_name("full"))
    log = trainer.run()
    phases = [entry[1] for entry in log]
    assert phases == ["caption", "proposal"] * (len(records) // 2)


def test_infinite_warmup_equals_no_context_variant():
    records, features = tiny_corpus()
    vocab = build_vocab(records)
    finals = []
    for mode in ("full", "none"):
        prop, cap, cfg = tiny_configs(vocab, warmup_epochs=10 ** 9, max_epochs=2)
        trainer = Trainer(records, features, vocab, prop, cap, cfg,
                          ContextMode.from_name(mode))
        log = trainer.run()
        finals.append((log, {n: trainer.store.values[n].copy()
                             for n in trainer.store.names()}))
    assert finals[0][0] == finals[1][0]
    for n in finals[0][1]:
        assert np.array_equal(finals[0][1][n], finals[1][1][n])


def test_loss_log_roundtrip(tmp_path):
    records, features = tiny_corpus(n_videos=2)
    vocab = build_vocab(records)
    prop, cap, cfg = tiny_configs(vocab, max_epochs=1)
    _, log = train(records, features, vocab, prop, cap, cfg, mode="online")
    path = tmp_path / "loss.csv"
    write_loss_log(log, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "iteration,phase,loss,caption_loss,proposal_loss"
    assert len(lines) == len(log) + 1
    first = lines[1].split(",")
    assert int(first[0]) == log[0][0]
    assert first[1] == log[0][1]
    assert float(first[2]) == log[0][2]


def test_divergent_step_aborts_with_finite_checkpoint(tmp_path):
    records, features = tiny_corpus(n_videos=2)
    vocab = build_vocab(records)
    prop, cap, cfg = tiny_configs(vocab, lr_caption=1e308, max_epochs=1,
                                  warmup_epochs=1)
    trainer = Trainer(records, features, vocab, prop, cap, cfg,
                      ContextMode.from_name("full"))
    abort = tmp_path / "abort.ckpt"
    with pytest.raises(NumericError), np.errstate(all="ignore"):
        trainer.run(abort_path=abort)
    assert abort.exists()
    resumed = Trainer.resume(abort, records, features, vocab, prop, cap, cfg,
                             ContextMode.from_name("full"))
    for n in resumed.store.names():
        assert np.isfinite(resumed.store.values[n]).all()
        assert np.isfinite(resumed.velocity[n]).all()


def test_checkpoint_roundtrip_bit_identical(tmp_path):
    records, features = tiny_corpus()
    vocab = build_vocab(records)
    prop, cap, cfg = tiny_configs(vocab, max_epochs=1)
    trainer = Trainer(records, features, vocab, prop, cap, cfg,
                      ContextMode.from_name("online"))
    trainer.run()
    path = tmp_path / "model.ckpt"
    trainer.save_checkpoint(path)
    loaded = Trainer.resume(path, records, features, vocab, prop, cap, cfg,
                            ContextMode.from_name("online"))
    assert loaded.epoch == trainer.epoch
    assert loaded.pos_in_epoch == trainer.pos_in_epoch
    assert loaded.iteration == trainer.iteration
    for n in trainer.store.names():
        assert np.array_equal(loaded.store.values[n], trainer.store.values[n])
        assert np.array_equal(loaded.velocity[n], trainer.velocity[n])


def test_checkpoint_rejects_wrong_setup(tmp_path):
    records, features = tiny_corpus()
    vocab = build_vocab(records)
    prop, cap, cfg = tiny_configs(vocab, max_epochs=1)
    mode = ContextMode.from_name("full")
    trainer = Trainer(records, features, vocab, prop, cap, cfg, mode)
    path = tmp_path / "model.ckpt"
    trainer.save_checkpoint(path)

    bigger = Vocabulary(list(vocab.tokens[4:]) + ["zzz_extra"])
    cap_big = CaptionConfig(vocab_size=len(bigger), context_dim=10,
                            embed_dim=6, hidden_size=8)
    with pytest.raises(IncompatibilityError):
        Trainer.resume(path, records, features, bigger, prop, cap_big, cfg, mode)

    other_cfg = tiny_configs(vocab, max_epochs=1, lr_caption=0.5)[2]
    with pytest.raises(IncompatibilityError):
        Trainer.resume(path, records, features, vocab, prop, cap, other_cfg, mode)

    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"not a checkpoint at all")
    with pytest.raises(FormatError):
        Trainer.resume(junk, records, features, vocab, prop, cap, cfg, mode)

    truncated = tmp_path / "short.ckpt"
    truncated.write_bytes(path.read_bytes()[:-17])
    with pytest.raises(FormatError):
        Trainer.resume(truncated, records, features, vocab, prop, cap, cfg, mode)


def test_mid_epoch_resume_matches_straight_run(tmp_path):
    records, features = tiny_corpus(n_videos=5, seed=2)
    vocab = build_vocab(records)
    mode = ContextMode.from_name("full")

    prop, cap, cfg = tiny_configs(vocab, max_epochs=2)
    straight = Trainer(records, features, vocab, prop, cap, cfg, mode)
    full_log = straight.run()

    prop, cap, cfg = tiny_configs(vocab, max_epochs=2)
    first = Trainer(records, features, vocab, prop, cap, cfg, mode)
    first.run(stop_after_iteration=3)
    assert first.pos_in_epoch == 3
    path = tmp_path / "mid.ckpt"
    first.save_checkpoint(path)

    second = Trainer.resume(path, records, features, vocab, prop, cap, cfg, mode)
    tail = second.run()
    assert tail == full_log[3:]
    for n in straight.store.names():
        assert np.array_equal(second.store.values[n], straight.store.values[n])
        assert np.array_equal(second.velocity[n], straight.velocity[n])


def test_fingerprint_depends_on_configs():
    records, _ = tiny_corpus(n_videos=2)
    vocab = build_vocab(records)
    prop, cap, cfg = tiny_configs(vocab)
    mode = ContextMode.from_name("full")
    a = config_fingerprint(prop, cap, cfg, mode, 8)
    assert a == config_fingerprint(prop, cap, cfg, mode, 8)
    assert a != config_fingerprint(prop, cap, cfg, mode, 9)
    assert a != config_fingerprint(prop, cap, cfg, ContextMode.from_name("none"), 8)


def test_caption_loss_decreases_on_small_corpus():
    records, features = tiny_corpus(n_videos=6, seed=4)
    vocab = build_vocab(records)
    prop = ProposalConfig(strides=(1, 2), proposals_per_step=3, hidden_size=12)
    cap = CaptionConfig(vocab_size=len(vocab), context_dim=12, embed_dim=8,
                        hidden_size=12)
    cfg = TrainConfig(max_epochs=6, warmup_epochs=10 ** 6, seed=11,
                      alternate_every=2)
    trainer = Trainer(records, features, vocab, prop, cap, cfg,
                      ContextMode.from_name("none"))
    log = trainer.run()
    n = len(records)
    first = [entry[3] for entry in log[:n]]
    last = [entry[3] for entry in log[-n:]]
    assert sum(last) / len(last) < sum(first) / len(first)


def test_trainer_constructor_validation():
    records, features = tiny_corpus(n_videos=2)
    vocab = build_vocab(records)
    prop, cap, cfg = tiny_configs(vocab)
    bad_cap = CaptionConfig(vocab_size=len(vocab), context_dim=99,
                            embed_dim=6, hidden_size=8)
    with pytest.raises(ConfigError):
        Trainer(records, features, vocab, prop, bad_cap, cfg,
                ContextMode.from_name("full"))
    wrong_vocab = CaptionConfig(vocab_size=len(vocab) + 3, context_dim=10,
                                embed_dim=6, hidden_size=8)
    with pytest.raises(ConfigError):
        Trainer(records, features, vocab, prop, wrong_vocab, cfg,
                ContextMode.from_name("full"))
