"""Tests for the training loops: optimizer arithmetic, the offline phase
over synthetic sequences, and the two online finetuning entry points.

Training-quality regressions (loss reduction, classifier margins) are
pinned from deterministic pilot runs at small scale; the full-scale
budgeted versions live in the acceptance suite.
"""

import logging

import numpy as np
import pytest

from slowtrack.dataset import Frame, Sequence, SynthSpec, generate
from slowtrack.errors import ConfigError
from slowtrack.geometry import BBox, crop_many
from slowtrack.loss import LossWeights
from slowtrack.net import Model, forward_classifier, forward_features, init_model
from slowtrack.sampler import Sampler, SamplerConfig
from slowtrack.train import (
    CLASSIFIER_PARAMS,
    FEATURE_PARAMS,
    OptState,
    TrainConfig,
    finetune_initial,
    finetune_update,
    optimizer_step,
    train_offline,
)

# Small everywhere: 8x8 grayscale patches keep each optimizer step ~1ms.
DIMS = (64, 16, 8, 8, 4, 2)
SIDE = 8


def params_of(model: Model) -> dict[str, np.ndarray]:
    return dict(model.params())


def assert_params_equal(a: Model, b: Model) -> None:
    pa, pb = params_of(a), params_of(b)
    assert pa.keys() == pb.keys()
    for name in pa:
        assert np.array_equal(pa[name], pb[name]), name


def assert_params_differ(a: Model, b: Model, names) -> None:
    pa, pb = params_of(a), params_of(b)
    for name in names:
        assert not np.array_equal(pa[name], pb[name]), name


@pytest.fixture(scope="module")
def corpus():
    return [generate(SynthSpec(T=12, velocity=(1.0, 0.0), seed=s)) for s in range(2)]


class TestTrainConfig:
    def test_defaults_valid(self):
        tc = TrainConfig()
        assert tc.optimizer == "adam"
        assert tc.iterations == 2000

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"iterations": -1},
            {"learning_rate": 0.0},
            {"learning_rate": -0.1},
            {"optimizer": "rmsprop"},
            {"batch_size": 0},
            {"variant": "bogus"},
            {"adam_beta1": 1.0},
            {"adam_beta2": -0.5},
            {"adam_eps": 0.0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)


class TestOptimizerStep:
    def test_sgd_zero_gradient_is_identity(self):
        params = {"W": np.array([[1.0, -2.0], [3.5, 0.25]])}
        before = params["W"].copy()
        grads = {"W": np.zeros((2, 2))}
        optimizer_step(params, grads, OptState(), TrainConfig(optimizer="sgd"))
        assert np.array_equal(params["W"], before)

    def test_sgd_closed_form(self):
        # theta <- theta - lr * g: 1.0 - 0.1 * 2.0 = 0.8, exactly.
        params = {"w": np.array([1.0])}
        grads = {"w": np.array([2.0])}
        tc = TrainConfig(optimizer="sgd", learning_rate=0.1)
        optimizer_step(params, grads, OptState(), tc)
        assert params["w"][0] == 0.8

    def test_sgd_updates_in_place(self):
        arr = np.array([1.0, 2.0])
        params = {"w": arr}
        out, _ = optimizer_step(
            params,
            {"w": np.ones(2)},
            OptState(),
            TrainConfig(optimizer="sgd", learning_rate=0.5),
        )
        assert out is params
        assert out["w"] is arr
        assert np.array_equal(arr, [0.5, 1.5])

    def test_adam_first_step_oracle(self):
        # With zero state the bias corrections cancel the decay exactly:
        # m_hat = g, v_hat = g*g, so the step is lr * g / (|g| + eps).
        g = np.array([2.0, -0.5, 1e-3])
        lr = 0.001
        tc = TrainConfig(optimizer="adam", learning_rate=lr)
        params = {"w": np.zeros(3)}
        optimizer_step(params, {"w": g.copy()}, OptState(), tc)
        expected = -lr * g / (np.abs(g) + tc.adam_eps)
        np.testing.assert_allclose(params["w"], expected, rtol=1e-12)
        # ...which is within eps of a signed constant step.
        np.testing.assert_allclose(params["w"], -lr * np.sign(g), rtol=1e-5)

    def test_adam_zero_gradient_is_identity(self):
        params = {"w": np.array([3.0])}
        optimizer_step(params, {"w": np.zeros(1)}, OptState(), TrainConfig())
        assert params["w"][0] == 3.0

    def test_adam_state_advances(self):
        state = OptState()
        params = {"w": np.zeros(2)}
        g = {"w": np.ones(2)}
        optimizer_step(params, g, state, TrainConfig())
        assert state.t == 1
        assert set(state.m) == {"w"}
        optimizer_step(params, g, state, TrainConfig())
        assert state.t == 2

    def test_sgd_leaves_state_untouched(self):
        state = OptState()
        optimizer_step(
            {"w": np.ones(1)},
            {"w": np.ones(1)},
            state,
            TrainConfig(optimizer="sgd"),
        )
        assert state.t == 0 and not state.m and not state.v

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            optimizer_step(
                {"w": np.zeros((2, 2))},
                {"w": np.zeros((2, 3))},
                OptState(),
                TrainConfig(),
            )


class TestTrainOffline:
    def test_requires_sequences(self):
        with pytest.raises(ConfigError):
            train_offline([], init_model(DIMS, seed=0), TrainConfig(), SamplerConfig())

    def test_rejects_single_frame_sequence(self, corpus):
        seq = corpus[0]
        stub = Sequence("stub", seq.frames[:1], seq.groundtruth[:1])
        with pytest.raises(ConfigError, match="fewer than 2"):
            train_offline([stub], init_model(DIMS, seed=0), TrainConfig(), SamplerConfig())

    def test_rejects_fully_occluded_corpus(self, corpus):
        seq = corpus[0]
        shroud = Sequence("shroud", seq.frames, seq.groundtruth, [True] * seq.T)
        with pytest.raises(ConfigError, match="occluded"):
            train_offline([shroud], init_model(DIMS, seed=0), TrainConfig(), SamplerConfig())

    def test_zero_iterations_returns_equal_copy(self, corpus):
        m0 = init_model(DIMS, seed=0)
        m1, trace = train_offline(corpus, m0, TrainConfig(iterations=0), SamplerConfig())
        assert trace == []
        assert m1 is not m0
        assert_params_equal(m0, m1)

    def test_input_model_not_mutated(self, corpus):
        m0 = init_model(DIMS, seed=0)
        snapshot = {k: v.copy() for k, v in m0.params()}
        train_offline(
            corpus, m0, TrainConfig(iterations=3, batch_size=4, seed=1), SamplerConfig(seed=2)
        )
        for name, arr in m0.params():
            assert np.array_equal(arr, snapshot[name]), name

    def test_deterministic_given_seeds(self, corpus):
        m0 = init_model(DIMS, seed=0)
        tc = TrainConfig(iterations=10, batch_size=4, seed=5)
        ma, ta = train_offline(corpus, m0, tc, SamplerConfig(seed=6))
        mb, tb = train_offline(corpus, m0, tc, SamplerConfig(seed=6))
        assert ta == tb
        assert_params_equal(ma, mb)

    def test_trace_shape_and_range(self, corpus):
        m0 = init_model(DIMS, seed=0)
        _, trace = train_offline(
            corpus, m0, TrainConfig(iterations=8, batch_size=4, seed=1), SamplerConfig(seed=2)
        )
        assert [r.step for r in trace] == list(range(8))
        for r in trace:
            # Every term is a mean of non-negative quantities.
            assert r.loss >= 0.0 and np.isfinite(r.loss)
            assert r.loss_c >= 0.0 and r.loss_d >= 0.0 and r.loss_s >= 0.0

    def test_loss_drops_by_half(self, corpus):
        # Pilot at these exact seeds: first-20 mean 5.36 -> last-20 mean
        # ratio 0.30. The gate leaves headroom without being vacuous.
        m0 = init_model(DIMS, seed=0)
        _, trace = train_offline(
            corpus,
            m0,
            TrainConfig(iterations=300, batch_size=8, seed=1),
            SamplerConfig(seed=2),
        )
        first = np.mean([r.loss for r in trace[:20]])
        last = np.mean([r.loss for r in trace[-20:]])
        assert last < 0.5 * first

    def test_occluded_pairs_are_skipped(self, corpus):
        # Occlude everything after frame 1: the only usable pair is
        # (0, 1), so the run must match training on the two-frame
        # truncation of the same sequence, draw for draw.
        seq = corpus[0]
        flags = [False, False] + [True] * (seq.T - 2)
        shrouded = Sequence("s", seq.frames, seq.groundtruth, flags)
        head = Sequence("s", seq.frames[:2], seq.groundtruth[:2])
        m0 = init_model(DIMS, seed=0)
        tc = TrainConfig(iterations=6, batch_size=4, seed=3)
        ma, ta = train_offline([shrouded], m0, tc, SamplerConfig(seed=4))
        mb, tb = train_offline([head], m0, tc, SamplerConfig(seed=4))
        assert ta == tb
        assert_params_equal(ma, mb)

    def test_skip_occluded_off_uses_occluded_frames(self, corpus):
        seq = corpus[0]
        flags = [False, False] + [True] * (seq.T - 2)
        shrouded = Sequence("s", seq.frames, seq.groundtruth, flags)
        m0 = init_model(DIMS, seed=0)
        tc = TrainConfig(iterations=6, batch_size=4, seed=3, skip_occluded=False)
        head = Sequence("s", seq.frames[:2], seq.groundtruth[:2])
        _, ta = train_offline([shrouded], m0, tc, SamplerConfig(seed=4))
        _, tb = train_offline([head], m0, tc, SamplerConfig(seed=4))
        assert ta != tb  # the pair pool is genuinely larger


class TestVariants:
    def run_one(self, corpus, variant, iterations=1):
        m0 = init_model(DIMS, seed=0)
        tc = TrainConfig(iterations=iterations, batch_size=4, seed=7, variant=variant)
        return train_offline(corpus, m0, tc, SamplerConfig(seed=8))

    def test_dropping_d_term_changes_only_that_column(self, corpus):
        _, full = self.run_one(corpus, "full")
        _, wo = self.run_one(corpus, "wo-Dloss")
        f, w = full[0], wo[0]
        # Identical seeds -> identical first batch -> shared terms agree.
        assert f.loss_c == w.loss_c
        assert f.loss_s == w.loss_s
        assert w.loss_d == 0.0
        assert f.loss_d > 0.0
        lam = LossWeights().lam
        assert f.loss == pytest.approx(w.loss + lam * f.loss_d, rel=1e-12)

    def test_sloss_only_trains_on_classifier_term_alone(self, corpus):
        _, trace = self.run_one(corpus, "SlossOnly", iterations=4)
        mu = LossWeights().mu
        for r in trace:
            assert r.loss_c == 0.0 and r.loss_d == 0.0
            assert r.loss == pytest.approx(mu * r.loss_s, rel=1e-12)

    def test_same_frame_pair_variant_runs(self, corpus):
        _, trace = self.run_one(corpus, "wo-C-learning", iterations=4)
        for r in trace:
            assert np.isfinite(r.loss)
            assert r.loss_d > 0.0  # discrimination term still active

    def test_frozen_classifier_variant(self, corpus):
        m0 = init_model(DIMS, seed=0)
        tc = TrainConfig(iterations=5, batch_size=4, seed=7, variant="tarspec")
        m1, _ = train_offline(corpus, m0, tc, SamplerConfig(seed=8))
        p0, p1 = params_of(m0), params_of(m1)
        for name in CLASSIFIER_PARAMS:
            assert np.array_equal(p0[name], p1[name]), name
        assert_params_differ(m0, m1, ("W1", "W2"))

    def test_classifier_only_freezes_features(self, corpus):
        m0 = init_model(DIMS, seed=0)
        tc = TrainConfig(iterations=5, batch_size=4, seed=7, classifier_only=True)
        m1, _ = train_offline(corpus, m0, tc, SamplerConfig(seed=8))
        p0, p1 = params_of(m0), params_of(m1)
        for name in FEATURE_PARAMS:
            assert np.array_equal(p0[name], p1[name]), name
        assert_params_differ(m0, m1, ("W3", "W5"))


def _probe_scores(model, frame, boxes):
    X = crop_many(frame.pixels, boxes, SIDE).reshape(len(boxes), -1)
    return forward_classifier(model, forward_features(model, X))


class TestFinetuneInitial:
    def setup_method(self):
        self.seq = generate(SynthSpec(T=12, velocity=(1.0, 0.0), seed=0))
        self.frame = self.seq.frames[0]
        self.gt = self.seq.groundtruth[0]

    def test_zero_iterations_returns_equal_copy(self):
        m0 = init_model(DIMS, seed=0)
        m1 = finetune_initial(
            m0, self.frame, self.gt, TrainConfig(iterations=0), SamplerConfig()
        )
        assert m1 is not m0
        assert_params_equal(m0, m1)

    def test_rejects_invisible_box(self):
        m0 = init_model(DIMS, seed=0)
        with pytest.raises(ConfigError, match="visible"):
            finetune_initial(
                m0, self.frame, BBox(-50.0, -50.0, 10.0, 10.0), TrainConfig(), SamplerConfig()
            )

    def test_deterministic(self):
        m0 = init_model(DIMS, seed=0)
        tc = TrainConfig(iterations=5, optimizer="sgd", learning_rate=0.01, seed=3, batch_size=4)
        a = finetune_initial(m0, self.frame, self.gt, tc, SamplerConfig(seed=4))
        b = finetune_initial(m0, self.frame, self.gt, tc, SamplerConfig(seed=4))
        assert_params_equal(a, b)

    def test_separates_target_from_background(self):
        # Pilot at these seeds: mean p(pos) 0.94, mean p(neg) 0.0003.
        m0 = init_model(DIMS, seed=0)
        tc = TrainConfig(
            iterations=100, optimizer="sgd", learning_rate=0.01, seed=3, batch_size=8
        )
        m1 = finetune_initial(m0, self.frame, self.gt, tc, SamplerConfig(seed=4))
        probe = Sampler(SamplerConfig(seed=77))
        pos = probe.sample_positives(self.gt, self.frame.width, self.frame.height)
        neg, _ = probe.sample_negatives(self.gt)
        p_pos = _probe_scores(m1, self.frame, pos).mean()
        p_neg = _probe_scores(m1, self.frame, neg).mean()
        assert p_pos - p_neg > 0.5
        assert p_pos > 0.8
        assert p_neg < 0.2

    def test_rejects_non_square_input_size(self):
        m = init_model((65, 8, 4, 4, 3, 2), seed=0)
        with pytest.raises(ConfigError, match="square"):
            finetune_initial(
                m, self.frame, self.gt, TrainConfig(iterations=1), SamplerConfig()
            )


class TestFinetuneUpdate:
    def setup_method(self):
        self.seq = generate(SynthSpec(T=12, velocity=(1.0, 0.0), seed=0))
        m0 = init_model(DIMS, seed=0)
        tc = TrainConfig(
            iterations=100, optimizer="sgd", learning_rate=0.01, seed=3, batch_size=8
        )
        self.model = finetune_initial(
            m0, self.seq.frames[0], self.seq.groundtruth[0], tc, SamplerConfig(seed=4)
        )
        self.update_tc = TrainConfig(
            iterations=30, optimizer="sgd", learning_rate=0.01, seed=5, batch_size=8
        )

    def test_zero_iterations_returns_equal_copy(self):
        frame, box = self.seq.frames[4], self.seq.groundtruth[4]
        out = finetune_update(
            self.model, frame, box, TrainConfig(iterations=0), SamplerConfig(seed=6)
        )
        assert out is not self.model
        assert_params_equal(out, self.model)

    def test_exhaustion_skips_and_warns(self, caplog):
        frame = self.seq.frames[4]
        lost = BBox(-100.0, -100.0, 10.0, 10.0)
        with caplog.at_level(logging.WARNING, logger="slowtrack.train"):
            out = finetune_update(
                self.model, frame, lost, self.update_tc, SamplerConfig(seed=6)
            )
        assert out is self.model  # untouched, not even copied
        assert any("update skipped" in r.message for r in caplog.records)

    def test_update_does_not_degrade_target_score(self):
        # Pilot: mean p over fresh positives 0.938 before, 0.953 after.
        frame, box = self.seq.frames[4], self.seq.groundtruth[4]
        out = finetune_update(self.model, frame, box, self.update_tc, SamplerConfig(seed=6))
        probe = Sampler(SamplerConfig(seed=77))
        pos = probe.sample_positives(box, frame.width, frame.height)
        before = _probe_scores(self.model, frame, pos).mean()
        after = _probe_scores(out, frame, pos).mean()
        assert after > before - 1e-6
        assert after > 0.9

    def test_deterministic(self):
        frame, box = self.seq.frames[4], self.seq.groundtruth[4]
        a = finetune_update(self.model, frame, box, self.update_tc, SamplerConfig(seed=6))
        b = finetune_update(self.model, frame, box, self.update_tc, SamplerConfig(seed=6))
        assert_params_equal(a, b)
