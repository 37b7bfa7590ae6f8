"""Training loops: offline joint learning over synthetic sequences,
first-frame finetuning, the periodic online update, and the optimizers
they share.

The ablation switchboard lives here: "wo-C-learning" feeds same-frame
positive pairs instead of consecutive-frame ones, "tarspec" freezes the
classifier layers during offline training, and the loss-term variants
are forwarded to the loss/net layer.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .dataset import Frame, Sequence
from .errors import ConfigError, NumericalError, SamplerExhausted
from .geometry import BBox, crop_resize_normalize
from .loss import VARIANTS, LossWeights, loss_c, loss_d, loss_s
from .net import Model, TripletBatch, backward, forward_classifier, forward_features
from .sampler import Sampler, SamplerConfig

log = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd")

# Parameters frozen by the "tarspec" variant during offline training and
# the ones kept when finetuning is restricted to the classifier.
CLASSIFIER_PARAMS = ("W3", "b3", "W4", "b4", "W5", "b5")
FEATURE_PARAMS = ("W1", "b1", "W2", "b2")


@dataclass(frozen=True)
class TrainConfig:
    """One training phase's knobs. Defaults fit the offline phase; the
    online phases construct their own instances (SGD, fewer steps)."""

    iterations: int = 2000
    learning_rate: float = 0.001
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    variant: str = "full"
    seed: int = 0
    skip_occluded: bool = True
    classifier_only: bool = False

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be > 0")


@dataclass
class TraceRow:
    """Per-step loss record. Term columns hold the unweighted batch-mean
    value of each active term; dropped terms record 0.0."""

    step: int
    loss: float
    loss_c: float
    loss_d: float
    loss_s: float


TRACE_HEADER = "step,loss,loss_c,loss_d,loss_s"


def write_trace(trace: Iterable[TraceRow], path: str | Path) -> None:
    """Loss-trace CSV with repr floats, byte-stable across re-runs."""
    lines = [TRACE_HEADER]
    for row in trace:
        lines.append(
            f"{row.step},{float(row.loss)!r},{float(row.loss_c)!r},"
            f"{float(row.loss_d)!r},{float(row.loss_s)!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class OptState:
    """Adam moment estimates; empty and unused for SGD."""

    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptState,
    config: TrainConfig,
) -> tuple[dict[str, np.ndarray], OptState]:
    """Apply one SGD or Adam step in place; returns (params, state)."""
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ValueError(
                f"gradient shape {grads[name].shape} != parameter shape "
                f"{p.shape} for {name}"
            )
    lr = config.learning_rate
    if config.optimizer == "sgd":
        for name, p in params.items():
            p -= lr * grads[name]
        return params, state

    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    return params, state


def _patch_side(model: Model, frame: Frame) -> int:
    channels = frame.pixels.shape[2] if frame.pixels.ndim == 3 else 1
    r = model.dims[0]
    if r % channels:
        raise ConfigError(
            f"model input size {r} is not divisible by {channels} channels"
        )
    side = math.isqrt(r // channels)
    if side * side * channels != r:
        raise ConfigError(
            f"model input size {r} with {channels} channels is not a square patch"
        )
    return side


def _crop_all(frame: Frame, boxes: list[BBox], side: int):
    return [crop_resize_normalize(frame.pixels, b, side) for b in boxes]


def _term_values(
    model: Model, batch: TripletBatch, weights: LossWeights, variant: str
) -> tuple[float, float, float]:
    """Unweighted batch means of the three loss terms under the variant
    (0.0 where a term is switched off)."""
    f_a = forward_features(model, batch.a)
    f_n = forward_features(model, batch.n)
    p_a = forward_classifier(model, f_a)
    p_n = forward_classifier(model, f_n)
    s_val = float(np.mean(loss_s(p_a, p_n, weights.p_floor)))
    if variant == "SlossOnly":
        return 0.0, 0.0, s_val
    f_b = forward_features(model, batch.b)
    c_val = float(np.mean(loss_c(f_a, f_b)))
    if variant == "wo-Dloss":
        return c_val, 0.0, s_val
    d_val = float(np.mean(loss_d(f_a, f_n, weights.beta)))
    return c_val, d_val, s_val


def _freeze(grads: dict[str, np.ndarray], names: tuple[str, ...]) -> None:
    for name in names:
        grads[name][:] = 0.0


def _step(
    model: Model,
    batch: TripletBatch,
    weights: LossWeights,
    tc: TrainConfig,
    state: OptState,
    params: dict[str, np.ndarray],
    mode: str,
    variant: str,
    freeze: tuple[str, ...],
) -> TraceRow:
    c_val, d_val, s_val = _term_values(model, batch, weights, variant)
    grads, value = backward(model, batch, weights, mode=mode, variant=variant)
    if freeze:
        _freeze(grads, freeze)
    optimizer_step(params, grads, state, tc)
    model.assert_finite()
    return TraceRow(0, value, c_val, d_val, s_val)


def train_offline(
    sequences: list[Sequence],
    model: Model,
    train_config: TrainConfig,
    sampler_config: SamplerConfig,
    weights: LossWeights = LossWeights(),
) -> tuple[Model, list[TraceRow]]:
    """Joint offline training: each step samples a consecutive frame pair
    from a random sequence, draws positives/negatives, and applies one
    optimizer step on the batch-mean combined loss. Returns a trained
    copy of the model and the per-step loss trace."""
    if not sequences:
        raise ConfigError("train_offline needs at least one sequence")
    for seq in sequences:
        if seq.T < 2:
            raise ConfigError(f"sequence {seq.name!r} has fewer than 2 frames")

    tc = train_config
    variant = tc.variant
    same_frame_pairs = variant == "wo-C-learning"
    pairs = [
        (si, t)
        for si, seq in enumerate(sequences)
        for t in range(seq.T - 1)
        if not (tc.skip_occluded and (seq.occluded[t] or seq.occluded[t + 1]))
    ]
    if not pairs:
        raise ConfigError("no usable frame pairs (everything occluded?)")

    model = model.copy()
    model.assert_finite()
    params = dict(model.params())
    state = OptState()
    sampler = Sampler(sampler_config)
    rng = np.random.default_rng(tc.seed)
    freeze: tuple[str, ...] = CLASSIFIER_PARAMS if variant == "tarspec" else ()
    if tc.classifier_only:
        freeze = freeze + FEATURE_PARAMS

    trace: list[TraceRow] = []
    for step in range(tc.iterations):
        si, t = pairs[int(rng.integers(len(pairs)))]
        seq = sequences[si]
        frame_t, frame_t1 = seq.frames[t], seq.frames[t + 1]
        side = _patch_side(model, frame_t)
        fw, fh = frame_t.width, frame_t.height
        gt_t, gt_t1 = seq.groundtruth[t], seq.groundtruth[t + 1]

        pos_a = _crop_all(frame_t, sampler.sample_positives(gt_t, fw, fh, frame=t), side)
        if same_frame_pairs:
            pos_b = _crop_all(
                frame_t, sampler.sample_positives(gt_t, fw, fh, frame=t), side
            )
        else:
            pos_b = _crop_all(
                frame_t1, sampler.sample_positives(gt_t1, fw, fh, frame=t + 1), side
            )
        neg_boxes, _ = sampler.sample_negatives(gt_t, frame=t)
        negs = _crop_all(frame_t, neg_boxes, side)

        if variant == "SlossOnly":
            triplets = sampler.build_triplets(pos_a, pos_a, negs, tc.batch_size)
            batch = TripletBatch.from_triplets(triplets)
            batch.b = None
        else:
            triplets = sampler.build_triplets(pos_a, pos_b, negs, tc.batch_size)
            batch = TripletBatch.from_triplets(triplets)
        row = _step(model, batch, weights, tc, state, params, "offline", variant, freeze)
        row.step = step
        trace.append(row)
    return model, trace


def finetune_initial(
    model: Model,
    frame: Frame,
    gt: BBox,
    train_config: TrainConfig,
    sampler_config: SamplerConfig,
    weights: LossWeights = LossWeights(),
) -> Model:
    """First-frame finetuning: same-frame positive pairs (two positive
    pools), negatives from the usual IoU window, full combined loss."""
    clipped = gt.clipped(frame.width, frame.height)
    if gt.w <= 0 or gt.h <= 0 or clipped.w <= 0 or clipped.h <= 0:
        raise ConfigError(f"first-frame ground truth {gt} is not a visible box")
    tc = train_config
    model = model.copy()
    model.assert_finite()
    params = dict(model.params())
    state = OptState()
    sampler = Sampler(sampler_config)
    side = _patch_side(model, frame)
    freeze = FEATURE_PARAMS if tc.classifier_only else ()

    for step in range(tc.iterations):
        pos_a = _crop_all(
            frame, sampler.sample_positives(gt, frame.width, frame.height), side
        )
        pos_b = _crop_all(
            frame, sampler.sample_positives(gt, frame.width, frame.height), side
        )
        neg_boxes, _ = sampler.sample_negatives(gt)
        negs = _crop_all(frame, neg_boxes, side)
        triplets = sampler.build_triplets(pos_a, pos_b, negs, tc.batch_size)
        batch = TripletBatch.from_triplets(triplets)
        _step(model, batch, weights, tc, state, params, "online-init", "full", freeze)
    return model


def finetune_update(
    model: Model,
    frame: Frame,
    pred: BBox,
    train_config: TrainConfig,
    sampler_config: SamplerConfig,
    weights: LossWeights = LossWeights(),
    frame_index: int | None = None,
) -> Model:
    """Periodic online update: draw one update batch around the current
    prediction, then take the configured number of SGD/Adam steps on it.
    Sampler exhaustion skips the update (tracking must not die)."""
    tc = train_config
    try:
        sampler = Sampler(sampler_config)
        pos_boxes, neg_boxes = sampler.sample_update_batch(
            pred, frame.width, frame.height, frame=frame_index
        )
    except SamplerExhausted as exc:
        log.warning("online update skipped: %s", exc)
        return model
    side = _patch_side(model, frame)
    pos = _crop_all(frame, pos_boxes, side)
    negs = _crop_all(frame, neg_boxes, side)

    model = model.copy()
    params = dict(model.params())
    state = OptState()
    freeze = FEATURE_PARAMS if tc.classifier_only else ()
    for step in range(tc.iterations):
        triplets = sampler.build_triplets(pos, pos, negs, tc.batch_size)
        batch = TripletBatch.from_triplets(triplets)
        _step(model, batch, weights, tc, state, params, "online-init", "full", freeze)
    return model
