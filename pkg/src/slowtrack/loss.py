"""Loss terms for joint appearance-continuity / centroid-discrimination
training, and their weighted combination.

All functions accept single feature vectors (n,) or batches (B, n) and
return a scalar or (B,) array accordingly. Batch reduction is left to
the caller and is an arithmetic mean throughout this package: a mean
(rather than a sum over all index pairs) keeps the learning rate
meaningful independent of batch size. This is a deliberate deviation
from the summed form of the original objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

VARIANTS = ("full", "wo-C-learning", "wo-Dloss", "SlossOnly", "tarspec")
MODES = ("offline", "online-init")


@dataclass(frozen=True)
class LossWeights:
    """Trade-off weights and stabilizers for the combined loss."""

    lam: float = 10.0
    mu: float = 10.0
    beta: float = 1.0
    p_floor: float = 1e-12

    def __post_init__(self) -> None:
        if self.lam < 0 or self.mu < 0:
            raise ConfigError(f"lam and mu must be >= 0, got {self.lam}, {self.mu}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if not (0.0 < self.p_floor < 0.5):
            raise ConfigError(f"p_floor must be in (0, 0.5), got {self.p_floor}")


def _pair(fa: np.ndarray, fb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    fa = np.asarray(fa, dtype=np.float64)
    fb = np.asarray(fb, dtype=np.float64)
    if fa.shape != fb.shape:
        raise ValueError(f"feature shape mismatch: {fa.shape} vs {fb.shape}")
    return fa, fb


def loss_c(fa: np.ndarray, fb: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance between a consecutive-frame positive
    pair: small when the embedding respects temporal appearance
    continuity."""
    fa, fb = _pair(fa, fb)
    d = fa - fb
    return np.sum(d * d, axis=-1)


def loss_d(fp: np.ndarray, fn: np.ndarray, beta: float = 1.0) -> np.ndarray:
    """exp(-beta * ||fp - fn||^2): near 1 when a positive/negative pair
    collapses together, decaying to 0 as they separate."""
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    return np.exp(-beta * loss_c(fp, fn))


def loss_s(
    p_pos: np.ndarray, p_neg: np.ndarray, p_floor: float = 1e-12
) -> np.ndarray:
    """Pairwise cross entropy -log((1 - p_neg) * p_pos), with both
    probabilities clamped into [p_floor, 1 - p_floor] to guard log(0)."""
    pp = np.clip(np.asarray(p_pos, dtype=np.float64), p_floor, 1.0 - p_floor)
    pn = np.clip(np.asarray(p_neg, dtype=np.float64), p_floor, 1.0 - p_floor)
    return -(np.log1p(-pn) + np.log(pp))


def loss_p(fa: np.ndarray, fb: np.ndarray) -> np.ndarray:
    """Same kernel as loss_c, contractually applied to positive pairs
    drawn from the *same* frame (first-frame finetuning, and the
    ablation that replaces cross-frame continuity learning)."""
    return loss_c(fa, fb)


def total_loss(
    f_a: np.ndarray | None,
    f_b: np.ndarray | None,
    f_neg: np.ndarray | None,
    p_pos: np.ndarray,
    p_neg: np.ndarray,
    weights: LossWeights,
    mode: str = "offline",
    variant: str = "full",
) -> np.ndarray:
    """Weighted combination: pair term + lam * discrimination + mu *
    classification.

    mode records where the positive pair (f_a, f_b) came from —
    "offline" pairs positives from consecutive frames, "online-init"
    pairs positives from the same frame — and exists so callers state
    their intent; the arithmetic is identical. The variant switchboard
    zeroes terms: "wo-Dloss" drops the discrimination term, "SlossOnly"
    keeps only the classification term. ("wo-C-learning" and "tarspec"
    change *what the trainer feeds and updates*, not this formula.)

    Unused feature arguments may be None; missing required ones raise
    ValueError.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}, expected one of {MODES}")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}, expected one of {VARIANTS}")

    total = weights.mu * loss_s(p_pos, p_neg, weights.p_floor)
    if variant == "SlossOnly":
        return total
    if f_a is None or f_b is None:
        raise ValueError(f"variant {variant!r} in mode {mode!r} needs the positive pair")
    pair = loss_p(f_a, f_b) if mode == "online-init" else loss_c(f_a, f_b)
    total = pair + total
    if variant != "wo-Dloss":
        if f_neg is None:
            raise ValueError(f"variant {variant!r} needs negative features")
        total = total + weights.lam * loss_d(f_a, f_neg, weights.beta)
    return total
