"""Sample-drawing protocols used by training and tracking.

Four protocols live here, all owned by a single seeded Sampler so every
draw is a deterministic function of (inputs, seed, call order):

* positives: the ground-truth box shifted by a small integer offset,
* negatives: rejection-sampled boxes whose IoU with the ground truth
  falls in a fixed window,
* candidates: Gaussian center / log-normal scale proposals around the
  previous prediction,
* update batches: positives and negatives drawn inside a search window
  of twice the predicted box size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SamplerExhausted
from .geometry import BBox, Patch, iou_many


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs shared by all sampling protocols."""

    lo: float = 0.2
    hi: float = 0.6
    shift_max: int = 2
    m_p: int = 16
    m_n: int = 32
    sigma_xy: float = 0.25
    sigma_scale: float = 0.05
    max_rejections: int = 5000
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.lo < self.hi <= 1.0):
            raise ConfigError(
                f"need 0 < lo < hi <= 1, got lo={self.lo}, hi={self.hi}"
            )
        if self.shift_max not in (1, 2):
            raise ConfigError(f"shift_max must be 1 or 2, got {self.shift_max}")
        if self.m_p < 1 or self.m_n < 1:
            raise ConfigError("m_p and m_n must be >= 1")
        if self.sigma_xy < 0 or self.sigma_scale < 0:
            raise ConfigError("sigmas must be non-negative")
        if self.max_rejections < 1:
            raise ConfigError("max_rejections must be >= 1")


@dataclass(frozen=True)
class Triplet:
    """One training triplet: two positives from consecutive frames plus a
    negative from the earlier frame. Boxes ride along on each patch."""

    pos_t: Patch
    pos_t1: Patch
    neg_t: Patch


# Update-time label thresholds. Proposals between the two are discarded
# rather than labeled.
UPDATE_POS_IOU = 0.9
UPDATE_NEG_IOU = 0.6

# Translation std for update-time positive proposals, as a fraction of
# box size. IoU >= 0.9 tolerates center offsets of only ~5% of the box
# side, so proposing much wider would waste nearly every draw.
_UPDATE_POS_SIGMA = 0.03


def _positive_offsets(shift_max: int) -> list[tuple[int, int]]:
    return [
        (dx, dy)
        for dx in range(-shift_max, shift_max + 1)
        for dy in range(-shift_max, shift_max + 1)
        if max(abs(dx), abs(dy)) >= 1
    ]


def _inside(box: BBox, frame_w: float, frame_h: float) -> bool:
    return (
        box.x >= 0
        and box.y >= 0
        and box.x + box.w <= frame_w
        and box.y + box.h <= frame_h
    )


class Sampler:
    """Owns one RNG stream; not meant to be shared across workers."""

    def __init__(self, config: SamplerConfig):
        self.config = config
        self.rng = np.random.default_rng(config.seed)

    # -- positives ---------------------------------------------------------

    def sample_positives(
        self, gt: BBox, frame_w: float, frame_h: float, frame: int | None = None
    ) -> list[BBox]:
        """Draw m_p copies of gt shifted by a uniform integer offset with
        1 <= max(|dx|,|dy|) <= shift_max. Size is never changed."""
        cfg = self.config
        offsets = _positive_offsets(cfg.shift_max)
        out: list[BBox] = []
        attempts = 0
        while len(out) < cfg.m_p:
            if attempts >= cfg.max_rejections:
                raise SamplerExhausted(
                    f"positive sampling gave up after {attempts} attempts"
                    + _at(frame)
                )
            attempts += 1
            dx, dy = offsets[int(self.rng.integers(len(offsets)))]
            box = gt.shifted(float(dx), float(dy))
            clip = box.clipped(frame_w, frame_h)
            if clip.w <= 0 or clip.h <= 0:
                continue
            out.append(box)
        return out

    # -- negatives ---------------------------------------------------------

    def sample_negatives(
        self, gt: BBox, frame: int | None = None
    ) -> tuple[list[BBox], np.ndarray]:
        """Rejection-sample m_n boxes with lo <= IoU(box, gt) <= hi from a
        Gaussian translation / log-normal scale perturbation of gt.

        Returns the boxes together with their recorded IoUs.
        """
        cfg = self.config
        step = max(gt.w, gt.h)
        boxes: list[BBox] = []
        ious: list[float] = []
        attempts = 0
        while len(boxes) < cfg.m_n:
            k = min(max(4 * (cfg.m_n - len(boxes)), 64), cfg.max_rejections - attempts)
            if k <= 0:
                raise SamplerExhausted(
                    f"negative sampling found {len(boxes)}/{cfg.m_n} boxes in "
                    f"{attempts} attempts{_at(frame)}"
                )
            attempts += k
            prop = self._perturb(gt, k, cfg.sigma_xy * step, cfg.sigma_scale)
            prop_iou = iou_many(prop, gt)
            for row, v in zip(prop, prop_iou):
                if cfg.lo <= v <= cfg.hi:
                    boxes.append(BBox(*row))
                    ious.append(float(v))
                    if len(boxes) == cfg.m_n:
                        break
        return boxes, np.array(ious)

    # -- candidates ----------------------------------------------------------

    def sample_candidates(
        self, prev: BBox, m: int, frame_w: float, frame_h: float
    ) -> list[BBox]:
        """Draw m candidate boxes around prev: centers jittered by a
        zero-mean Gaussian with std sigma_xy * max(w, h), sizes scaled by
        exp(N(0, sigma_scale)), clipped to the frame. Draws that end up
        entirely outside the frame are redrawn."""
        cfg = self.config
        step = cfg.sigma_xy * max(prev.w, prev.h)
        out: list[BBox] = []
        attempts = 0
        while len(out) < m:
            k = m - len(out)
            attempts += k
            if attempts > 1000 * max(m, 1):
                raise SamplerExhausted(
                    f"candidate sampling stuck around {prev}; is it in view?"
                )
            for row in self._perturb(prev, k, step, cfg.sigma_scale):
                box = BBox(*row)
                if not _inside(box, frame_w, frame_h):
                    box = box.clipped(frame_w, frame_h)
                    if box.w <= 0 or box.h <= 0:
                        continue
                out.append(box)
        return out

    # -- online update batches ---------------------------------------------

    def sample_update_batch(
        self, pred: BBox, frame_w: float, frame_h: float, frame: int | None = None
    ) -> tuple[list[BBox], list[BBox]]:
        """Draw the online-update training batch inside a window of twice
        pred's size centered on pred (clipped to the frame): m_p positives
        with IoU >= 0.9 and m_n negatives with lo <= IoU <= 0.6. Proposals
        in the (0.6, 0.9) gap are discarded."""
        cfg = self.config
        window = BBox(
            pred.x - pred.w / 2, pred.y - pred.h / 2, 2 * pred.w, 2 * pred.h
        ).clipped(frame_w, frame_h)
        if window.w <= 0 or window.h <= 0:
            raise SamplerExhausted(f"update window off-frame for {pred}{_at(frame)}")

        positives: list[BBox] = []
        attempts = 0
        sigma_pos = _UPDATE_POS_SIGMA * max(pred.w, pred.h)
        while len(positives) < cfg.m_p:
            k = min(max(4 * (cfg.m_p - len(positives)), 64), cfg.max_rejections - attempts)
            if k <= 0:
                raise SamplerExhausted(
                    f"update positives found {len(positives)}/{cfg.m_p}{_at(frame)}"
                )
            attempts += k
            prop = self._perturb(pred, k, sigma_pos, 0.0)
            prop_iou = iou_many(prop, pred)
            cx = prop[:, 0] + prop[:, 2] / 2
            cy = prop[:, 1] + prop[:, 3] / 2
            ok = (prop_iou >= UPDATE_POS_IOU) & _in_window(cx, cy, window)
            for row in prop[ok]:
                positives.append(BBox(*row))
                if len(positives) == cfg.m_p:
                    break

        negatives: list[BBox] = []
        attempts = 0
        while len(negatives) < cfg.m_n:
            k = min(max(4 * (cfg.m_n - len(negatives)), 64), cfg.max_rejections - attempts)
            if k <= 0:
                raise SamplerExhausted(
                    f"update negatives found {len(negatives)}/{cfg.m_n}{_at(frame)}"
                )
            attempts += k
            cx = self.rng.uniform(window.x, window.x + window.w, size=k)
            cy = self.rng.uniform(window.y, window.y + window.h, size=k)
            s = np.exp(self.rng.normal(0.0, cfg.sigma_scale, size=k))
            w = pred.w * s
            h = pred.h * s
            prop = np.stack([cx - w / 2, cy - h / 2, w, h], axis=1)
            prop_iou = iou_many(prop, pred)
            ok = (prop_iou >= cfg.lo) & (prop_iou <= UPDATE_NEG_IOU)
            for row in prop[ok]:
                negatives.append(BBox(*row))
                if len(negatives) == cfg.m_n:
                    break
        return positives, negatives

    # -- triplets ------------------------------------------------------------

    def build_triplets(
        self,
        pos_t: list[Patch],
        pos_t1: list[Patch],
        neg_t: list[Patch],
        count: int,
    ) -> list[Triplet]:
        """Pair the three patch pools into `count` uniformly random triplets."""
        if count == 0:
            return []
        if not pos_t or not pos_t1 or not neg_t:
            raise ValueError("build_triplets needs all three pools non-empty")
        js = self.rng.integers(len(pos_t), size=count)
        ks = self.rng.integers(len(pos_t1), size=count)
        ls = self.rng.integers(len(neg_t), size=count)
        return [
            Triplet(pos_t[int(j)], pos_t1[int(k)], neg_t[int(l)])
            for j, k, l in zip(js, ks, ls)
        ]

    # -- internals -----------------------------------------------------------

    def _perturb(
        self, base: BBox, k: int, sigma_center: float, sigma_scale: float
    ) -> np.ndarray:
        """(k, 4) array of boxes: centers shifted by N(0, sigma_center),
        both sides scaled by a shared exp(N(0, sigma_scale)) per box.

        Built corner-relative so the zero-noise case reproduces `base`
        bitwise (center round trips are not exact in floating point).
        """
        dx = self.rng.normal(0.0, sigma_center, size=k) if sigma_center > 0 else np.zeros(k)
        dy = self.rng.normal(0.0, sigma_center, size=k) if sigma_center > 0 else np.zeros(k)
        if sigma_scale > 0:
            s = np.exp(self.rng.normal(0.0, sigma_scale, size=k))
        else:
            s = np.ones(k)
        w = base.w * s
        h = base.h * s
        x = base.x + dx + (base.w - w) / 2
        y = base.y + dy + (base.h - h) / 2
        return np.stack([x, y, w, h], axis=1)


def _in_window(cx: np.ndarray, cy: np.ndarray, window: BBox) -> np.ndarray:
    return (
        (cx >= window.x)
        & (cx <= window.x + window.w)
        & (cy >= window.y)
        & (cy <= window.y + window.h)
    )


def _at(frame: int | None) -> str:
    return f" (frame {frame})" if frame is not None else ""
