"""The learnable model: a feature embedding (fc1-fc2) feeding a
two-class centroid classifier (fc3-fc5), with manual forward/backward
passes in double precision and a finite-difference gradient checker.

Everything is plain numpy; no autodiff. Layout convention: an input
batch is (B, r) and weights are (fan_in, fan_out), so layers compose as
`X @ W + b`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, NumericalError
from .loss import MODES, VARIANTS, LossWeights, total_loss

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4", "W5", "b5")

# FeatureVec is a plain (n,) float64 array; no wrapper class.


@dataclass
class Model:
    """Five fully-connected layers: dims = (r, h1, n, h3, h4, 2).

    fc1-fc2 map a flattened patch to the n-dim feature space (fc2 output
    is linear); fc3-fc5 map a feature vector to two class logits.
    """

    dims: tuple[int, int, int, int, int, int]
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    W4: np.ndarray
    b4: np.ndarray
    W5: np.ndarray
    b5: np.ndarray
    nonlinearity: str = "relu"

    def params(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in PARAM_NAMES]

    def n_params(self) -> int:
        return sum(arr.size for _, arr in self.params())

    def copy(self) -> "Model":
        kw = {name: arr.copy() for name, arr in self.params()}
        return Model(dims=self.dims, nonlinearity=self.nonlinearity, **kw)

    def assert_finite(self) -> None:
        for name, arr in self.params():
            if not np.all(np.isfinite(arr)):
                raise NumericalError(f"non-finite values in parameter {name}")


def init_model(dims: tuple[int, ...], seed: int) -> Model:
    """Fan-in-scaled uniform init (limit sqrt(6/fan_in), i.e. std
    sqrt(2/fan_in)), zero biases. Deterministic given seed."""
    dims = tuple(int(d) for d in dims)
    if len(dims) != 6:
        raise ConfigError(f"dims must have 6 entries, got {dims}")
    if any(d <= 0 for d in dims):
        raise ConfigError(f"all dims must be positive, got {dims}")
    if dims[5] != 2:
        raise ConfigError(f"the classifier is two-class; dims[5] must be 2, got {dims[5]}")
    rng = np.random.default_rng(seed)
    kw = {}
    for i in range(5):
        fan_in, fan_out = dims[i], dims[i + 1]
        limit = np.sqrt(6.0 / fan_in)
        kw[f"W{i + 1}"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        kw[f"b{i + 1}"] = np.zeros(fan_out)
    return Model(dims=dims, **kw)


def _as_batch(X: np.ndarray, r: int, what: str) -> tuple[np.ndarray, bool]:
    """Coerce (r,) or (B, r) input to (B, r); returns (array, was_single)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
        single = True
    elif X.ndim == 2:
        single = False
    else:
        raise ValueError(f"{what}: expected 1-D or 2-D input, got shape {X.shape}")
    if X.shape[1] != r:
        raise ValueError(f"{what}: expected length {r}, got {X.shape[1]}")
    return X, single


def _feat_forward(model: Model, X: np.ndarray):
    u1 = X @ model.W1 + model.b1
    r1 = np.maximum(u1, 0.0)
    f = r1 @ model.W2 + model.b2
    return f, (X, r1)


def _clf_forward(model: Model, F: np.ndarray):
    u3 = F @ model.W3 + model.b3
    r3 = np.maximum(u3, 0.0)
    u4 = r3 @ model.W4 + model.b4
    r4 = np.maximum(u4, 0.0)
    z = r4 @ model.W5 + model.b5
    zs = z - z.max(axis=-1, keepdims=True)
    e = np.exp(zs)
    P = e / e.sum(axis=-1, keepdims=True)
    return P, (F, r3, r4)


def forward_features(model: Model, patch: np.ndarray) -> np.ndarray:
    """Embed flattened patches: fc2(relu(fc1(x))). Accepts (r,) or (B, r)."""
    X, single = _as_batch(patch, model.dims[0], "forward_features")
    f, _ = _feat_forward(model, X)
    return f[0] if single else f


def forward_classifier(model: Model, feat: np.ndarray) -> np.ndarray:
    """Probability that a feature vector is a centered-object sample:
    softmax over the two fc5 logits, class-1 component."""
    F, single = _as_batch(feat, model.dims[2], "forward_classifier")
    P, _ = _clf_forward(model, F)
    p = P[:, 1]
    return float(p[0]) if single else p


@dataclass
class TripletBatch:
    """Flattened patch arrays for one step: positive anchors `a`, their
    paired positives `b` (consecutive-frame or same-frame), negatives
    `n`. `b` may be None only when the variant ignores the pair term."""

    a: np.ndarray
    b: np.ndarray | None
    n: np.ndarray

    @classmethod
    def from_triplets(cls, triplets) -> "TripletBatch":
        return cls(
            a=np.stack([t.pos_t.flat() for t in triplets]),
            b=np.stack([t.pos_t1.flat() for t in triplets]),
            n=np.stack([t.neg_t.flat() for t in triplets]),
        )


def _batch_loss(
    model: Model,
    batch: TripletBatch,
    weights: LossWeights,
    mode: str,
    variant: str,
) -> float:
    """Batch-mean combined loss, forward passes only."""
    f_a, _ = _feat_forward(model, batch.a)
    f_n, _ = _feat_forward(model, batch.n)
    f_b = None
    if variant != "SlossOnly":
        if batch.b is None:
            raise ValueError(f"variant {variant!r} needs the paired positives")
        f_b, _ = _feat_forward(model, batch.b)
    p_a = _clf_forward(model, f_a)[0][:, 1]
    p_n = _clf_forward(model, f_n)[0][:, 1]
    return float(np.mean(total_loss(f_a, f_b, f_n, p_a, p_n, weights, mode, variant)))


def backward(
    model: Model,
    batch: TripletBatch,
    weights: LossWeights,
    mode: str = "offline",
    variant: str = "full",
) -> tuple[dict[str, np.ndarray], float]:
    """Analytic gradients of the batch-mean combined loss for every
    parameter, plus the loss value itself."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    r = model.dims[0]
    A, _ = _as_batch(batch.a, r, "triplet anchors")
    N, _ = _as_batch(batch.n, r, "triplet negatives")
    if A.shape[0] != N.shape[0]:
        raise ValueError("anchor/negative batch size mismatch")
    B = A.shape[0]
    use_pair = variant != "SlossOnly"
    use_d = variant not in ("SlossOnly", "wo-Dloss")

    f_a, cache_a = _feat_forward(model, A)
    f_n, cache_n = _feat_forward(model, N)
    f_b = None
    cache_b = None
    if use_pair:
        if batch.b is None:
            raise ValueError(f"variant {variant!r} needs the paired positives")
        Bp, _ = _as_batch(batch.b, r, "paired positives")
        if Bp.shape[0] != B:
            raise ValueError("pair batch size mismatch")
        f_b, cache_b = _feat_forward(model, Bp)
    P_a, clf_cache_a = _clf_forward(model, f_a)
    P_n, clf_cache_n = _clf_forward(model, f_n)
    p_a, p_n = P_a[:, 1], P_n[:, 1]

    value = float(np.mean(total_loss(f_a, f_b, f_n, p_a, p_n, weights, mode, variant)))

    grads = {name: np.zeros_like(arr) for name, arr in model.params()}
    df_a = np.zeros_like(f_a)
    df_n = np.zeros_like(f_n)
    df_b = None

    if use_pair:
        diff = (2.0 / B) * (f_a - f_b)
        df_a += diff
        df_b = -diff
    if use_d:
        dd = f_a - f_n
        expterm = np.exp(-weights.beta * np.sum(dd * dd, axis=-1))
        coef = (-2.0 * weights.beta * weights.lam / B) * expterm
        df_a += coef[:, None] * dd
        df_n -= coef[:, None] * dd

    # Classification term: d/dp of -log(p_a_c) and -log(1 - p_n_c), gated
    # to zero where the probability clamp is active, then through softmax
    # via dP1/dz_j = P1 (1[j=1] - P_j).
    floor = weights.p_floor
    e1 = np.array([0.0, 1.0])
    dLdp_a = np.where(
        (p_a > floor) & (p_a < 1.0 - floor),
        -1.0 / np.clip(p_a, floor, 1.0 - floor),
        0.0,
    ) * (weights.mu / B)
    dLdp_n = np.where(
        (p_n > floor) & (p_n < 1.0 - floor),
        1.0 / (1.0 - np.clip(p_n, floor, 1.0 - floor)),
        0.0,
    ) * (weights.mu / B)
    dz_a = dLdp_a[:, None] * P_a[:, 1:2] * (e1 - P_a)
    dz_n = dLdp_n[:, None] * P_n[:, 1:2] * (e1 - P_n)

    df_a += _clf_backward(model, grads, clf_cache_a, dz_a)
    df_n += _clf_backward(model, grads, clf_cache_n, dz_n)

    _feat_backward(model, grads, cache_a, df_a)
    _feat_backward(model, grads, cache_n, df_n)
    if use_pair:
        _feat_backward(model, grads, cache_b, df_b)

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in layer {name}")
    return grads, value


def _clf_backward(model: Model, grads, cache, dz: np.ndarray) -> np.ndarray:
    F, r3, r4 = cache
    grads["W5"] += r4.T @ dz
    grads["b5"] += dz.sum(axis=0)
    du4 = (dz @ model.W5.T) * (r4 > 0)
    grads["W4"] += r3.T @ du4
    grads["b4"] += du4.sum(axis=0)
    du3 = (du4 @ model.W4.T) * (r3 > 0)
    grads["W3"] += F.T @ du3
    grads["b3"] += du3.sum(axis=0)
    return du3 @ model.W3.T


def _feat_backward(model: Model, grads, cache, df: np.ndarray) -> None:
    X, r1 = cache
    grads["W2"] += r1.T @ df
    grads["b2"] += df.sum(axis=0)
    du1 = (df @ model.W2.T) * (r1 > 0)
    grads["W1"] += X.T @ du1
    grads["b1"] += du1.sum(axis=0)


@dataclass
class FDFailure:
    param: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class FDReport:
    passed: bool
    max_rel_err: float
    entries_checked: int
    per_param: dict[str, float]
    failures: list[FDFailure]

    def __str__(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return (
            f"gradient check {state}: {self.entries_checked} entries, "
            f"max relative error {self.max_rel_err:.3e}"
            + (f", {len(self.failures)} failures" if self.failures else "")
        )


def finite_diff_check(
    model: Model,
    batch: TripletBatch,
    weights: LossWeights,
    h: float = 1e-5,
    tol: float = 1e-4,
    mode: str = "offline",
    variant: str = "full",
    params: list[str] | None = None,
    analytic: dict[str, np.ndarray] | None = None,
) -> FDReport:
    """Compare analytic gradients against central finite differences.

    Error metric per entry: |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-4), which behaves like a relative error with an
    absolute-tolerance floor of 1e-4 * tol for near-zero gradients.
    Failures are collected in the report, never raised. `params` limits
    the check to a subset of parameter names; `analytic` substitutes an
    externally supplied gradient set (for fault-injection tests).
    """
    names = PARAM_NAMES if params is None else tuple(params)
    for name in names:
        if name not in PARAM_NAMES:
            raise ConfigError(f"unknown parameter name {name!r}")
    if sum(getattr(model, name).size for name in names) == 0:
        return FDReport(True, 0.0, 0, {n: 0.0 for n in names}, [])

    if analytic is None:
        analytic, _ = backward(model, batch, weights, mode, variant)
    max_rel = 0.0
    per_param: dict[str, float] = {}
    failures: list[FDFailure] = []
    checked = 0
    for name in names:
        arr = getattr(model, name)
        grad = analytic[name]
        worst = 0.0
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            lp = _batch_loss(model, batch, weights, mode, variant)
            arr[idx] = orig - h
            lm = _batch_loss(model, batch, weights, mode, variant)
            arr[idx] = orig
            numeric = (lp - lm) / (2.0 * h)
            a = float(grad[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
            worst = max(worst, rel)
            checked += 1
            if rel >= tol:
                failures.append(FDFailure(name, idx, a, numeric, rel))
        per_param[name] = worst
        max_rel = max(max_rel, worst)
    return FDReport(max_rel < tol, max_rel, checked, per_param, failures)


def conditioned_batch(
    model: Model,
    rng: np.random.Generator,
    B: int = 4,
    scale: float = 0.3,
    kink_margin: float = 1e-3,
    p_margin: float = 0.01,
    max_tries: int = 200,
) -> TripletBatch:
    """Draw a random triplet batch on which finite differences are a
    trustworthy oracle.

    Central differences at h=1e-5 break down near ReLU kinks (the secant
    straddles the corner) and in saturated softmax regions (1/p blows up
    the curvature), so batches whose pre-activations come within
    `kink_margin` of zero or whose class probabilities leave
    [p_margin, 1 - p_margin] are redrawn. A weight perturbation of h
    moves a pre-activation by at most ~h * ||x|| ~ 3e-5 here, so the
    default margin keeps a ~30x safety factor while staying findable
    even for wide layers (hundreds of taps must all clear it).
    """
    r = model.dims[0]
    for _ in range(max_tries):
        streams = [rng.normal(0.0, scale, size=(B, r)) for _ in range(3)]
        feats = []
        ok = True
        for X in streams:
            u1 = X @ model.W1 + model.b1
            if np.min(np.abs(u1)) < kink_margin:
                ok = False
                break
            feats.append(np.maximum(u1, 0.0) @ model.W2 + model.b2)
        if not ok:
            continue
        for f in (feats[0], feats[2]):  # classifier runs on anchors and negatives
            u3 = f @ model.W3 + model.b3
            u4 = np.maximum(u3, 0.0) @ model.W4 + model.b4
            if min(np.min(np.abs(u3)), np.min(np.abs(u4))) < kink_margin:
                ok = False
                break
            P, _ = _clf_forward(model, f)
            if np.min(P[:, 1]) < p_margin or np.max(P[:, 1]) > 1.0 - p_margin:
                ok = False
                break
        if ok:
            return TripletBatch(a=streams[0], b=streams[1], n=streams[2])
    raise NumericalError(
        f"no well-conditioned batch found in {max_tries} tries; "
        "the model may be saturated"
    )


MAGIC = "CDNN1"


def save_model(model: Model, path: str | Path) -> None:
    """Text format: magic, dims line, nonlinearity line, then one line of
    round-trip-exact decimal floats per weight-matrix row / bias vector."""
    lines = [MAGIC, " ".join(str(d) for d in model.dims), model.nonlinearity]
    for _, arr in model.params():
        for row in np.atleast_2d(arr):
            lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: str | Path) -> Model:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != MAGIC:
        got = lines[0] if lines else "<empty>"
        raise FormatError(f"{path}:1: bad magic {got!r}, expected {MAGIC!r}")
    if len(lines) < 3:
        raise FormatError(f"{path}: truncated header")
    try:
        dims = tuple(int(t) for t in lines[1].split())
    except ValueError:
        raise FormatError(f"{path}:2: unparsable dims line {lines[1]!r}") from None
    if len(dims) != 6:
        raise FormatError(f"{path}:2: expected 6 dims, got {len(dims)}")
    nonlinearity = lines[2].strip()
    if nonlinearity != "relu":
        raise FormatError(f"{path}:3: unknown nonlinearity {nonlinearity!r}")

    shapes = []
    for i in range(5):
        shapes.append((f"W{i + 1}", (dims[i], dims[i + 1])))
        shapes.append((f"b{i + 1}", (dims[i + 1],)))
    kw = {}
    lineno = 3
    for name, shape in shapes:
        rows = shape[0] if len(shape) == 2 else 1
        cols = shape[-1]
        mat = np.empty((rows, cols))
        for j in range(rows):
            lineno += 1
            if lineno > len(lines):
                raise FormatError(f"{path}: truncated in {name} (line {lineno} missing)")
            toks = lines[lineno - 1].split()
            if len(toks) != cols:
                raise FormatError(
                    f"{path}:{lineno}: expected {cols} values for {name}, got {len(toks)}"
                )
            try:
                mat[j] = [float(t) for t in toks]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
        kw[name] = mat.reshape(shape)
    for extra in lines[lineno:]:
        if extra.strip():
            raise FormatError(f"{path}: trailing content after parameters")
    model = Model(dims=dims, nonlinearity=nonlinearity, **kw)
    model.assert_finite()
    return model
