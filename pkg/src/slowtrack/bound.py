"""Monte Carlo checks for the tracker's feature-error guarantee.

The guarantee, in plain terms: draw m noisy samples of the target's
n-dimensional feature vector, each dimension with variance at most
``max_var``. With probability at least 1 - rho, where
rho = n * max_var / (m * delta^2), every per-dimension sample mean
lands within delta of the true feature; and whenever that happens, the
distance between an arbitrary predicted feature and the next frame's
true feature is at most

    mean_j sqrt(L_j)  +  n * (delta + K * dt)

with L_j the squared distance from the prediction to the j-th sample
and K a cap on the per-dimension feature drift per unit time. The two
verifiers below estimate both probabilities by direct simulation and
compare them against the closed forms, with a one-sided binomial slack
so a tight bound does not flake on finite trials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError

# One-sided 99% standard-normal quantile, hardcoded so the binomial
# slack needs no scipy.
Z_99 = 2.3263478740408408

GENERATORS = ("gaussian", "uniform", "bernoulli")
PREDICTORS = ("truth", "noisy", "adversarial")

# Cap on float64 elements drawn per simulation chunk (~128 MB).
_CHUNK_ELEMS = 1 << 24


@dataclass(frozen=True)
class BoundParams:
    """Knobs of the feature-error guarantee.

    n is the feature dimension, m the number of samples per frame,
    delta the per-dimension deviation allowance, K the largest
    per-dimension feature change per unit time, dt the time between
    frames, and max_var the declared cap on per-dimension feature
    variance. delta must strictly exceed sqrt(n/m * max_var), which
    also keeps rho below 1.
    """

    n: int = 4
    m: int = 100
    delta: float = 0.5
    K: float = 0.1
    dt: float = 1.0
    max_var: float = 1.0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if self.delta <= 0:
            raise ConfigError(f"delta must be > 0, got {self.delta}")
        if self.K < 0:
            raise ConfigError(f"K must be >= 0, got {self.K}")
        if self.dt < 0:
            raise ConfigError(f"dt must be >= 0, got {self.dt}")
        if self.max_var < 0:
            raise ConfigError(f"max_var must be >= 0, got {self.max_var}")
        floor = math.sqrt(self.n / self.m * self.max_var)
        if self.delta <= floor:
            raise ConfigError(
                f"delta={self.delta} gives no guarantee: it must exceed "
                f"sqrt(n/m * max_var) = {floor}"
            )


def epsilon(params: BoundParams) -> float:
    """Worst-case between-frame feature drift, summed over dimensions."""
    return params.n * params.K * params.dt


def rho(params: BoundParams) -> float:
    """Failure probability of the sample-mean concentration event."""
    return params.n * params.max_var / (params.m * params.delta**2)


def bound_value(continuity_losses, params: BoundParams) -> float:
    """Closed-form error ceiling from m squared prediction-to-sample
    distances."""
    losses = np.asarray(continuity_losses, dtype=float)
    if losses.shape != (params.m,):
        raise ValueError(
            f"expected {params.m} continuity losses, got shape {losses.shape}"
        )
    if losses.size and losses.min() < 0:
        raise ValueError(f"continuity losses must be >= 0, min is {losses.min()}")
    slack = params.n * (params.delta + params.K * params.dt)
    return float(np.sqrt(losses).mean() + slack)


def sample_noise(
    kind: str, var: float, rng: np.random.Generator, shape
) -> np.ndarray:
    """Zero-mean noise with per-dimension variance exactly ``var``."""
    if var < 0:
        raise ConfigError(f"noise variance must be >= 0, got {var}")
    if kind == "gaussian":
        return rng.normal(0.0, math.sqrt(var), size=shape)
    if kind == "uniform":
        half = math.sqrt(3.0 * var)
        return rng.uniform(-half, half, size=shape)
    if kind == "bernoulli":
        # Symmetric two-point mass at +-sqrt(var).
        return math.sqrt(var) * (2.0 * rng.integers(0, 2, size=shape) - 1.0)
    raise ConfigError(f"unknown noise generator {kind!r}; pick one of {GENERATORS}")


@dataclass
class BoundReport:
    """Outcome of one Monte Carlo verification run."""

    label: str
    trials: int
    rho: float
    violation_rate: float
    satisfaction_rate: float
    slack: float
    passed: bool


CSV_HEADER = "trial_param_set,rho,violation_rate,satisfaction_rate,pass"


def write_reports(reports: Iterable[BoundReport], path: str | Path) -> None:
    lines = [CSV_HEADER]
    for r in reports:
        lines.append(
            f"{r.label},{r.rho!r},{r.violation_rate!r},"
            f"{r.satisfaction_rate!r},{int(r.passed)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def _binomial_slack(level: float, trials: int) -> float:
    return Z_99 * math.sqrt(level * (1.0 - level) / trials)


def _chunk_trials(trials: int, per_trial_elems: int):
    chunk = max(1, _CHUNK_ELEMS // max(1, per_trial_elems))
    done = 0
    while done < trials:
        k = min(chunk, trials - done)
        yield k
        done += k


def verify_chebyshev(
    params: BoundParams,
    noise: str = "gaussian",
    noise_var: float | None = None,
    trials: int = 10_000,
    seed: int = 0,
    label: str | None = None,
) -> BoundReport:
    """Estimate how often any per-dimension sample mean strays from the
    truth by delta or more; the rate must stay at or below rho.

    ``noise_var`` defaults to the declared cap and may not exceed it.
    A trial draws m feature vectors, averages them per dimension, and
    is flagged if any dimension's mean misses by >= delta.
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    var = params.max_var if noise_var is None else noise_var
    if var > params.max_var:
        raise ConfigError(
            f"noise variance {var} exceeds the declared cap {params.max_var}"
        )
    rng = np.random.default_rng(seed)
    n, m = params.n, params.m
    flagged = 0
    for k in _chunk_trials(trials, m * n):
        draws = sample_noise(noise, var, rng, (k, m, n))
        deviated = np.abs(draws.mean(axis=1)) >= params.delta
        flagged += int(np.count_nonzero(deviated.any(axis=1)))
    level = rho(params)
    violation = flagged / trials
    slack = _binomial_slack(level, trials)
    return BoundReport(
        label=label or f"chebyshev-{noise}",
        trials=trials,
        rho=level,
        violation_rate=violation,
        satisfaction_rate=1.0 - violation,
        slack=slack,
        passed=violation <= level + slack,
    )


def chebyshev_m_sweep(
    params: BoundParams,
    ms: Sequence[int],
    noise: str = "gaussian",
    trials: int = 2_000,
    seed: int = 0,
) -> list[BoundReport]:
    """Re-run the concentration check at several sample counts m.

    Illustrates how more samples per frame buy a smaller violation
    rate; each m must still satisfy the admissibility condition."""
    return [
        verify_chebyshev(
            replace(params, m=m),
            noise=noise,
            trials=trials,
            seed=seed,
            label=f"chebyshev-{noise}-m{m}",
        )
        for m in ms
    ]


@dataclass
class Scenario:
    """One simulated tracking step in feature space.

    ``base`` is the true feature vector at time t; ``drift`` is added
    to it for time t+1 and must stay within K*dt per dimension. The m
    positive samples are base plus ``noise`` of variance ``noise_var``.
    ``predictor`` controls the simulated tracker output: "truth"
    returns the t+1 feature itself, "noisy" perturbs it with Gaussian
    noise of std ``predictor_scale``, and "adversarial" shoves it a
    fixed distance ``predictor_scale`` in a random direction.
    """

    base: np.ndarray
    drift: np.ndarray
    noise: str = "gaussian"
    noise_var: float = 1.0
    predictor: str = "noisy"
    predictor_scale: float = 1.0


def standard_scenario(
    params: BoundParams,
    noise: str = "gaussian",
    predictor: str = "noisy",
    predictor_scale: float = 1.0,
) -> Scenario:
    """Scenario at the guarantee's edge: maximal per-dimension drift
    with alternating sign, sample noise at the variance cap."""
    drift = params.K * params.dt * (-1.0) ** np.arange(params.n)
    return Scenario(
        base=np.zeros(params.n),
        drift=drift,
        noise=noise,
        noise_var=params.max_var,
        predictor=predictor,
        predictor_scale=predictor_scale,
    )


def _predict(
    scenario: Scenario, truth_next: np.ndarray, rng: np.random.Generator, k: int
) -> np.ndarray:
    n = truth_next.shape[0]
    if scenario.predictor == "truth":
        return np.tile(truth_next, (k, 1))
    if scenario.predictor == "noisy":
        return truth_next + rng.normal(0.0, scenario.predictor_scale, size=(k, n))
    direction = rng.normal(size=(k, n))
    norms = np.linalg.norm(direction, axis=1, keepdims=True)
    direction /= np.where(norms == 0.0, 1.0, norms)
    return truth_next + scenario.predictor_scale * direction


def verify_error_bound(
    params: BoundParams,
    scenario: Scenario,
    trials: int = 10_000,
    seed: int = 0,
    label: str | None = None,
) -> BoundReport:
    """Simulate prediction errors and count how often the distance to
    the next true feature stays under the closed-form ceiling; the
    fraction must reach 1 - rho.

    Per trial: draw the m samples, produce a prediction, measure its
    distance to the t+1 truth, and compare against ``bound_value`` of
    the squared prediction-to-sample distances.
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    n, m = params.n, params.m
    base = np.asarray(scenario.base, dtype=float)
    drift = np.asarray(scenario.drift, dtype=float)
    if base.shape != (n,) or drift.shape != (n,):
        raise ConfigError(
            f"scenario vectors must have shape ({n},), got base {base.shape} "
            f"and drift {drift.shape}"
        )
    cap = params.K * params.dt
    if np.abs(drift).max() > cap:
        raise ConfigError(
            f"per-dimension drift must stay within K*dt = {cap}, "
            f"largest is {np.abs(drift).max()}"
        )
    if scenario.noise_var > params.max_var:
        raise ConfigError(
            f"noise variance {scenario.noise_var} exceeds the declared cap "
            f"{params.max_var}"
        )
    if scenario.predictor not in PREDICTORS:
        raise ConfigError(
            f"unknown predictor {scenario.predictor!r}; pick one of {PREDICTORS}"
        )
    if scenario.predictor_scale < 0:
        raise ConfigError("predictor_scale must be >= 0")

    rng = np.random.default_rng(seed)
    truth_next = base + drift
    offset = n * (params.delta + cap)
    satisfied = 0
    for k in _chunk_trials(trials, m * n):
        samples = base + sample_noise(scenario.noise, scenario.noise_var, rng, (k, m, n))
        pred = _predict(scenario, truth_next, rng, k)
        err = np.linalg.norm(pred - truth_next, axis=1)
        dist = np.linalg.norm(pred[:, None, :] - samples, axis=2)
        ceiling = dist.mean(axis=1) + offset
        satisfied += int(np.count_nonzero(err <= ceiling))
    level = rho(params)
    satisfaction = satisfied / trials
    slack = _binomial_slack(level, trials)
    return BoundReport(
        label=label or f"error-bound-{scenario.noise}-{scenario.predictor}",
        trials=trials,
        rho=level,
        violation_rate=1.0 - satisfaction,
        satisfaction_rate=satisfaction,
        slack=slack,
        passed=satisfaction >= 1.0 - level - slack,
    )
