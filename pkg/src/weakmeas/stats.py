"""Monte Carlo fidelity estimators, closed-form fidelity curves and reducers."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from weakmeas.povm import EstimateMode, as_bloch, pure_from_bloch
from weakmeas.qubit import fidelity_bloch, make_stream, sample_uniform_sphere
from weakmeas.sequence import DirectionPolicy, SamplingSource, run_sequence_batch
from weakmeas.summary import RunSummary, merge_summaries, run_blocks, tree_reduce

__all__ = [
    "FidelityEstimate",
    "FidelityMethod",
    "RunSummary",
    "avg_fidelity_projective",
    "avg_fidelity_sequence",
    "avg_fidelity_single",
    "continuum_time",
    "drift_purity",
    "fidelity_sequence_curve",
    "merge_summaries",
    "saturation_value",
]

# Sample-based estimators draw one stream per block of this many samples.
SAMPLE_BLOCK = 4096


class FidelityMethod(str, enum.Enum):
    DIRECT = "direct"
    HYPOTHETICAL = "hypothetical"
    RANDOM_AVERAGE = "random_average"
    SEQUENCE = "sequence"
    PROJECTIVE_BASELINE = "projective"


# stream families, so estimators sharing a seed stay independent
_STREAM_TAG = {
    FidelityMethod.PROJECTIVE_BASELINE: 0,
    FidelityMethod.DIRECT: 1,
    FidelityMethod.HYPOTHETICAL: 2,
    FidelityMethod.RANDOM_AVERAGE: 3,
}


@dataclass(frozen=True)
class FidelityEstimate:
    value: float
    standard_error: float
    method: FidelityMethod
    count: int = 0

    @classmethod
    def from_summary(cls, summary: RunSummary, method: FidelityMethod) -> "FidelityEstimate":
        return cls(float(summary.mean), float(summary.standard_error), method, summary.count)


def drift_purity(t):
    """Drift-only purity curve ``(e^{8t} - 1) / (e^{8t} - 1/3)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    # (1 - e^{-8t}) / (1 - e^{-8t}/3) avoids overflow for large t
    decay = np.exp(-8.0 * t)
    out = (1.0 - decay) / (1.0 - decay / 3.0)
    return float(out) if out.ndim == 0 else out


def continuum_time(n, delta: float):
    """Dimensionless time ``12 n / delta^2`` assigned to ``n`` measurements."""
    return 12.0 * np.asarray(n, dtype=float) / (delta * delta)


def saturation_value(n, delta: float):
    """Average fidelity after ``n`` measurements from the drift-only purity curve.

    ``1/2 + (1/6) (e^{96 n / delta^2} - 1) / (e^{96 n / delta^2} - 1/3)``.
    """
    if not delta > 0.0:
        raise ValueError("delta must be positive")
    return 0.5 + drift_purity(continuum_time(n, delta)) / 6.0


def _check_samples(samples: int) -> int:
    if samples < 1:
        raise ValueError("samples must be at least 1")
    return samples


def _projective_block(start, stop, *, seed, estimate):
    rng = make_stream(seed, start // SAMPLE_BLOCK, _STREAM_TAG[FidelityMethod.PROJECTIVE_BASELINE])
    count = stop - start
    u = sample_uniform_sphere(rng, count)
    n = sample_uniform_sphere(rng, count)
    branch = rng.random(count)
    if isinstance(estimate, str) and estimate == "posterior":
        result = np.where(branch < 0.5 * (1.0 + np.sum(n * u, axis=-1)), 1.0, -1.0)
        guess = result[:, None] * n
    elif isinstance(estimate, str) and estimate == "apriori":
        guess = u
    else:
        guess = np.broadcast_to(as_bloch(estimate), u.shape)
    return RunSummary.from_values(fidelity_bloch(guess, u))


def avg_fidelity_projective(samples: int, seed: int = 0, estimate="posterior", workers: int | None = 1) -> FidelityEstimate:
    """Average fidelity of a sharp measurement along a random axis on Haar-random states.

    ``estimate`` is ``"posterior"`` (the collapsed state), ``"apriori"`` (the
    true state itself) or a fixed Bloch vector used regardless of the data.
    """
    _check_samples(samples)
    fn = partial(_projective_block, seed=seed, estimate=estimate)
    summary = tree_reduce(run_blocks(fn, samples, workers, SAMPLE_BLOCK), merge_summaries)
    return FidelityEstimate.from_summary(summary, FidelityMethod.PROJECTIVE_BASELINE)


def _single_block(start, stop, *, seed, delta, method, mode):
    rng = make_stream(seed, start // SAMPLE_BLOCK, _STREAM_TAG[method])
    count = stop - start
    u = sample_uniform_sphere(rng, count)
    n = sample_uniform_sphere(rng, count)
    branch = rng.random(count)
    noise = rng.standard_normal(count)
    pick = rng.random(count)
    if method is FidelityMethod.DIRECT:
        p_plus = 0.5 * (1.0 + np.sum(n * u, axis=-1))
    else:
        p_plus = np.full(count, 0.5)
    sigma = np.where(branch < p_plus, 1.0, -1.0) + delta * noise
    # Pi / tr Pi, which is also the posterior of the maximally mixed state
    v = np.tanh(sigma / (delta * delta))[:, None] * n
    if method is FidelityMethod.DIRECT:
        values = fidelity_bloch(pure_from_bloch(v, mode, pick), u)
    elif method is FidelityMethod.HYPOTHETICAL:
        values = 2.0 * fidelity_bloch(v, u) ** 2
    else:
        values = 0.5 + np.sum(v * v, axis=-1) / 6.0
    return RunSummary.from_values(values)


def avg_fidelity_single(
    delta: float,
    method: FidelityMethod = FidelityMethod.DIRECT,
    samples: int = 100_000,
    seed: int = 0,
    mode: EstimateMode = EstimateMode.EIGEN_SAMPLE,
    workers: int | None = 1,
) -> FidelityEstimate:
    """Average fidelity of one unsharp measurement on Haar-random pure states.

    ``DIRECT`` samples outcomes from the true state and scores a pure
    eigen-estimate.  ``HYPOTHETICAL`` samples outcomes as if the state
    were maximally mixed and averages ``2 (tr[rho? rho])^2``.
    ``RANDOM_AVERAGE`` uses the Haar-averaged form ``1/2 + |s?|^2 / 6``.
    All three share one expectation.
    """
    if not delta > 0.0:
        raise ValueError("delta must be positive")
    method = FidelityMethod(method)
    if method not in (FidelityMethod.DIRECT, FidelityMethod.HYPOTHETICAL, FidelityMethod.RANDOM_AVERAGE):
        raise ValueError(f"method {method.value!r} does not apply to a single measurement")
    _check_samples(samples)
    fn = partial(_single_block, seed=seed, delta=float(delta), method=method, mode=EstimateMode(mode))
    summary = tree_reduce(run_blocks(fn, samples, workers, SAMPLE_BLOCK), merge_summaries)
    return FidelityEstimate.from_summary(summary, method)


def _sequence_block(start, stop, *, seed, delta, ns):
    _, recorded = run_sequence_batch(
        np.zeros(3),
        max(ns),
        delta,
        seed,
        start,
        stop,
        DirectionPolicy.fresh(),
        SamplingSource.HYPOTHETICAL,
        checkpoints=ns,
        track_kraus=False,
    )
    values = np.stack([0.5 + np.sum(recorded[n] ** 2, axis=-1) / 6.0 for n in ns], axis=1)
    return RunSummary.from_values(values)


def fidelity_sequence_curve(ns, delta: float, trajectories: int, seed: int = 0, workers: int | None = 1) -> list[FidelityEstimate]:
    """Average fidelity after each ``n`` in ``ns`` measurements.

    Uses ``1/3 + tr[(rho?_n)^2] / 3`` with outcomes drawn from the
    hypothetical state and fresh random directions.  All ``n`` share the
    same trajectories (each run is a prefix of the longest one).
    """
    ns = [int(n) for n in ns]
    if any(n < 0 for n in ns):
        raise ValueError("measurement counts must be non-negative")
    if trajectories < 1:
        raise ValueError("trajectories must be at least 1")
    if not delta > 0.0:
        raise ValueError("delta must be positive")
    fn = partial(_sequence_block, seed=seed, delta=float(delta), ns=tuple(ns))
    summary = tree_reduce(run_blocks(fn, trajectories, workers), merge_summaries)
    return [FidelityEstimate.from_summary(summary[i], FidelityMethod.SEQUENCE) for i in range(len(ns))]


def avg_fidelity_sequence(n: int, delta: float, trajectories: int, seed: int = 0, workers: int | None = 1) -> FidelityEstimate:
    return fidelity_sequence_curve([n], delta, trajectories, seed, workers)[0]


def combined_se(*errors: float) -> float:
    return math.sqrt(sum(e * e for e in errors))
