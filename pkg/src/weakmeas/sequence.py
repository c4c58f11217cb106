"""Exact discrete simulation of n sequential unsharp measurements.

Randomness layout per trajectory: one ``(n, 5)`` block of standard normals.
Columns 0-2 give the measurement direction, column 3 the mixture branch
(through the normal CDF) and column 4 the outcome noise.  Because numpy
fills arrays sequentially, the first ``m`` steps of an ``n``-step run equal
an ``m``-step run on the same stream, and the scalar and batched engines
consume identical numbers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from weakmeas.povm import (
    GaussianPovmElement,
    as_bloch,
    check_direction,
    log_outcome_pdf_bloch,
    outcome_from_draws,
    posterior_bloch,
    sqrt_ratio,
)
from weakmeas.qubit import IDENTITY, PAULI, bloch_to_matrix, make_stream, normals_to_sphere

DRAWS_PER_STEP = 5


class SamplingSource(str, enum.Enum):
    """Which state's outcome distribution drives the measurement record."""

    TRUE_STATE = "true_state"
    HYPOTHETICAL = "hypothetical"


@dataclass(frozen=True)
class DirectionPolicy:
    """Fresh uniform direction every step, or one fixed axis (``axis`` set)."""

    axis: tuple[float, float, float] | None = None

    @classmethod
    def fresh(cls) -> "DirectionPolicy":
        return cls()

    @classmethod
    def fixed(cls, n) -> "DirectionPolicy":
        n = check_direction(np.asarray(n, dtype=float))
        return cls(tuple(float(x) for x in n))

    def directions(self, normals: np.ndarray) -> np.ndarray:
        if self.axis is None:
            return normals_to_sphere(normals)
        return np.broadcast_to(np.asarray(self.axis), normals.shape)


def max_singular_value(a: np.ndarray) -> np.ndarray:
    """Largest singular value of 2x2 matrices (closed form, broadcasts)."""
    fro2 = np.sum(np.abs(a) ** 2, axis=(-2, -1))
    det = np.abs(a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0])
    disc = np.sqrt(np.maximum(fro2 * fro2 - 4.0 * det * det, 0.0))
    return np.sqrt(0.5 * (fro2 + disc))


def _extend_ops(op: np.ndarray, n: np.ndarray, k: np.ndarray):
    """Left-multiply by ``I + k n.sigma`` and renormalize; returns (op, log scale)."""
    m = IDENTITY + np.asarray(k)[..., None, None] * np.einsum("...i,ijk->...jk", n.astype(complex), PAULI)
    out = m @ op
    scale = max_singular_value(out)
    return out / scale[..., None, None], np.log(scale)


def _log_sqrt_scale(sigma, delta):
    """Log of ``(a + b) / 2`` for the square-root coefficients of an element."""
    two_var = 2.0 * delta * delta
    base = -0.5 * math.log(2.0 * math.pi) - math.log(delta)
    lp = 0.5 * (base - (1.0 - sigma) ** 2 / two_var)
    lm = 0.5 * (base - (1.0 + sigma) ** 2 / two_var)
    return np.logaddexp(lp, lm) - math.log(2.0)


@dataclass(frozen=True)
class KrausAccumulator:
    """Product of measurement square roots, stored as ``exp(log_weight) * op``.

    ``op`` is rescaled to unit largest singular value after every extension
    so long products neither underflow nor overflow.
    """

    op: np.ndarray = field(default_factory=lambda: IDENTITY.copy())
    log_weight: float = 0.0

    @classmethod
    def identity(cls) -> "KrausAccumulator":
        return cls()

    def matrix(self) -> np.ndarray:
        """The represented Kraus operator (may underflow for long sequences)."""
        return math.exp(self.log_weight) * self.op

    def povm_matrix(self) -> np.ndarray:
        """``op^dagger op``; the true POVM element is this times ``exp(2 log_weight)``."""
        return self.op.conj().T @ self.op

    def log_povm_trace(self) -> float:
        return 2.0 * self.log_weight + math.log(np.trace(self.povm_matrix()).real)


def kraus_extend(acc: KrausAccumulator, element: GaussianPovmElement) -> KrausAccumulator:
    k = sqrt_ratio(element.sigma, element.delta)
    op, log_scale = _extend_ops(acc.op, element.direction, k)
    return KrausAccumulator(op, acc.log_weight + element.log_sqrt_scale() + float(log_scale))


@dataclass(frozen=True)
class StepRecord:
    direction: np.ndarray
    outcome: float


@dataclass(frozen=True)
class SequenceResult:
    steps: list[StepRecord]
    posterior: np.ndarray
    hypothetical_posterior: np.ndarray
    mixed_estimate: np.ndarray
    log_probability_density: float
    accumulator: KrausAccumulator


def draw_steps(rng: np.random.Generator, n_steps: int) -> np.ndarray:
    return rng.standard_normal((n_steps, DRAWS_PER_STEP))


def run_sequence(
    apriori,
    n_steps: int,
    delta: float,
    direction_policy: DirectionPolicy = DirectionPolicy(),
    sampling_source: SamplingSource = SamplingSource.TRUE_STATE,
    rng: np.random.Generator | None = None,
) -> SequenceResult:
    """Measure ``n_steps`` times, tracking the true and hypothetical posteriors.

    Outcomes are drawn from the running true posterior (``TRUE_STATE``) or
    from the running posterior of the maximally mixed state
    (``HYPOTHETICAL``).  ``log_probability_density`` is the log density of
    the whole record under that sampling distribution.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    if not delta > 0.0:
        raise ValueError(f"precision delta must be positive, got {delta!r}")
    rng = np.random.default_rng() if rng is None else rng
    sampling_source = SamplingSource(sampling_source)
    draws = draw_steps(rng, n_steps)
    dirs = direction_policy.directions(draws[:, :3])
    branch_u = ndtr(draws[:, 3])

    s = as_bloch(apriori).astype(float)
    h = np.zeros(3)
    acc = KrausAccumulator.identity()
    log_p = 0.0
    steps = []
    for i in range(n_steps):
        n = dirs[i]
        src = s if sampling_source is SamplingSource.TRUE_STATE else h
        sigma = float(outcome_from_draws(src, n, delta, branch_u[i], draws[i, 4]))
        log_p += float(log_outcome_pdf_bloch(src, n, delta, sigma))
        k = sqrt_ratio(sigma, delta)
        s = posterior_bloch(s, n, k)
        h = posterior_bloch(h, n, k)
        op, log_scale = _extend_ops(acc.op, n, k)
        acc = KrausAccumulator(op, acc.log_weight + float(_log_sqrt_scale(sigma, delta)) + float(log_scale))
        steps.append(StepRecord(np.array(n), sigma))

    pi = acc.povm_matrix()
    return SequenceResult(
        steps=steps,
        posterior=bloch_to_matrix(s),
        hypothetical_posterior=bloch_to_matrix(h),
        mixed_estimate=pi / np.trace(pi).real,
        log_probability_density=log_p,
        accumulator=acc,
    )


@dataclass
class BatchState:
    """Running state of a batch of trajectories (leading axis = trajectory)."""

    s: np.ndarray
    h: np.ndarray
    op: np.ndarray
    log_weight: np.ndarray
    log_p: np.ndarray

    @property
    def mixed_bloch(self) -> np.ndarray:
        pi = np.swapaxes(self.op, -1, -2).conj() @ self.op
        v = np.einsum("ijk,...kj->...i", PAULI, pi).real
        return v / np.trace(pi, axis1=-2, axis2=-1).real[..., None]


def run_sequence_batch(
    apriori,
    n_steps: int,
    delta: float,
    seed: int,
    start: int,
    stop: int,
    direction_policy: DirectionPolicy = DirectionPolicy(),
    sampling_source: SamplingSource = SamplingSource.TRUE_STATE,
    checkpoints=(),
    track_kraus: bool = True,
):
    """Vectorized ``run_sequence`` for trajectories ``start..stop-1``.

    Trajectory ``i`` uses stream ``(seed, i)`` and reproduces the scalar
    engine exactly.  Returns the final :class:`BatchState` and a dict mapping
    each checkpoint step count to the hypothetical Bloch vectors at that step.
    """
    sampling_source = SamplingSource(sampling_source)
    count = stop - start
    draws = np.stack([draw_steps(make_stream(seed, i), n_steps) for i in range(start, stop)]) if count else np.zeros((0, n_steps, 5))
    dirs = direction_policy.directions(draws[..., :3])
    branch_u = ndtr(draws[..., 3])

    apriori = as_bloch(apriori).astype(float)
    state = BatchState(
        s=np.broadcast_to(apriori, (count, 3)).copy(),
        h=np.zeros((count, 3)),
        op=np.broadcast_to(IDENTITY, (count, 2, 2)).copy(),
        log_weight=np.zeros(count),
        log_p=np.zeros(count),
    )
    wanted = set(int(c) for c in checkpoints)
    recorded = {}
    if 0 in wanted:
        recorded[0] = state.h.copy()
    for i in range(n_steps):
        n = dirs[:, i]
        src = state.s if sampling_source is SamplingSource.TRUE_STATE else state.h
        sigma = outcome_from_draws(src, n, delta, branch_u[:, i], draws[:, i, 4])
        state.log_p += log_outcome_pdf_bloch(src, n, delta, sigma)
        k = sqrt_ratio(sigma, delta)
        state.s = posterior_bloch(state.s, n, k)
        state.h = posterior_bloch(state.h, n, k)
        if track_kraus:
            state.op, log_scale = _extend_ops(state.op, n, k)
            state.log_weight += _log_sqrt_scale(sigma, delta) + log_scale
        if i + 1 in wanted:
            recorded[i + 1] = state.h.copy()
    return state, recorded
