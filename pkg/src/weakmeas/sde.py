"""Euler-Maruyama integration of the continuous isotropic polarization measurement.

Time is dimensionless.  One shared noise increment ``dW`` (three iid
``N(0, dt)`` components) drives the state, the readout and the propagator
pair during a step.  Every step function broadcasts over leading axes so an
ensemble block advances as one array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from weakmeas.povm import as_bloch, kraus_bloch_update
from weakmeas.qubit import (
    IDENTITY,
    PAULI,
    bloch_norm,
    clamp_bloch,
    make_stream,
    matrix_to_bloch,
)
from weakmeas.summary import RunSummary, merge_summary_dicts, run_blocks, tree_reduce

NOISE_CHUNK = 256
MAX_DT = 1e-2


class SchemeError(ArithmeticError):
    """A step left the admissible state space; the step size is too coarse."""

    def __init__(self, message: str, trajectory: int | None = None):
        super().__init__(message if trajectory is None else f"trajectory {trajectory}: {message}")
        self.trajectory = trajectory


def overshoot_tolerance(dt: float) -> float:
    """Largest Bloch-norm excursion past 1 that a single step may produce.

    Near the sphere an Euler step overshoots by about ``2|dW_perp|^2 - 4 dt``,
    which is O(dt), so the bound scales with ``dt``.
    """
    return 1e-6 + 100.0 * dt


@dataclass(frozen=True)
class SdeConfig:
    dt: float = 1e-4
    t_end: float = 1.5
    record_stride: int = 1

    def __post_init__(self):
        if not (0.0 < self.dt <= MAX_DT):
            raise ValueError(f"dt must lie in (0, {MAX_DT}], got {self.dt!r}")
        if not self.t_end > 0.0:
            raise ValueError(f"t_end must be positive, got {self.t_end!r}")
        ratio = self.t_end / self.dt
        if abs(ratio - round(ratio)) > 1e-6 * max(1.0, ratio):
            raise ValueError(f"t_end/dt = {ratio!r} is not an integer")
        if self.record_stride < 1:
            raise ValueError("record_stride must be at least 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def record_steps(self) -> np.ndarray:
        steps = np.arange(0, self.n_steps + 1, self.record_stride)
        return steps

    def record_times(self) -> np.ndarray:
        return self.record_steps() * self.dt


def _worst_index(values) -> int | None:
    values = np.asarray(values)
    return int(np.argmax(values)) if values.ndim else None


def _check_overshoot(norm, dt, what):
    limit = 1.0 + overshoot_tolerance(dt)
    if np.any(norm > limit):
        raise SchemeError(f"{what} {float(np.max(norm)):.12g} exceeds {limit:.12g}", _worst_index(norm))


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _pauli_combo(v) -> np.ndarray:
    """``v . sigma`` for real vectors ``v`` (broadcasts)."""
    return np.einsum("...i,ijk->...jk", np.asarray(v).astype(complex), PAULI)


SCHEMES = ("euler", "kraus")


def _kraus_kappa(s, dt, dW):
    """``M = alpha I + b . sigma`` for ``M = I - |sigma - s|^2 dt / 2 + (sigma - s) . dW``.

    Returns ``b / alpha`` so that ``M`` is proportional to ``I + kappa . sigma``.
    """
    alpha = 1.0 - 0.5 * (3.0 + _dot(s, s)) * dt - _dot(s, dW)
    return (dt * s + dW) / alpha[..., None]


def step_bloch(s, dt: float, dW, scheme: str = "euler") -> np.ndarray:
    """One step of the Bloch-vector diffusion.

    ``"euler"``: ``s + (-4 s) dt + 2 dW - 2 (s . dW) s``, projected back into
    the unit ball when it overshoots.  Near the sphere this happens on a
    large fraction of steps and the projection biases purity low by O(dt^0.5).

    ``"kraus"``: the state is pushed through the one-step Kraus operator
    ``I - |sigma - s|^2 dt / 2 + (sigma - s) . dW`` and renormalized.  It
    agrees with the Euler step to first order, never leaves the ball and
    keeps pure states pure.
    """
    s = np.asarray(s, dtype=float)
    dW = np.asarray(dW, dtype=float)
    if scheme == "kraus":
        return kraus_bloch_update(s, _kraus_kappa(s, dt, dW))
    if scheme != "euler":
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    out = s - 4.0 * dt * s + 2.0 * dW - 2.0 * _dot(s, dW)[..., None] * s
    _check_overshoot(bloch_norm(out), dt, "Bloch norm")
    return clamp_bloch(out, overshoot_tolerance(dt))


def step_purity(s2, dt: float, dw, ito_correction: bool = True):
    """One step of the purity diffusion, clipped to [0, 1].

    With ``ito_correction=False`` the drift is the naive chain-rule value
    ``2 s . (-4 s) = -8 s^2``; that variant exists only as a negative control.
    """
    s2 = np.asarray(s2, dtype=float)
    if ito_correction:
        drift = 4.0 * (3.0 - s2) * (1.0 - s2)
    else:
        drift = -8.0 * s2
    out = s2 + drift * dt + 4.0 * (1.0 - s2) * np.sqrt(np.maximum(s2, 0.0)) * dw
    return np.clip(out, 0.0, 1.0)


def step_density(rho, dt: float, dW, scheme: str = "euler") -> np.ndarray:
    """Conditional master equation step for 2x2 densities; trace renormalized.

    ``scheme`` has the same meaning as in :func:`step_bloch`.  For the Euler
    form, negative eigenvalues within :func:`overshoot_tolerance` are
    repaired by projecting the Bloch vector back onto the sphere.
    """
    rho = np.asarray(rho, dtype=complex)
    dW = np.asarray(dW, dtype=float)
    mean = matrix_to_bloch(rho)
    if scheme == "kraus":
        m = IDENTITY - 0.5 * dt * centered_square(mean) + np.einsum(
            "...i,...ijk->...jk", dW.astype(complex), PAULI - mean[..., :, None, None] * IDENTITY
        )
        out = m @ rho @ _adjoint(m)
        return out / _trace(out)[..., None, None]
    if scheme != "euler":
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    drift = np.zeros_like(rho)
    for p in PAULI:
        inner = p @ rho - rho @ p
        drift = drift + (p @ inner - inner @ p)
    drift = -0.5 * drift
    noise = np.zeros_like(rho)
    for i, p in enumerate(PAULI):
        anti = p @ rho + rho @ p - 2.0 * mean[..., i, None, None] * rho
        noise = noise + anti * dW[..., i, None, None]
    out = rho + drift * dt + noise
    out = out / _trace(out)[..., None, None]
    s = matrix_to_bloch(out)
    norm = bloch_norm(s)
    if np.any(norm > 1.0):
        _check_overshoot(norm, dt, "density step left a negative eigenvalue; Bloch norm")
        s = clamp_bloch(s, overshoot_tolerance(dt))
        out = 0.5 * (IDENTITY + _pauli_combo(s))
    return out


@dataclass(frozen=True)
class ReadoutIncrement:
    value: np.ndarray


def readout_increment(s, dW, dt: float) -> ReadoutIncrement:
    """Measured-signal increment ``s dt + dW / 2`` sharing the state's ``dW``."""
    return ReadoutIncrement(np.asarray(s, dtype=float) * dt + 0.5 * np.asarray(dW, dtype=float))


def centered_square(c) -> np.ndarray:
    """``sum_i (sigma_i - c_i)^2 = (3 + |c|^2) I - 2 c . sigma``."""
    c = np.asarray(c, dtype=float)
    return (3.0 + _dot(c, c))[..., None, None] * IDENTITY - 2.0 * _pauli_combo(c)


@dataclass(frozen=True)
class PropagatorPair:
    """Normalized Kraus propagators and the two means that drive them.

    ``g`` carries the aposteriori state ``g rho g^dagger``; ``g_prime`` carries
    the estimate ``(g')^dagger g' / 2`` and the hypothetical state
    ``g' (g')^dagger / 2``.
    """

    g: np.ndarray
    g_prime: np.ndarray
    true_mean: np.ndarray
    hypo_mean: np.ndarray


def _adjoint(a):
    return np.swapaxes(a, -1, -2).conj()


def _trace(a):
    return np.trace(a, axis1=-2, axis2=-1)


def propagator_states(p: PropagatorPair, apriori) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(rho_t, rho'_t, rho?_t)`` built from the propagators."""
    rho0 = _as_matrix(apriori)
    rho_t = p.g @ rho0 @ _adjoint(p.g)
    rho_est = 0.5 * _adjoint(p.g_prime) @ p.g_prime
    rho_hyp = 0.5 * p.g_prime @ _adjoint(p.g_prime)
    return rho_t, rho_est, rho_hyp


def _as_matrix(state) -> np.ndarray:
    arr = np.asarray(state)
    if arr.shape[-2:] == (2, 2):
        return arr.astype(complex)
    return 0.5 * (IDENTITY + _pauli_combo(as_bloch(arr)))


def initial_propagators(apriori, batch: tuple[int, ...] = ()) -> PropagatorPair:
    rho0 = _as_matrix(apriori)
    g = np.broadcast_to(IDENTITY, batch + (2, 2)).copy()
    mean = np.broadcast_to(matrix_to_bloch(rho0), batch + (3,)).copy()
    return PropagatorPair(g, g.copy(), mean, np.zeros(batch + (3,)))


def _means(g, g_prime, rho0):
    true_mean = matrix_to_bloch(g @ rho0 @ _adjoint(g))
    hypo_mean = matrix_to_bloch(0.5 * g_prime @ _adjoint(g_prime))
    return true_mean, hypo_mean


def _normalization_residual(dev, rho, centered, drift_op, dt, dW):
    """Deviation left after removing the zero-mean stochastic part of one Euler step.

    For ``g -> (I + X) g`` with ``X = D dt + A . dW`` the pre-renormalization
    norm error is ``tr rho (X + X^dag + X^dag X)``.  The ``dW_i dW_j - delta_ij dt``
    fluctuation and the ``dt dW`` cross terms have zero mean and are removed.
    The noise-linear term ``2 (<sigma> - c) . dW`` vanishes only when the
    driving mean ``c`` is current, so it is kept: stale means show up as an
    O(dt^0.5) residual, a correct step leaves O(dt^2).
    """
    noise = np.einsum("...i,...ijk->...jk", dW.astype(complex), centered)
    quad = _trace(rho @ _adjoint(noise) @ noise).real
    ito = dt * sum(_trace(rho @ _adjoint(centered[..., i, :, :]) @ centered[..., i, :, :]).real for i in range(3))
    cross = dt * _trace(rho @ (_adjoint(drift_op) @ noise + _adjoint(noise) @ drift_op)).real
    return dev - (quad - ito) - cross


def step_propagators(p: PropagatorPair, apriori, dt: float, dW, check: bool = True) -> PropagatorPair:
    """Advance ``g`` and ``g'`` by one Euler step, then renormalize both.

    With ``check`` the Ito part of the normalization drift is compared with
    ``10 dt^(3/2)``; a larger value means the means are stale or ``dt`` too big.
    """
    rho0 = _as_matrix(apriori)
    dW = np.asarray(dW, dtype=float)
    c = np.asarray(p.true_mean, dtype=float)
    q = np.asarray(p.hypo_mean, dtype=float)
    beta = c - q
    sq_true = centered_square(c)
    sq_hypo = centered_square(q)
    centered_true = PAULI - c[..., :, None, None] * IDENTITY
    centered_hypo = PAULI - q[..., :, None, None] * IDENTITY

    drift_g = -0.5 * sq_true
    drift_gp = -sq_true + 0.5 * sq_hypo + _dot(beta, beta)[..., None, None] * IDENTITY
    x_g = drift_g * dt + np.einsum("...i,...ijk->...jk", dW.astype(complex), centered_true)
    x_gp = drift_gp * dt + np.einsum("...i,...ijk->...jk", dW.astype(complex), centered_hypo)
    g = p.g + x_g @ p.g
    gp = p.g_prime + x_gp @ p.g_prime

    norm_g = _trace(rho0 @ _adjoint(g) @ g).real
    norm_gp = 0.5 * _trace(_adjoint(gp) @ gp).real
    if check:
        rho_t = p.g @ rho0 @ _adjoint(p.g)
        rho_q = 0.5 * p.g_prime @ _adjoint(p.g_prime)
        res_g = _normalization_residual(norm_g - 1.0, rho_t, centered_true, drift_g, dt, dW)
        res_gp = _normalization_residual(norm_gp - 1.0, rho_q, centered_hypo, drift_gp, dt, dW)
        bound = 10.0 * dt**1.5
        worst = np.maximum(np.abs(res_g), np.abs(res_gp))
        if np.any(worst > bound):
            raise SchemeError(
                f"normalization drift {float(np.max(worst)):.3e} exceeds {bound:.3e}", _worst_index(worst)
            )
    g = g / np.sqrt(norm_g)[..., None, None]
    gp = gp / np.sqrt(norm_gp)[..., None, None]
    true_mean, hypo_mean = _means(g, gp, rho0)
    return PropagatorPair(g, gp, true_mean, hypo_mean)


def kraus_exponential_factor(c, dt: float, dW) -> np.ndarray:
    """``exp(-|sigma - c|^2 dt + (sigma - c) . dW)`` in closed form.

    The exponent is ``a I + b . sigma`` with real ``a`` and ``b``, so the
    exponential is ``e^a (cosh|b| I + sinh|b| b_hat . sigma)``.
    """
    c = np.asarray(c, dtype=float)
    dW = np.asarray(dW, dtype=float)
    a = -(3.0 + _dot(c, c)) * dt - _dot(c, dW)
    b = 2.0 * dt * c + dW
    nb = bloch_norm(b)
    safe = np.where(nb == 0.0, 1.0, nb)
    shc = np.where(nb == 0.0, 1.0, np.sinh(nb) / safe)
    return np.exp(a)[..., None, None] * (np.cosh(nb)[..., None, None] * IDENTITY + shc[..., None, None] * _pauli_combo(b))


# ---------------------------------------------------------------- ensembles

EQUATIONS = ("bloch", "purity", "density", "propagators")
OBSERVABLES = {
    "bloch": ("s2", "s4", "sx", "sy", "sz"),
    "purity": ("s2", "s4"),
    "density": ("s2", "trace"),
    "propagators": ("s2", "s2_estimate", "s2_hypo", "tr_rho", "tr_rho_prime", "tr_rho_q"),
}


@dataclass(frozen=True)
class PathSummary:
    times: np.ndarray
    observables: dict[str, RunSummary]

    def mean(self, name: str) -> np.ndarray:
        return np.asarray(self.observables[name].mean)

    def standard_error(self, name: str) -> np.ndarray:
        return np.asarray(self.observables[name].standard_error)


def trajectory_noise(seed: int, start: int, stop: int, n_steps: int, dt: float):
    """Yield ``(k0, dW)`` chunks with ``dW`` of shape ``(stop - start, chunk, 3)``.

    Trajectory ``i`` reads its increments sequentially from stream ``(seed, i)``.
    """
    streams = [make_stream(seed, i) for i in range(start, stop)]
    root = math.sqrt(dt)
    for k0 in range(0, n_steps, NOISE_CHUNK):
        size = min(NOISE_CHUNK, n_steps - k0)
        yield k0, root * np.stack([rng.standard_normal((size, 3)) for rng in streams])


def _observe(which, state, apriori):
    if which == "bloch":
        s2 = _dot(state, state)
        return {"s2": s2, "s4": s2 * s2, "sx": state[:, 0], "sy": state[:, 1], "sz": state[:, 2]}
    if which == "purity":
        return {"s2": state, "s4": state * state}
    if which == "density":
        s = matrix_to_bloch(state)
        return {"s2": _dot(s, s), "trace": _trace(state).real}
    rho_t, rho_est, rho_hyp = propagator_states(state, apriori)
    s, e, h = (matrix_to_bloch(r) for r in (rho_t, rho_est, rho_hyp))
    return {
        "s2": _dot(s, s),
        "s2_estimate": _dot(e, e),
        "s2_hypo": _dot(h, h),
        "tr_rho": _trace(rho_t).real,
        "tr_rho_prime": _trace(rho_est).real,
        "tr_rho_q": _trace(rho_hyp).real,
    }


def _initial_state(which, initial, count):
    if which == "propagators":
        return initial_propagators(initial, (count,))
    s = as_bloch(initial).astype(float)
    if which == "bloch":
        return np.broadcast_to(s, (count, 3)).copy()
    if which == "purity":
        return np.full(count, float(_dot(s, s)))
    return np.broadcast_to(0.5 * (IDENTITY + _pauli_combo(s)), (count, 2, 2)).copy()


def _advance(which, state, dt, dW, apriori, ito_correction=True, scheme="kraus"):
    if which == "bloch":
        return step_bloch(state, dt, dW, scheme)
    if which == "purity":
        return step_purity(state, dt, dW[:, 0], ito_correction=ito_correction)
    if which == "density":
        return step_density(state, dt, dW, scheme)
    return step_propagators(state, apriori, dt, dW)


def _integrate_block(start, stop, *, config, initial, which, seed, ito_correction, scheme):
    count = stop - start
    state = _initial_state(which, initial, count)
    record = set(int(k) for k in config.record_steps())
    series = {name: [] for name in OBSERVABLES[which]}

    def snap():
        for name, values in _observe(which, state, initial).items():
            series[name].append(values)

    if 0 in record:
        snap()
    for k0, chunk in trajectory_noise(seed, start, stop, config.n_steps, config.dt):
        for j in range(chunk.shape[1]):
            try:
                state = _advance(which, state, config.dt, chunk[:, j], initial, ito_correction, scheme)
            except SchemeError as exc:
                local = exc.trajectory or 0
                raise SchemeError(f"step {k0 + j + 1}: {exc}", trajectory=start + local) from exc
            if k0 + j + 1 in record:
                snap()
    return {name: RunSummary.from_values(np.stack(vals, axis=1), axis=0) for name, vals in series.items()}


def integrate_paths(
    config: SdeConfig,
    initial,
    which: str = "bloch",
    ensemble: int = 1,
    seed: int = 0,
    workers: int | None = 1,
    ito_correction: bool = True,
    scheme: str = "kraus",
) -> PathSummary:
    """Integrate ``ensemble`` independent trajectories of one equation.

    ``which`` selects ``"bloch"``, ``"purity"``, ``"density"`` or
    ``"propagators"``; ``initial`` is the starting Bloch vector or density
    (the apriori state for propagators).  ``scheme`` picks the state step
    for ``"bloch"`` and ``"density"`` (see :func:`step_bloch`).  Trajectory ``i`` draws its noise
    from stream ``(seed, i)``, and per-record statistics are reduced in
    block order so the result does not depend on ``workers``.
    """
    if which not in EQUATIONS:
        raise ValueError(f"unknown equation {which!r}; expected one of {EQUATIONS}")
    if ensemble < 1:
        raise ValueError("ensemble must contain at least one trajectory")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    fn = partial(
        _integrate_block,
        config=config,
        initial=initial,
        which=which,
        seed=seed,
        ito_correction=ito_correction,
        scheme=scheme,
    )
    parts = run_blocks(fn, ensemble, workers)
    return PathSummary(config.record_times(), tree_reduce(parts, merge_summary_dicts))


def single_path(config: SdeConfig, dW_path: np.ndarray, initial, which: str = "density", scheme: str = "euler"):
    """Run one trajectory on a given increment path; returns states at each record step."""
    state = _initial_state(which, initial, 1)
    record = set(int(k) for k in config.record_steps())
    out = [state] if 0 in record else []
    for k in range(config.n_steps):
        state = _advance(which, state, config.dt, dW_path[None, k], initial, True, scheme)
        if k + 1 in record:
            out.append(state)
    return out


def coarsen(dW_path: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive increments so the same Brownian path drives a coarser grid."""
    n = dW_path.shape[0] // factor
    return dW_path[: n * factor].reshape(n, factor, *dW_path.shape[1:]).sum(axis=1)


def brownian_path(seed: int, n_steps: int, dt: float, stream_index: int = 0) -> np.ndarray:
    """Increments ``(n_steps, 3)`` of one trajectory's driving noise."""
    return math.sqrt(dt) * make_stream(seed, stream_index).standard_normal((n_steps, 3))


@dataclass(frozen=True)
class ReconstructionTrace:
    """Propagator run compared step by step with a direct state integration."""

    times: np.ndarray
    tr_rho: np.ndarray
    tr_rho_prime: np.ndarray
    tr_rho_q: np.ndarray
    bloch_deviation: np.ndarray

    @property
    def max_deviation(self) -> float:
        return float(np.max(self.bloch_deviation))


def propagator_reconstruction(dW_path: np.ndarray, dt: float, apriori, direct_scheme: str = "euler", stride: int = 1) -> ReconstructionTrace:
    """Drive the propagator pair and a direct density chain with the same increments.

    Records the traces of the three reconstructed states and the Bloch
    distance between ``g rho g^dagger`` and the directly integrated state.
    """
    rho0 = _as_matrix(apriori)
    pair = initial_propagators(rho0)
    rho = rho0.copy()
    rows = []

    def snap(k):
        rho_t, rho_est, rho_hyp = propagator_states(pair, rho0)
        dev = float(bloch_norm(matrix_to_bloch(rho_t) - matrix_to_bloch(rho)))
        rows.append((k * dt, _trace(rho_t).real, _trace(rho_est).real, _trace(rho_hyp).real, dev))

    snap(0)
    for k in range(dW_path.shape[0]):
        pair = step_propagators(pair, rho0, dt, dW_path[k])
        rho = step_density(rho, dt, dW_path[k], direct_scheme)
        if (k + 1) % stride == 0 or k + 1 == dW_path.shape[0]:
            snap(k + 1)
    cols = np.array(rows, dtype=float).T
    return ReconstructionTrace(*cols)
