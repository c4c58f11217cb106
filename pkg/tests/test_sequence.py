import math

import numpy as np
import pytest
from scipy import integrate

from weakmeas.povm import mixed_estimate, posterior_update, povm_coefficients
from weakmeas.qubit import bloch_to_matrix, make_stream, matrix_to_bloch
from weakmeas.sequence import (
    DirectionPolicy,
    KrausAccumulator,
    SamplingSource,
    kraus_extend,
    run_sequence,
    run_sequence_batch,
)

Z = np.array([0.0, 0.0, 1.0])
APRIORI = np.array([0.3, -0.4, 0.5])


def accumulate(result):
    acc = KrausAccumulator.identity()
    for step in result.steps:
        acc = kraus_extend(acc, povm_coefficients(step.outcome, step.direction, 2.0))
    return acc


def test_empty_sequence():
    res = run_sequence(bloch_to_matrix(APRIORI), 0, 3.0, rng=make_stream(0, 0))
    np.testing.assert_allclose(res.posterior, bloch_to_matrix(APRIORI))
    np.testing.assert_allclose(res.mixed_estimate, np.eye(2) / 2)
    np.testing.assert_allclose(res.hypothetical_posterior, np.eye(2) / 2)
    assert res.log_probability_density == 0.0


def test_single_step_matches_single_measurement():
    rho = bloch_to_matrix(APRIORI)
    res = run_sequence(rho, 1, 1.5, rng=make_stream(1, 0))
    step = res.steps[0]
    np.testing.assert_allclose(res.posterior, posterior_update(rho, step.outcome, step.direction, 1.5), atol=1e-14)
    np.testing.assert_allclose(res.mixed_estimate, mixed_estimate(povm_coefficients(step.outcome, step.direction, 1.5)), atol=1e-14)


def test_fixed_axis_eigenstate_stays_put():
    res = run_sequence(bloch_to_matrix(Z), 10_000, 5.0, DirectionPolicy.fixed(Z), rng=make_stream(2, 0))
    assert matrix_to_bloch(res.posterior)[2] >= 0.999


def test_commuting_case_is_gaussian_inference():
    # along one axis, the likelihood ratio of +1 vs -1 is exp(2 sum(sigma) / delta^2)
    delta = 3.0
    res = run_sequence(np.eye(2) / 2, 50, delta, DirectionPolicy.fixed(Z), rng=make_stream(3, 0))
    total = sum(step.outcome for step in res.steps)
    np.testing.assert_allclose(matrix_to_bloch(res.posterior), [0, 0, math.tanh(total / delta**2)], atol=1e-12)
    np.testing.assert_allclose(matrix_to_bloch(res.mixed_estimate), [0, 0, math.tanh(total / delta**2)], atol=1e-12)


def test_extend_identity_with_symmetric_outcome():
    el = povm_coefficients(0.0, Z, 2.0)
    acc = kraus_extend(KrausAccumulator.identity(), el)
    np.testing.assert_allclose(acc.op, np.eye(2), atol=1e-15)
    assert acc.log_weight == pytest.approx(0.5 * el.log_coeff_plus, abs=1e-14)
    np.testing.assert_allclose(acc.matrix(), el.sqrt_matrix(), rtol=1e-13)


def test_commuting_steps_combine():
    delta = 1.7
    a, b = 0.4, -1.3
    acc = kraus_extend(kraus_extend(KrausAccumulator.identity(), povm_coefficients(a, Z, delta)), povm_coefficients(b, Z, delta))
    # product of closed forms: the exponents add on each eigenvalue
    norm = 1.0 / (2 * math.pi * delta**2)
    plus = norm * math.exp(-((1 - a) ** 2 + (1 - b) ** 2) / (2 * delta**2))
    minus = norm * math.exp(-((1 + a) ** 2 + (1 + b) ** 2) / (2 * delta**2))
    np.testing.assert_allclose(acc.matrix() @ acc.matrix(), np.diag([plus, minus]), rtol=1e-10, atol=1e-16)


def test_long_products_stay_finite():
    rng = make_stream(4, 0)
    acc = KrausAccumulator.identity()
    for _ in range(10_000):
        n = rng.standard_normal(3)
        acc = kraus_extend(acc, povm_coefficients(rng.standard_normal() * 20, n / np.linalg.norm(n), 20.0))
    assert np.isfinite(acc.log_weight)
    assert np.all(np.isfinite(acc.op))
    assert acc.log_weight < -1000  # the raw product would have underflowed


@pytest.mark.parametrize("n_steps", [1, 2, 7, 20])
@pytest.mark.parametrize("source", list(SamplingSource))
def test_stepwise_equals_batch_composition(n_steps, source):
    rho = bloch_to_matrix(APRIORI)
    res = run_sequence(rho, n_steps, 2.0, sampling_source=source, rng=make_stream(5, n_steps))
    # brute force: multiply the full square-root elements as matrices
    g = np.eye(2, dtype=complex)
    for step in res.steps:
        g = povm_coefficients(step.outcome, step.direction, 2.0).sqrt_matrix() @ g
    post = g @ rho @ g.conj().T
    np.testing.assert_allclose(res.posterior, post / np.trace(post), atol=1e-8)
    hyp = g @ g.conj().T
    np.testing.assert_allclose(res.hypothetical_posterior, hyp / np.trace(hyp), atol=1e-8)
    pi = g.conj().T @ g
    np.testing.assert_allclose(res.mixed_estimate, pi / np.trace(pi), atol=1e-8)
    np.testing.assert_allclose(res.accumulator.matrix(), g, rtol=1e-9, atol=1e-14 * np.abs(g).max())


@pytest.mark.parametrize("n_steps", [1, 5, 20])
def test_probability_consistency(n_steps):
    rho = bloch_to_matrix(APRIORI)
    res = run_sequence(rho, n_steps, 2.0, rng=make_stream(6, n_steps))
    acc = res.accumulator
    log_tr = 2 * acc.log_weight + math.log(np.trace(acc.op @ rho @ acc.op.conj().T).real)
    assert math.exp(res.log_probability_density - log_tr) == pytest.approx(1.0, rel=1e-6)


def test_hypothetical_probability_consistency():
    res = run_sequence(bloch_to_matrix(APRIORI), 12, 2.0, sampling_source=SamplingSource.HYPOTHETICAL, rng=make_stream(6, 99))
    assert res.log_probability_density == pytest.approx(res.accumulator.log_povm_trace() - math.log(2.0), rel=1e-9)


def test_two_step_completeness():
    delta = 0.8

    def tr(s2, s1):
        acc = kraus_extend(kraus_extend(KrausAccumulator.identity(), povm_coefficients(s1, Z, delta)), povm_coefficients(s2, Z, delta))
        return math.exp(acc.log_povm_trace())

    lo, hi = -1 - 12 * delta, 1 + 12 * delta
    val, _ = integrate.dblquad(tr, lo, hi, lo, hi, epsabs=1e-10)
    assert val == pytest.approx(2.0, abs=1e-6)


def test_mixed_apriori_tracks_hypothetical():
    res = run_sequence(np.eye(2) / 2, 40, 1.0, sampling_source=SamplingSource.HYPOTHETICAL, rng=make_stream(7, 0))
    np.testing.assert_allclose(res.posterior, res.hypothetical_posterior, atol=1e-10)


def test_hypothetical_vs_mixed_estimate():
    one = run_sequence(bloch_to_matrix(APRIORI), 1, 1.0, rng=make_stream(8, 0))
    np.testing.assert_allclose(one.hypothetical_posterior, one.mixed_estimate, atol=1e-14)
    two = run_sequence(bloch_to_matrix(APRIORI), 2, 1.0, rng=make_stream(8, 0))
    assert np.abs(two.hypothetical_posterior - two.mixed_estimate).max() > 1e-6


@pytest.mark.parametrize("source", list(SamplingSource))
def test_scalar_engine_equals_batch(source):
    seed, n_steps = 21, 15
    state, recorded = run_sequence_batch(APRIORI, n_steps, 2.5, seed, 3, 9, sampling_source=source, checkpoints=(0, 7, n_steps))
    for row, i in enumerate(range(3, 9)):
        res = run_sequence(APRIORI, n_steps, 2.5, sampling_source=source, rng=make_stream(seed, i))
        np.testing.assert_allclose(state.s[row], matrix_to_bloch(res.posterior), atol=1e-12)
        np.testing.assert_allclose(recorded[n_steps][row], matrix_to_bloch(res.hypothetical_posterior), atol=1e-12)
        np.testing.assert_allclose(state.mixed_bloch[row], matrix_to_bloch(res.mixed_estimate), atol=1e-12)
        assert state.log_p[row] == pytest.approx(res.log_probability_density, rel=1e-12)
        assert state.log_weight[row] == pytest.approx(res.accumulator.log_weight, rel=1e-12)
    np.testing.assert_array_equal(recorded[0], 0.0)


def test_runs_are_prefix_consistent():
    short, rec_short = run_sequence_batch(APRIORI, 10, 2.0, 3, 0, 4, checkpoints=(10,))
    _, rec_long = run_sequence_batch(APRIORI, 30, 2.0, 3, 0, 4, checkpoints=(10,))
    np.testing.assert_array_equal(rec_short[10], rec_long[10])


def test_invalid_arguments():
    with pytest.raises(ValueError):
        run_sequence(APRIORI, -1, 1.0, rng=make_stream(0, 0))
    with pytest.raises(ValueError):
        run_sequence(APRIORI, 3, 0.0, rng=make_stream(0, 0))
    with pytest.raises(ValueError):
        DirectionPolicy.fixed([0.0, 0.0, 2.0])
