"""Qubit state estimation from sequences of unsharp Gaussian polarization measurements.

Discrete sequential-measurement simulation, the continuum-limit Ito equations,
and Monte Carlo fidelity statistics.
"""

from weakmeas.qubit import (
    PAULI,
    bloch_to_matrix,
    eigensystem,
    fidelity,
    fidelity_bloch,
    make_stream,
    matrix_to_bloch,
    purity,
    purity_bloch,
    sample_uniform_sphere,
)
from weakmeas.povm import (
    EstimateMode,
    GaussianPovmElement,
    completeness_residual,
    mixed_estimate,
    outcome_pdf,
    posterior_update,
    povm_coefficients,
    projective_posterior,
    pure_estimate,
    sample_outcome,
)
from weakmeas.sequence import (
    DirectionPolicy,
    KrausAccumulator,
    SamplingSource,
    SequenceResult,
    StepRecord,
    kraus_extend,
    run_sequence,
)
from weakmeas.stats import (
    FidelityEstimate,
    RunSummary,
    avg_fidelity_projective,
    avg_fidelity_sequence,
    avg_fidelity_single,
    drift_purity,
    merge_summaries,
    saturation_value,
)

__version__ = "0.1.0"
