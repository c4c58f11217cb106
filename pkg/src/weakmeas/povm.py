"""Single unsharp measurement of a Pauli polarization ``n . sigma``.

The POVM element for outcome ``sigma`` at precision ``delta`` is the Gaussian
``(2 pi delta^2)^(-1/2) exp[-(n.sigma_hat - sigma)^2 / (2 delta^2)]``.  Since
``n . sigma_hat`` has eigenvalues +-1 the element is fully described by two
positive coefficients on the eigenprojectors ``P+- = (I +- n . sigma) / 2``;
no matrix exponentials are ever formed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from weakmeas.qubit import (
    IDENTITY,
    PAULI,
    StateError,
    bloch_norm,
    bloch_to_matrix,
    check_bloch,
    clamp_bloch,
    matrix_to_bloch,
    unit_axis,
)

DIRECTION_TOL = 1e-12
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class EstimateMode(str, enum.Enum):
    """How a pure estimate is picked from the eigenstates of the mixed estimate."""

    EIGEN_SAMPLE = "eigen_sample"
    MOST_PROBABLE = "most_probable"


def as_bloch(state) -> np.ndarray:
    """Accept either a 2x2 density matrix or a Bloch vector."""
    arr = np.asarray(state)
    if arr.shape[-2:] == (2, 2):
        return matrix_to_bloch(arr)
    return check_bloch(arr)


def check_direction(n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    if n.shape[-1] != 3 or np.any(np.abs(bloch_norm(n) - 1.0) > DIRECTION_TOL):
        raise ValueError(f"measurement direction must be a unit 3-vector, got {n!r}")
    return n


def _check_delta(delta: float) -> float:
    if not (delta > 0.0) or not math.isfinite(delta):
        raise ValueError(f"precision delta must be positive and finite, got {delta!r}")
    return float(delta)


def sqrt_ratio(sigma, delta):
    """``(a - b) / (a + b)`` for square-root coefficients ``a, b`` of the element.

    Equals ``tanh(sigma / (2 delta^2))``; the square-root element is
    proportional to ``I + k n.sigma`` with this ``k``.
    """
    return np.tanh(np.asarray(sigma) / (2.0 * delta * delta))


@dataclass(frozen=True)
class GaussianPovmElement:
    direction: np.ndarray
    delta: float
    sigma: float
    log_coeff_plus: float
    log_coeff_minus: float

    @property
    def coeff_plus(self) -> float:
        return math.exp(self.log_coeff_plus)

    @property
    def coeff_minus(self) -> float:
        return math.exp(self.log_coeff_minus)

    @property
    def log_trace(self) -> float:
        return float(np.logaddexp(self.log_coeff_plus, self.log_coeff_minus))

    def projectors(self) -> tuple[np.ndarray, np.ndarray]:
        nsig = np.einsum("i,ijk->jk", self.direction.astype(complex), PAULI)
        return 0.5 * (IDENTITY + nsig), 0.5 * (IDENTITY - nsig)

    def matrix(self) -> np.ndarray:
        p_plus, p_minus = self.projectors()
        return self.coeff_plus * p_plus + self.coeff_minus * p_minus

    def sqrt_matrix(self) -> np.ndarray:
        p_plus, p_minus = self.projectors()
        return math.exp(0.5 * self.log_coeff_plus) * p_plus + math.exp(0.5 * self.log_coeff_minus) * p_minus

    def log_sqrt_scale(self) -> float:
        """Log of ``(a + b) / 2``, the factor pulled out of ``a P+ + b P-``."""
        return float(np.logaddexp(0.5 * self.log_coeff_plus, 0.5 * self.log_coeff_minus)) - math.log(2.0)

    def mixed_bloch(self) -> np.ndarray:
        """Bloch vector of ``Pi / tr Pi``, i.e. ``tanh(sigma / delta^2) n``."""
        return math.tanh(self.sigma / (self.delta * self.delta)) * self.direction


def povm_coefficients(sigma: float, n, delta: float) -> GaussianPovmElement:
    delta = _check_delta(delta)
    n = check_direction(n)
    sigma = float(sigma)
    log_norm = -LOG_SQRT_2PI - math.log(delta)
    two_var = 2.0 * delta * delta
    return GaussianPovmElement(
        direction=n,
        delta=delta,
        sigma=sigma,
        log_coeff_plus=log_norm - (1.0 - sigma) ** 2 / two_var,
        log_coeff_minus=log_norm - (1.0 + sigma) ** 2 / two_var,
    )


def normal_pdf(x, mean, sd):
    return np.exp(-0.5 * ((x - mean) / sd) ** 2) / (sd * math.sqrt(2.0 * math.pi))


def log_outcome_pdf_bloch(s, n, delta, sigma):
    """Log of ``p(sigma)`` for Bloch state(s) ``s``; broadcasts."""
    ns = np.clip(np.sum(np.asarray(s) * np.asarray(n), axis=-1), -1.0, 1.0)
    two_var = 2.0 * delta * delta
    base = -LOG_SQRT_2PI - math.log(delta)
    with np.errstate(divide="ignore"):
        lp = np.log(0.5 * (1.0 + ns)) - (sigma - 1.0) ** 2 / two_var
        lm = np.log(0.5 * (1.0 - ns)) - (sigma + 1.0) ** 2 / two_var
    return base + np.logaddexp(lp, lm)


def outcome_pdf(rho, n, delta: float, sigma) -> float:
    """Outcome density ``tr[Pi(sigma) rho]``, a two-Gaussian mixture at +-1."""
    delta = _check_delta(delta)
    return np.exp(log_outcome_pdf_bloch(as_bloch(rho), check_direction(n), delta, sigma))


def outcome_from_draws(s, n, delta, u, z):
    """Exact outcome sample from a uniform ``u`` (branch) and a normal ``z`` (noise)."""
    p_plus = 0.5 * (1.0 + np.sum(np.asarray(s) * np.asarray(n), axis=-1))
    return np.where(u < p_plus, 1.0, -1.0) + delta * z


def sample_outcome(rho, n, delta: float, rng: np.random.Generator) -> float:
    delta = _check_delta(delta)
    u = rng.random()
    z = rng.standard_normal()
    return float(outcome_from_draws(as_bloch(rho), check_direction(n), delta, u, z))


def kraus_bloch_update(s, kappa, max_overshoot: float = 1e-9):
    """Bloch vector of ``M rho M / tr[M rho M]`` for ``M = I + kappa . sigma``, real ``kappa``.

    Broadcasts over leading axes of ``s`` and ``kappa``.
    """
    s = np.asarray(s, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    ks = np.sum(kappa * s, axis=-1)
    k2 = np.sum(kappa * kappa, axis=-1)
    z = 1.0 + k2 + 2.0 * ks
    out = ((1.0 - k2)[..., None] * s + 2.0 * kappa + 2.0 * ks[..., None] * kappa) / z[..., None]
    return clamp_bloch(out, max_overshoot)


def posterior_bloch(s, n, k, max_overshoot: float = 1e-9):
    """Posterior Bloch vector for the square-root element ``~ I + k n.sigma``."""
    kappa = np.asarray(k, dtype=float)[..., None] * np.asarray(n, dtype=float)
    return kraus_bloch_update(s, kappa, max_overshoot)


def posterior_update(rho, sigma: float, n, delta: float) -> np.ndarray:
    """Aposteriori density ``Pi^(1/2) rho Pi^(1/2) / tr[Pi rho]``."""
    delta = _check_delta(delta)
    n = check_direction(n)
    s = posterior_bloch(as_bloch(rho), n, sqrt_ratio(sigma, delta))
    return bloch_to_matrix(s)


def projective_posterior(rho, n, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """Sharp measurement of ``n . sigma``: returns the result +-1 and the collapsed state."""
    n = check_direction(n)
    p_plus = 0.5 * (1.0 + float(np.dot(as_bloch(rho), n)))
    result = 1 if rng.random() < p_plus else -1
    return result, bloch_to_matrix(result * n)


def mixed_estimate(element) -> np.ndarray:
    """Normalized element ``Pi / tr Pi``; accepts an element or a Kraus accumulator."""
    if isinstance(element, GaussianPovmElement):
        return bloch_to_matrix(element.mixed_bloch())
    pi = element.povm_matrix()
    tr = np.trace(pi).real
    if not tr > 0.0:
        raise StateError("POVM element has zero trace")
    return pi / tr


def pure_from_bloch(v, mode: EstimateMode, u=None):
    """Pure estimate(s) from mixed-estimate Bloch vector(s) ``v``.

    ``u`` holds uniforms for eigen-sampling; ignored for most-probable mode.
    """
    v = np.asarray(v, dtype=float)
    axis = unit_axis(v)
    if EstimateMode(mode) is EstimateMode.MOST_PROBABLE:
        return axis
    lam_plus = 0.5 * (1.0 + np.minimum(bloch_norm(v), 1.0))
    sign = np.where(np.asarray(u) < lam_plus, 1.0, -1.0)
    return sign[..., None] * axis


def pure_estimate(rho_prime, mode: EstimateMode, rng: np.random.Generator) -> np.ndarray:
    """Pure Bloch vector chosen among the eigenstates of ``rho_prime``.

    ``EIGEN_SAMPLE`` picks eigenstate i with probability equal to its
    eigenvalue; ``MOST_PROBABLE`` takes the larger one (z axis on ties).
    """
    mode = EstimateMode(mode)
    u = rng.random() if mode is EstimateMode.EIGEN_SAMPLE else None
    return pure_from_bloch(as_bloch(rho_prime), mode, u)


def gauss_legendre_grid(lo: float, hi: float, panels: int = 1000, order: int = 10):
    """Nodes and weights of a composite Gauss-Legendre rule on ``[lo, hi]``."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def completeness_residual(delta: float, panels: int = 1000, order: int = 10, n=(0.0, 0.0, 1.0)) -> float:
    """Max-entry deviation of the integrated POVM from the identity.

    Integrates over ``[-1 - 12 delta, 1 + 12 delta]`` with ``panels * order`` nodes.
    """
    delta = _check_delta(delta)
    n = check_direction(np.asarray(n, dtype=float))
    nodes, weights = gauss_legendre_grid(-1.0 - 12.0 * delta, 1.0 + 12.0 * delta, panels, order)
    mass_plus = float(np.dot(weights, normal_pdf(nodes, 1.0, delta)))
    mass_minus = float(np.dot(weights, normal_pdf(nodes, -1.0, delta)))
    nsig = np.einsum("i,ijk->jk", n.astype(complex), PAULI)
    total = 0.5 * mass_plus * (IDENTITY + nsig) + 0.5 * mass_minus * (IDENTITY - nsig)
    return float(np.max(np.abs(total - IDENTITY)))
