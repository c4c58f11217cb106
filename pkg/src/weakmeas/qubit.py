"""Two-level-system algebra on Bloch vectors and 2x2 density matrices.

States live primarily as Bloch vectors ``s`` (numpy arrays whose last axis
has length 3) with ``rho = (I + s . sigma) / 2``; matrices are built on
demand.  Most functions broadcast over leading axes.
"""

from __future__ import annotations

import numpy as np

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = np.stack([SIGMA_X, SIGMA_Y, SIGMA_Z])
IDENTITY = np.eye(2, dtype=complex)

# Bloch norm may exceed 1 by this much from rounding alone.
CLAMP_EPS = 1e-12
# Largest overshoot silently projected back onto the sphere after an exact update.
ROUNDING_OVERSHOOT = 1e-9
PURE_TOL = 1e-9
DEGENERATE_TOL = 1e-12
Z_AXIS = np.array([0.0, 0.0, 1.0])


class StateError(ValueError):
    """Raised for inputs that are not valid qubit states."""


def make_stream(master_seed: int, stream_index: int, tag: int | None = None) -> np.random.Generator:
    """Independent, platform-stable random stream for ``(master_seed, stream_index)``.

    ``tag`` separates families of streams (e.g. two estimators) that share a seed.
    """
    key = (int(stream_index),) if tag is None else (int(stream_index), int(tag))
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))


def bloch_norm(s: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.square(s), axis=-1))


def check_bloch(s, tol: float = CLAMP_EPS) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != 3:
        raise StateError(f"Bloch vector must have 3 components, got shape {s.shape}")
    if np.any(bloch_norm(s) > 1.0 + tol):
        raise StateError(f"Bloch vector outside the unit ball (max norm {bloch_norm(s).max():.3e})")
    return s


def clamp_bloch(s: np.ndarray, max_overshoot: float = ROUNDING_OVERSHOOT) -> np.ndarray:
    """Project vectors that left the unit ball by at most ``max_overshoot`` back onto it.

    Larger excursions raise ``StateError``.
    """
    norm = bloch_norm(s)
    over = norm > 1.0
    if not np.any(over):
        return s
    worst = float(norm.max())
    if worst > 1.0 + max_overshoot:
        raise StateError(f"Bloch norm {worst:.12g} exceeds 1 by more than {max_overshoot:g}")
    scale = np.where(over, 1.0 / np.where(over, norm, 1.0), 1.0)
    return s * scale[..., None]


def bloch_to_matrix(s) -> np.ndarray:
    """Density matrix ``(I + s . sigma) / 2``."""
    s = check_bloch(s)
    return 0.5 * (IDENTITY + np.einsum("...i,ijk->...jk", s.astype(complex), PAULI))


def matrix_to_bloch(rho) -> np.ndarray:
    """Bloch vector ``tr[sigma_i rho]`` of a (possibly unnormalized) 2x2 matrix."""
    rho = np.asarray(rho, dtype=complex)
    return np.einsum("ijk,...kj->...i", PAULI, rho).real


def check_density(rho, atol: float = 1e-9) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape[-2:] != (2, 2):
        raise StateError(f"density matrix must be 2x2, got shape {rho.shape}")
    if not np.allclose(rho, np.swapaxes(rho, -1, -2).conj(), atol=1e-12, rtol=0.0):
        raise StateError("density matrix is not Hermitian")
    tr = np.trace(rho, axis1=-2, axis2=-1)
    if np.any(np.abs(tr - 1.0) > atol):
        raise StateError("density matrix trace differs from 1")
    if np.any(np.linalg.eigvalsh(rho) < -atol):
        raise StateError("density matrix has a negative eigenvalue")
    return rho


def purity_bloch(s) -> np.ndarray | float:
    s = np.asarray(s, dtype=float)
    return 0.5 * (1.0 + np.sum(s * s, axis=-1))


def purity(rho) -> float:
    """``tr[rho^2]``, computed from the matrix directly."""
    rho = np.asarray(rho, dtype=complex)
    return float(np.einsum("ij,ji->", rho, rho).real)


def fidelity_bloch(v, u) -> np.ndarray | float:
    """``tr[rho' rho] = (1 + v . u) / 2`` for Bloch vectors ``v`` and ``u``."""
    return 0.5 * (1.0 + np.sum(np.asarray(v) * np.asarray(u), axis=-1))


def fidelity(rho_prime, rho) -> float:
    """Bilinear fidelity ``tr[rho' rho]``."""
    return float(np.einsum("ij,ji->", np.asarray(rho_prime), np.asarray(rho)).real)


def eigensystem(rho) -> list[tuple[float, np.ndarray]]:
    """Eigenvalues ``(1 +- |v|)/2`` with eigenstates ``+-v/|v|`` as Bloch vectors.

    The larger eigenvalue comes first.  The maximally mixed state uses the
    z axis so that the result is deterministic.
    """
    v = matrix_to_bloch(rho)
    norm = float(np.linalg.norm(v))
    axis = Z_AXIS.copy() if norm < DEGENERATE_TOL else v / norm
    norm = min(norm, 1.0)
    return [(0.5 * (1.0 + norm), axis), (0.5 * (1.0 - norm), -axis)]


def unit_axis(v: np.ndarray) -> np.ndarray:
    """Unit vectors along ``v``; the z axis where ``v`` vanishes."""
    norm = bloch_norm(v)
    safe = np.where(norm < DEGENERATE_TOL, 1.0, norm)
    out = v / safe[..., None]
    return np.where((norm < DEGENERATE_TOL)[..., None], Z_AXIS, out)


def normals_to_sphere(g: np.ndarray) -> np.ndarray:
    """Map iid standard-normal triples onto the unit sphere."""
    return g / bloch_norm(g)[..., None]


def sample_uniform_sphere(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform points on S^2 (one vector, or ``size`` of them stacked)."""
    if size is None:
        g = rng.standard_normal(3)
        while not np.any(g):
            g = rng.standard_normal(3)
        return normals_to_sphere(g)
    g = rng.standard_normal((size, 3))
    # a zero triple has probability zero; redraw rather than divide by it
    bad = ~np.any(g, axis=-1)
    while np.any(bad):
        g[bad] = rng.standard_normal((int(bad.sum()), 3))
        bad = ~np.any(g, axis=-1)
    return normals_to_sphere(g)
