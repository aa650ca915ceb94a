"""Fixed quantum-mechanics layers and fidelity metrics.

Index convention used everywhere: a probability matrix P has entry P[k, j] =
probability of exiting port k given input port j, i.e. columns are the output
distributions of the computational basis inputs.  The flat dataset layout
stacks the columns of P into a length N^2 vector (input 0's distribution
first).
"""

from __future__ import annotations

import numpy as np

from .errors import NotADistribution, NotUnitary
from .linalg import unitarity_defect

UNITARY_TOL = 1e-8
COLUMN_SUM_TOL = 1e-9
DISTRIBUTION_SUM_TOL = 1e-6


def _require_unitary(U: np.ndarray, name: str = "matrix") -> np.ndarray:
    U = np.asarray(U, dtype=complex)
    defect = unitarity_defect(U)
    if not np.isfinite(defect) or defect > UNITARY_TOL:
        raise NotUnitary(f"{name} has unitarity defect {defect:.3e} > {UNITARY_TOL:.1e}")
    return U


def hermitianize(A: np.ndarray) -> np.ndarray:
    """Hermitian part (A + A^dag) / 2; the anti-Hermitian part is discarded.

    Works on single matrices and on (B, N, N) stacks.  The result is exactly
    Hermitian: diagonal imaginary parts cancel in floating point.
    """
    A = np.asarray(A, dtype=complex)
    return 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))


def born_batch(U: np.ndarray) -> np.ndarray:
    """|U|^2 elementwise, no unitarity check (training fast path)."""
    return np.abs(U) ** 2


def born_probabilities(U: np.ndarray) -> np.ndarray:
    """Transition probabilities P[k, j] = |U[k, j]|^2 of a unitary."""
    U = _require_unitary(U)
    return born_batch(U)


def cascade(U_fan_in: np.ndarray, U_chip: np.ndarray, U_fan_out: np.ndarray) -> np.ndarray:
    """Total device unitary U_fan_out @ U_chip @ U_fan_in (operator order)."""
    U_fan_in = _require_unitary(U_fan_in, "fan-in")
    U_chip = _require_unitary(U_chip, "chip unitary")
    U_fan_out = _require_unitary(U_fan_out, "fan-out")
    return U_fan_out @ U_chip @ U_fan_in


def gate_fidelity(U: np.ndarray, W: np.ndarray) -> float:
    """|tr(U^dag W)|^2 / N^2, the global-phase-invariant overlap of two unitaries."""
    U = _require_unitary(U)
    W = _require_unitary(W, "target")
    n = U.shape[-1]
    overlap = np.abs(np.trace(np.conj(U).T @ W)) ** 2 / n**2
    return float(min(overlap, 1.0))


def _require_distribution(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=float).ravel()
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise NotADistribution(f"{name} has negative or non-finite entries")
    total = p.sum()
    if abs(total - 1.0) > DISTRIBUTION_SUM_TOL:
        raise NotADistribution(f"{name} sums to {total!r}, not 1")
    return p


def classical_fidelity(p: np.ndarray, q: np.ndarray) -> float:
    """Bhattacharyya overlap sum_i sqrt(p_i q_i) of two distributions."""
    p = _require_distribution(p, "p")
    q = _require_distribution(q, "q")
    if p.shape != q.shape:
        raise NotADistribution(f"length mismatch {p.shape} vs {q.shape}")
    return float(min(np.sum(np.sqrt(p * q)), 1.0))


def distribution_fidelity_avg(P_measured: np.ndarray, P_target: np.ndarray) -> float:
    """Mean classical fidelity over the per-input-port output distributions (columns)."""
    P_measured = np.asarray(P_measured, dtype=float)
    P_target = np.asarray(P_target, dtype=float)
    if P_measured.shape != P_target.shape:
        raise NotADistribution(f"shape mismatch {P_measured.shape} vs {P_target.shape}")
    n = P_measured.shape[1]
    return float(np.mean([classical_fidelity(P_measured[:, j], P_target[:, j]) for j in range(n)]))


def stack_columns(P: np.ndarray) -> np.ndarray:
    """Column-stack a probability matrix into the flat dataset layout.

    (N, N) -> (N^2,) or (B, N, N) -> (B, N^2); y[N*j + k] = P[k, j].
    """
    P = np.asarray(P)
    n = P.shape[-1]
    return np.swapaxes(P, -1, -2).reshape(*P.shape[:-2], n * n)


def unstack_columns(y: np.ndarray, dim: int = 3) -> np.ndarray:
    """Inverse of stack_columns."""
    y = np.asarray(y)
    P_t = y.reshape(*y.shape[:-1], dim, dim)
    return np.swapaxes(P_t, -1, -2)


def validate_probability_matrix(P: np.ndarray, tol: float = COLUMN_SUM_TOL) -> None:
    """Raise NotADistribution unless every column of P is a distribution."""
    P = np.asarray(P, dtype=float)
    if np.any(P < 0) or np.any(P > 1 + tol):
        raise NotADistribution("entries outside [0, 1]")
    col_err = np.max(np.abs(P.sum(axis=-2) - 1.0))
    if col_err > tol:
        raise NotADistribution(f"column sums deviate from 1 by {col_err:.3e}")


def born_vjp(U: np.ndarray, P_bar: np.ndarray) -> np.ndarray:
    """Adjoint of the Born rule P = |U|^2: U_bar = 2 * P_bar * U (elementwise)."""
    return 2.0 * np.asarray(P_bar) * np.asarray(U)


def gate_fidelity_and_grad(U: np.ndarray, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gate fidelity and its Wirtinger-style gradient in U.

    F = |tr(U^dag W)|^2 / N^2, U_bar = (2/N^2) * tr(W^dag U) * W.  Batched over
    leading axes of U; W is a single target.
    """
    U = np.asarray(U)
    W = np.asarray(W)
    n = W.shape[-1]
    ov = np.einsum("...ij,ij->...", U.conj(), W)  # tr(U^dag W)
    F = (np.abs(ov) ** 2).real / n**2
    U_bar = (2.0 / n**2) * np.conj(ov)[..., None, None] * W
    return F, U_bar
