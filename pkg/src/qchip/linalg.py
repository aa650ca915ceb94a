"""Dense complex linear algebra for small Hermitian systems.

Everything here operates on N x N complex matrices (N = 3 for the chip, but
nothing assumes it).  The matrix exponential exp(-i H t) is computed through
the Hermitian eigendecomposition, which keeps the result unitary to machine
precision and admits a closed-form reverse-mode gradient.

Gradient convention: for a real scalar loss L, the adjoint of a complex array
Z is the array Zbar with Zbar[i,j] = dL/dRe(Z[i,j]) + 1j * dL/dIm(Z[i,j]), so
that dL = Re tr(Zbar^dag dZ) for any perturbation dZ.  All ``*_gradient`` and
``*_vjp`` functions in this package use this convention.

The ``*_batch`` functions accept stacks shaped (B, N, N) and skip input
validation; they are the vectorized path used by model training.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ConvergenceFailure, NotHermitian, ShapeMismatch

HERMITIAN_TOL = 1e-9
#: eigenvalue gaps below this use the analytic limit of the divided difference
DEGENERACY_TOL = 1e-9


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray  # (N,) real, ascending
    eigenvectors: np.ndarray  # (N, N) complex, orthonormal columns


def hermitian_defect(H: np.ndarray) -> float:
    """Max-entry deviation of H from its own conjugate transpose."""
    H = np.asarray(H)
    return float(np.max(np.abs(H - np.conj(np.swapaxes(H, -1, -2)))))


def unitarity_defect(U: np.ndarray) -> float:
    """Max-entry deviation of U^dag U from the identity."""
    U = np.asarray(U, dtype=complex)
    n = U.shape[-1]
    gram = np.swapaxes(np.conj(U), -1, -2) @ U
    return float(np.max(np.abs(gram - np.eye(n))))


def _require_hermitian(H: np.ndarray, tol: float = HERMITIAN_TOL) -> np.ndarray:
    H = np.asarray(H, dtype=complex)
    if H.ndim < 2 or H.shape[-1] != H.shape[-2]:
        raise NotHermitian(f"expected square matrices, got shape {H.shape}")
    defect = hermitian_defect(H)
    if not np.isfinite(defect) or defect > tol:
        raise NotHermitian(f"Hermitian defect {defect:.3e} exceeds {tol:.1e}")
    return H


def _fix_column_phases(V: np.ndarray) -> np.ndarray:
    """Rotate each eigenvector column so its largest-magnitude entry is real positive."""
    idx = np.argmax(np.abs(V), axis=-2)
    lead = np.take_along_axis(V, idx[..., None, :], axis=-2)[..., 0, :]
    # orthonormal columns guarantee |lead| >= 1/sqrt(N) > 0
    return V * (np.abs(lead) / lead)[..., None, :]


def hermitian_eig(H: np.ndarray) -> EigenDecomposition:
    """Eigendecomposition of a Hermitian matrix (or stack of them).

    Eigenvalues come back real and ascending; eigenvector columns are
    orthonormal with phases fixed (largest-magnitude entry real positive) so
    the output is deterministic.

    Raises NotHermitian if the input fails the Hermiticity tolerance, and
    ConvergenceFailure if the underlying solver does not converge.
    """
    H = _require_hermitian(H)
    try:
        w, V = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - eigh is robust for small N
        raise ConvergenceFailure(str(exc)) from exc
    return EigenDecomposition(w, _fix_column_phases(V))


def eigh_batch(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unchecked batched Hermitian eigendecomposition, shape (B, N, N)."""
    return np.linalg.eigh(H)


def expm_minus_i(H: np.ndarray, t: float = 1.0) -> np.ndarray:
    """exp(-i H t) for Hermitian H (batch-aware), via V exp(-i lambda t) V^dag."""
    w, V = hermitian_eig(H)
    return np.einsum("...ij,...j,...kj->...ik", V, np.exp(-1j * t * w), np.conj(V))


def expm_batch(H: np.ndarray, t: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched exp(-i H t); returns (U, eigenvalues, eigenvectors) for reuse in the backward pass."""
    w, V = np.linalg.eigh(H)
    U = np.einsum("...ij,...j,...kj->...ik", V, np.exp(-1j * t * w), np.conj(V))
    return U, w, V


def _divided_difference(w: np.ndarray, t: float) -> np.ndarray:
    """First divided-difference table of f(x) = exp(-i x t) over an eigenvalue vector.

    Off-diagonal entries are (f(a) - f(b)) / (a - b); pairs closer than
    DEGENERACY_TOL fall back to the derivative f'((a+b)/2) = -i t exp(-i t (a+b)/2),
    which avoids catastrophic cancellation.
    """
    a = w[..., :, None]
    b = w[..., None, :]
    gap = a - b
    near = np.abs(gap) < DEGENERACY_TOL
    safe = np.where(near, 1.0, gap)
    table = (np.exp(-1j * t * a) - np.exp(-1j * t * b)) / safe
    limit = -1j * t * np.exp(-1j * t * 0.5 * (a + b))
    return np.where(near, limit, table)


def expm_grad_batch(
    w: np.ndarray, V: np.ndarray, upstream: np.ndarray, t: float = 1.0
) -> np.ndarray:
    """Adjoint of exp(-i H t) from cached eigendata, projected onto Hermitian matrices.

    ``upstream`` is the loss adjoint with respect to U (see module docstring);
    the return value is the loss adjoint with respect to H.
    """
    F = _divided_difference(w, t)
    Vh = np.swapaxes(np.conj(V), -1, -2)
    inner = np.conj(F) * (Vh @ upstream @ V)
    Hbar = V @ inner @ Vh
    return 0.5 * (Hbar + np.swapaxes(np.conj(Hbar), -1, -2))


def expm_minus_i_gradient(H: np.ndarray, t: float, upstream: np.ndarray) -> np.ndarray:
    """Adjoint of the loss with respect to H, given the adjoint with respect to U = exp(-i H t).

    Validates H and returns the Hermitian-projected gradient.  At an exactly
    degenerate spectrum (e.g. H = 0) the divided differences collapse to the
    derivative -i t exp(-i lambda t) and the rule stays finite.
    """
    H = _require_hermitian(H)
    upstream = np.asarray(upstream, dtype=complex)
    if upstream.shape != H.shape:
        raise ShapeMismatch(f"upstream shape {upstream.shape} does not match H shape {H.shape}")
    w, V = np.linalg.eigh(H)
    return expm_grad_batch(w, V, upstream, t)
