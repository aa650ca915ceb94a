"""Software stand-in for the three-waveguide chip.

Generates ground-truth dynamics from the tridiagonal coupled-waveguide model
(optionally with quadratic voltage terms so no linear physical model is exact),
applies measurement noise, performs the two-angle interferometric readout, and
post-processes measured powers with iterated proportional fitting (Sinkhorn).

Electrode convention: 4 electrodes flank 3 waveguides; the potential
difference across waveguide i is dV_i = V_i - V_{i+1}.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict, replace

import numpy as np

from . import linalg, quantum
from .errors import (
    ControlOutOfDomain,
    DegenerateMatrix,
    NoConvergence,
    NotUnitary,
    ShapeMismatch,
)

N_GUIDES = 3
N_ELECTRODES = 4
SINKHORN_TOL = 1e-10
SINKHORN_MAX_ITER = 1000

# stream tags for per-example rng derivation (order-independent generation)
_SPLIT_CODES = {"train": 0, "test": 1, "control": 2}


@dataclass(frozen=True)
class ChipGroundTruth:
    """True device parameters, including terms no linear model can represent.

    beta0/dbeta: zero-voltage propagation constants and linear sensitivities.
    c0/dc: zero-voltage couplings and linear sensitivities.
    dbeta2/dc2: quadratic sensitivities (zero -> exactly whitebox-representable).
    fan_*: voltage-independent tridiagonal fan Hamiltonians (diag, couplings).
    sigma: additive Gaussian noise std on measured powers.
    """

    beta0: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dbeta: tuple[float, float, float] = (1.0, 0.85, 1.15)
    c0: tuple[float, float] = (0.2, 0.2)
    dc: tuple[float, float] = (0.04, 0.04)
    dbeta2: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dc2: tuple[float, float] = (0.0, 0.0)
    fan_in_diag: tuple[float, float, float] = (0.0, 0.0, 0.0)
    fan_in_coupling: tuple[float, float] = (0.2, 0.2)
    fan_out_diag: tuple[float, float, float] = (0.0, 0.0, 0.0)
    fan_out_coupling: tuple[float, float] = (0.2, 0.2)
    sigma: float = 0.0
    seed: int = 0


def default_ground_truth(linear: bool = False, sigma: float = 0.0, seed: int = 0) -> ChipGroundTruth:
    """Reference simulation parameters; quadratic terms dropped when linear=True.

    The defaults put every eigenphase of the transfer unitary strictly inside
    (-pi, pi) over the whole voltage box (so a continuous effective-Hamiltonian
    lift exists) while the intensities still sweep essentially the full [0,1]
    range.
    """
    gt = ChipGroundTruth(sigma=float(sigma), seed=int(seed))
    if linear:
        return gt
    return replace(gt, dbeta2=(0.12, 0.10, 0.14), dc2=(0.02, 0.02))


def gt_hash(gt: ChipGroundTruth) -> str:
    """Short stable fingerprint of the ground-truth parameters."""
    doc = json.dumps(asdict(gt), sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


def _tridiagonal(diag, off) -> np.ndarray:
    """Real symmetric tridiagonal matrices from batched diag (...,3) / off (...,2)."""
    diag = np.asarray(diag, dtype=float)
    off = np.asarray(off, dtype=float)
    H = np.zeros((*diag.shape[:-1], N_GUIDES, N_GUIDES))
    for i in range(N_GUIDES):
        H[..., i, i] = diag[..., i]
    for i in range(N_GUIDES - 1):
        H[..., i, i + 1] = off[..., i]
        H[..., i + 1, i] = off[..., i]
    return H


def fan_unitary(diag, coupling) -> np.ndarray:
    """e^{-iH} for a voltage-independent tridiagonal fan Hamiltonian."""
    return linalg.expm_minus_i(_tridiagonal(np.asarray(diag, float), np.asarray(coupling, float)))


def _check_domain(V: np.ndarray) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if V.shape[-1] != N_ELECTRODES:
        raise ShapeMismatch(f"expected {N_ELECTRODES} electrode voltages, got shape {V.shape}")
    if np.any(np.abs(V) > 1.0) or not np.all(np.isfinite(V)):
        raise ControlOutOfDomain(f"voltages outside [-1,1]: {V}")
    return V


def delta_v(V: np.ndarray) -> np.ndarray:
    """Per-waveguide potential differences dV_i = V_i - V_{i+1} (batched)."""
    V = np.asarray(V, dtype=float)
    return V[..., :-1] - V[..., 1:]


def chip_hamiltonian(gt: ChipGroundTruth, V: np.ndarray) -> np.ndarray:
    """Ground-truth chip Hamiltonian with linear + quadratic voltage terms."""
    dV = delta_v(V)
    beta = (
        np.asarray(gt.beta0)
        + np.asarray(gt.dbeta) * dV
        + np.asarray(gt.dbeta2) * dV**2
    )
    s = dV[..., :-1] + dV[..., 1:]
    coup = np.asarray(gt.c0) + np.asarray(gt.dc) * s + np.asarray(gt.dc2) * s**2
    return _tridiagonal(beta, coup)


def ground_truth_unitary(gt: ChipGroundTruth, V: np.ndarray) -> np.ndarray:
    """Full transfer unitary U_fan_out . e^{-iH_chip(V)} . U_fan_in (batched over V)."""
    V = _check_domain(V)
    U_chip = linalg.expm_minus_i(chip_hamiltonian(gt, V))
    U_in = fan_unitary(gt.fan_in_diag, gt.fan_in_coupling)
    U_out = fan_unitary(gt.fan_out_diag, gt.fan_out_coupling)
    return U_out @ U_chip @ U_in


def measure_powers(gt: ChipGroundTruth, V: np.ndarray, rng=None) -> np.ndarray:
    """Raw measured power matrix: Born probabilities + Gaussian noise, clipped to [0,1].

    Not yet normalized.  Deterministic: without an explicit rng the noise
    stream is derived from gt.seed, so repeated calls agree.
    """
    P = quantum.born_batch(ground_truth_unitary(gt, V))
    if gt.sigma > 0.0:
        if rng is None:
            rng = np.random.default_rng([3, gt.seed])
        P = P + rng.normal(0.0, gt.sigma, size=P.shape)
    return np.clip(P, 0.0, 1.0)


def interferometric_readout_batch(U: np.ndarray) -> np.ndarray:
    """Two-angle interferometric intensities, unchecked and batched.

    For each matrix entry u (row-major (k,j) order) emit
    I_0 = |u+1|^2/4 then I_{pi/2} = |u+i|^2/4, interleaved: 2N^2 outputs.
    """
    U = np.asarray(U)
    flat = U.reshape(*U.shape[:-2], -1)
    out = np.empty((*flat.shape[:-1], 2 * flat.shape[-1]))
    out[..., 0::2] = np.abs(flat + 1.0) ** 2 / 4.0
    out[..., 1::2] = np.abs(flat + 1.0j) ** 2 / 4.0
    return out


def interferometric_readout(U: np.ndarray) -> np.ndarray:
    """Validated single-matrix readout; raises NotUnitary on non-unitary input."""
    U = np.asarray(U, dtype=complex)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise ShapeMismatch(f"expected a square matrix, got {U.shape}")
    if linalg.unitarity_defect(U) > 1e-8:
        raise NotUnitary(f"unitarity defect {linalg.unitarity_defect(U):.3e}")
    return interferometric_readout_batch(U)


def interferometric_vjp(U: np.ndarray, y_bar: np.ndarray) -> np.ndarray:
    """Adjoint of interferometric_readout_batch: U_bar from upstream intensity grads."""
    U = np.asarray(U)
    n = U.shape[-1]
    y_bar = np.asarray(y_bar)
    g0 = y_bar[..., 0::2].reshape(*U.shape[:-2], n, n)
    g1 = y_bar[..., 1::2].reshape(*U.shape[:-2], n, n)
    return (g0 * (U + 1.0) + g1 * (U + 1.0j)) / 2.0


def reconstruct_from_interferometry(i0, ipi2, p):
    """Invert the readout: complex u from (I_0, I_{pi/2}, |u|^2)."""
    i0 = np.asarray(i0)
    ipi2 = np.asarray(ipi2)
    p = np.asarray(p)
    return (4.0 * i0 - p - 1.0) / 2.0 + 1.0j * (4.0 * ipi2 - p - 1.0) / 2.0


def sinkhorn_normalize(
    P: np.ndarray, tol: float = SINKHORN_TOL, max_iter: int = SINKHORN_MAX_ITER
) -> np.ndarray:
    """Iterated proportional fitting to a bistochastic matrix (batched).

    Alternates column then row normalization until every row/column sum is
    within tol of 1.  Preserves zeros and matrix support exactly.
    """
    P = np.array(P, dtype=float)
    if np.any(P < 0) or not np.all(np.isfinite(P)):
        raise DegenerateMatrix("negative or non-finite entries")
    if np.any(P.sum(axis=-1) == 0.0) or np.any(P.sum(axis=-2) == 0.0):
        raise DegenerateMatrix("zero row or column")
    for _ in range(max_iter):
        P = P / P.sum(axis=-2, keepdims=True)
        P = P / P.sum(axis=-1, keepdims=True)
        dev = max(
            np.max(np.abs(P.sum(axis=-1) - 1.0)),
            np.max(np.abs(P.sum(axis=-2) - 1.0)),
        )
        if dev < tol:
            return P
    raise NoConvergence(f"Sinkhorn not converged after {max_iter} sweeps (dev {dev:.3e})")


@dataclass
class Dataset:
    """Voltage/output pairs plus the metadata needed to regenerate them."""

    voltages: np.ndarray  # (n, 4)
    outputs: np.ndarray  # (n, 9) power mode, (n, 18) interferometric
    mode: str
    seed: int
    sigma: float
    gt_hash: str
    split: str = "train"

    @property
    def n(self) -> int:
        return self.voltages.shape[0]

    def __post_init__(self):
        self.voltages = np.asarray(self.voltages, dtype=float)
        self.outputs = np.asarray(self.outputs, dtype=float)
        if self.voltages.shape[0] != self.outputs.shape[0]:
            raise ShapeMismatch("voltage/output count mismatch")
        if self.mode not in ("power", "interferometric"):
            raise ShapeMismatch(f"unknown mode {self.mode!r}")


def _example_rng(seed: int, split: str, index: int):
    return np.random.default_rng([_SPLIT_CODES[split], int(index), int(seed)])


def _generate_split(gt: ChipGroundTruth, n: int, mode: str, seed: int, split: str) -> Dataset:
    vs = np.empty((n, N_ELECTRODES))
    noise = np.empty((n, N_GUIDES, N_GUIDES)) if gt.sigma > 0.0 else None
    for i in range(n):
        rng = _example_rng(seed, split, i)
        vs[i] = rng.uniform(-1.0, 1.0, N_ELECTRODES)
        if noise is not None:
            noise[i] = rng.normal(0.0, gt.sigma, (N_GUIDES, N_GUIDES))
    U = ground_truth_unitary(gt, vs) if n else np.zeros((0, N_GUIDES, N_GUIDES), complex)
    if mode == "power":
        P = quantum.born_batch(U)
        if noise is not None:
            P = np.clip(P + noise, 0.0, 1.0)
        y = quantum.stack_columns(sinkhorn_normalize(P)) if n else np.zeros((0, 9))
    elif mode == "interferometric":
        # phase-sensitive readout is modeled noiseless
        y = interferometric_readout_batch(U)
    else:
        raise ShapeMismatch(f"unknown mode {mode!r}")
    return Dataset(vs, y, mode, seed, gt.sigma, gt_hash(gt), split)


def generate_dataset(
    gt: ChipGroundTruth,
    n_train: int = 7000,
    n_test: int = 1000,
    mode: str = "power",
    seed: int = 0,
) -> tuple[Dataset, Dataset]:
    """Seeded train/test datasets with independent voltage streams per split."""
    train = _generate_split(gt, n_train, mode, seed, "train")
    test = _generate_split(gt, n_test, mode, seed, "test")
    return train, test


def write_dataset(ds: Dataset, path) -> None:
    """JSON-lines: header {mode,n,seed,sigma,gt_hash} then one {"v","y"} per example."""
    header = {
        "mode": ds.mode,
        "n": int(ds.n),
        "seed": int(ds.seed),
        "sigma": float(ds.sigma),
        "gt_hash": ds.gt_hash,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for v, y in zip(ds.voltages, ds.outputs):
            fh.write(json.dumps({"v": list(v), "y": list(y)}) + "\n")


def read_dataset(path, split: str = "train") -> Dataset:
    with open(path) as fh:
        header = json.loads(fh.readline())
        vs, ys = [], []
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            vs.append(row["v"])
            ys.append(row["y"])
    n = header.get("n", len(vs))
    if n != len(vs):
        raise ShapeMismatch(f"header claims {n} examples, file has {len(vs)}")
    shape = (len(vs), 9 if header["mode"] == "power" else 18)
    return Dataset(
        np.asarray(vs, float).reshape(len(vs), N_ELECTRODES),
        np.asarray(ys, float).reshape(shape),
        header["mode"],
        int(header["seed"]),
        float(header["sigma"]),
        header["gt_hash"],
        split,
    )


class SimulatorModel:
    """Exposes the exact simulator through the model interface used by controllers.

    Serves as the perfect-knowledge baseline: a controller driving this model
    should achieve (near-)zero objective on every reachable target.
    """

    kind = "simulator"
    has_unitary_access = True

    def __init__(self, gt: ChipGroundTruth, mode: str = "power"):
        if gt.sigma != 0.0:
            gt = replace(gt, sigma=0.0)  # the idealized model is noiseless
        self.gt = gt
        self.mode = mode

    def is_trained(self) -> bool:
        return True

    def parameter_hash(self) -> str:
        return gt_hash(self.gt)

    # -- controller hooks ---------------------------------------------------

    def control_unitary(self, V: np.ndarray):
        V = np.asarray(V, dtype=float)
        dV = delta_v(V)
        H = chip_hamiltonian(self.gt, V)
        U_chip, w, Vec = linalg.expm_batch(H)
        U_in = fan_unitary(self.gt.fan_in_diag, self.gt.fan_in_coupling)
        U_out = fan_unitary(self.gt.fan_out_diag, self.gt.fan_out_coupling)
        U = U_out @ U_chip @ U_in
        tape = {"dV": dV, "w": w, "Vec": Vec, "U_in": U_in, "U_out": U_out, "U": U}
        return U, tape

    def control_unitary_vjp(self, tape, U_bar: np.ndarray) -> np.ndarray:
        Uc_bar = tape["U_out"].conj().T @ U_bar @ tape["U_in"].conj().T
        H_bar = linalg.expm_grad_batch(tape["w"], tape["Vec"], Uc_bar)
        return self._hbar_to_vbar(tape["dV"], H_bar)

    def control_outputs(self, V: np.ndarray):
        U, tape = self.control_unitary(V)
        if self.mode == "power":
            y = quantum.stack_columns(quantum.born_batch(U))
        else:
            y = interferometric_readout_batch(U)
        return y, tape

    def control_outputs_vjp(self, tape, y_bar: np.ndarray) -> np.ndarray:
        U = tape["U"]
        if self.mode == "power":
            U_bar = quantum.born_vjp(U, quantum.unstack_columns(y_bar))
        else:
            U_bar = interferometric_vjp(U, y_bar)
        return self.control_unitary_vjp(tape, U_bar)

    def _hbar_to_vbar(self, dV: np.ndarray, H_bar: np.ndarray) -> np.ndarray:
        gt = self.gt
        beta_bar = np.real(np.einsum("...ii->...i", H_bar))
        coup_bar = 2.0 * np.real(
            np.stack([H_bar[..., 0, 1], H_bar[..., 1, 2]], axis=-1)
        )
        dV_bar = beta_bar * (np.asarray(gt.dbeta) + 2.0 * np.asarray(gt.dbeta2) * dV)
        s = dV[..., :-1] + dV[..., 1:]
        s_bar = coup_bar * (np.asarray(gt.dc) + 2.0 * np.asarray(gt.dc2) * s)
        dV_bar[..., :-1] += s_bar
        dV_bar[..., 1:] += s_bar
        V_bar = np.zeros((*dV.shape[:-1], N_ELECTRODES))
        V_bar[..., : N_GUIDES] += dV_bar
        V_bar[..., 1:] -= dV_bar
        return V_bar
