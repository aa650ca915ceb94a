"""The three device models: graybox, whitebox, blackbox.

All three share one calling convention so training and control code is model
agnostic:

* ``forward(V)`` maps a (B, 4) voltage batch to (outputs, tape),
* ``backward(tape, y_bar, input_grad=...)`` returns the flat parameter
  gradient (summed over the batch) and optionally the voltage gradient,
* ``get_params()`` / ``set_params()`` expose a single float64 vector.

Graybox: network 4->50->100->18 produces Re/Im of a 3x3 matrix A (first 9
outputs = real parts row-major, last 9 = imaginary parts); H = (A + A^dag)/2;
U = exp(-iH); outputs are Born probabilities (power mode, column-stacked) or
the two-angle interferometric intensities.

Whitebox: 20 physical parameters — per-waveguide propagation constants and
voltage sensitivities, per-pair couplings and sensitivities (10 = 4N-2 chip
values), plus two voltage-independent tridiagonal fan Hamiltonians (3 diagonal
+ 2 coupling values each).

Blackbox: plain network straight to the measured outputs; 4->50->100->9 with
three softmax groups of 3 in power mode, 4->50->100->18 with a sigmoid head in
interferometric mode.  No Hamiltonian or unitary access.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import linalg, neural, quantum, simulator
from .errors import (
    ControlOutOfDomain,
    NonFiniteLoss,
    ShapeMismatch,
    UnsupportedModel,
)

DIM = 3
GRAYBOX_LAYERS = (4, 50, 100, 18)
HIDDEN_ACTS = ("tanh", "tanh")

# whitebox parameter vector layout (20 entries)
_WB_SLICES = {
    "beta0": slice(0, 3),
    "dbeta": slice(3, 6),
    "c0": slice(6, 8),
    "dc": slice(8, 10),
    "fan_in_diag": slice(10, 13),
    "fan_in_coupling": slice(13, 15),
    "fan_out_diag": slice(15, 18),
    "fan_out_coupling": slice(18, 20),
}
WB_N_PARAMS = 20


def _as_batch(V: np.ndarray) -> tuple[np.ndarray, bool]:
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        return V[None, :], True
    return V, False


def _check_domain(V: np.ndarray) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if V.shape[-1] != simulator.N_ELECTRODES:
        raise ShapeMismatch(f"expected 4 voltages, got shape {V.shape}")
    if np.any(np.abs(V) > 1.0) or not np.all(np.isfinite(V)):
        raise ControlOutOfDomain("voltages outside [-1,1]")
    return V


def _outputs_from_unitary(U: np.ndarray, mode: str) -> np.ndarray:
    if mode == "power":
        return quantum.stack_columns(quantum.born_batch(U))
    return simulator.interferometric_readout_batch(U)


def _unitary_bar(U: np.ndarray, y_bar: np.ndarray, mode: str) -> np.ndarray:
    if mode == "power":
        return quantum.born_vjp(U, quantum.unstack_columns(y_bar))
    return simulator.interferometric_vjp(U, y_bar)


def output_dim(mode: str) -> int:
    if mode == "power":
        return DIM * DIM
    if mode == "interferometric":
        return 2 * DIM * DIM
    raise ShapeMismatch(f"unknown mode {mode!r}")


class GrayboxModel:
    """Network-parameterized Hamiltonian composed with fixed physics layers."""

    kind = "graybox"
    has_unitary_access = True

    def __init__(self, weights: neural.MlpWeights, mode: str = "power", seed: int = 0,
                 trained: bool = False):
        self.spec = neural.MlpSpec(GRAYBOX_LAYERS, (*HIDDEN_ACTS, "linear"))
        self.weights = weights
        self.mode = mode
        self.dim = DIM
        self.seed = seed
        self.trained = trained
        output_dim(mode)

    @classmethod
    def create(cls, mode: str = "power", seed: int = 0) -> "GrayboxModel":
        spec = neural.MlpSpec(GRAYBOX_LAYERS, (*HIDDEN_ACTS, "linear"))
        return cls(neural.init_weights(spec, seed), mode=mode, seed=seed)

    @property
    def n_params(self) -> int:
        return self.spec.n_params

    def get_params(self) -> np.ndarray:
        return self.weights.to_vector()

    def set_params(self, vec: np.ndarray) -> None:
        self.weights = neural.MlpWeights.from_vector(self.spec, vec)

    def forward(self, V: np.ndarray):
        net, mlp_tape = neural.mlp_forward(self.weights, self.spec, V)
        B = net.shape[0]
        A = net[:, :9].reshape(B, DIM, DIM) + 1j * net[:, 9:].reshape(B, DIM, DIM)
        H = quantum.hermitianize(A)
        U, w, Vec = linalg.expm_batch(H)
        y = _outputs_from_unitary(U, self.mode)
        tape = {"mlp": mlp_tape, "H": H, "U": U, "w": w, "Vec": Vec}
        return y, tape

    def backward(self, tape, y_bar: np.ndarray, input_grad: bool = False):
        U_bar = _unitary_bar(tape["U"], y_bar, self.mode)
        # A -> (A+A^dag)/2 is self-adjoint, and the expm adjoint is already
        # Hermitian-projected, so H_bar doubles as A_bar.
        A_bar = linalg.expm_grad_batch(tape["w"], tape["Vec"], U_bar)
        B = A_bar.shape[0]
        net_bar = np.concatenate(
            [A_bar.real.reshape(B, 9), A_bar.imag.reshape(B, 9)], axis=1
        )
        return neural.mlp_backward(
            self.weights, self.spec, tape["mlp"], net_bar, input_grad=input_grad
        )

    def predict_outputs(self, V: np.ndarray) -> np.ndarray:
        return self.forward(np.asarray(V, dtype=float))[0]

    # -- controller hooks ---------------------------------------------------

    def is_trained(self) -> bool:
        return self.trained

    def parameter_hash(self) -> str:
        return parameter_hash(self)

    def control_outputs(self, V: np.ndarray):
        return self.forward(V)

    def control_outputs_vjp(self, tape, y_bar: np.ndarray) -> np.ndarray:
        return self.backward(tape, y_bar, input_grad=True)[1]

    def control_unitary(self, V: np.ndarray):
        _, tape = self.forward(V)
        return tape["U"], tape

    def control_unitary_vjp(self, tape, U_bar: np.ndarray) -> np.ndarray:
        A_bar = linalg.expm_grad_batch(tape["w"], tape["Vec"], U_bar)
        B = A_bar.shape[0]
        net_bar = np.concatenate(
            [A_bar.real.reshape(B, 9), A_bar.imag.reshape(B, 9)], axis=1
        )
        return neural.mlp_backward(
            self.weights, self.spec, tape["mlp"], net_bar, input_grad=True
        )[1]


class WhiteboxModel:
    """Fully parametric tridiagonal waveguide model with fan unitaries."""

    kind = "whitebox"
    has_unitary_access = True

    def __init__(self, params: np.ndarray, mode: str = "power", seed: int = 0,
                 trained: bool = False):
        params = np.asarray(params, dtype=float)
        if params.shape != (WB_N_PARAMS,):
            raise ShapeMismatch(f"whitebox takes {WB_N_PARAMS} parameters, got {params.shape}")
        self.params = params.copy()
        self.mode = mode
        self.dim = DIM
        self.seed = seed
        self.trained = trained
        output_dim(mode)

    @classmethod
    def create(cls, mode: str = "power", seed: int = 0) -> "WhiteboxModel":
        # near-physical start: unit couplings, small sensitivities, identity fans
        p = np.zeros(WB_N_PARAMS)
        p[_WB_SLICES["c0"]] = 1.0
        p[_WB_SLICES["dbeta"]] = 0.1
        p[_WB_SLICES["dc"]] = 0.1
        p += np.random.default_rng(seed).uniform(-0.01, 0.01, WB_N_PARAMS)
        return cls(p, mode=mode, seed=seed)

    @property
    def n_params(self) -> int:
        return WB_N_PARAMS

    def get_params(self) -> np.ndarray:
        return self.params.copy()

    def set_params(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (WB_N_PARAMS,):
            raise ShapeMismatch(f"expected {WB_N_PARAMS} parameters, got {vec.shape}")
        self.params = vec.copy()

    def _field(self, name: str) -> np.ndarray:
        return self.params[_WB_SLICES[name]]

    def chip_hamiltonian(self, V: np.ndarray) -> np.ndarray:
        dV = simulator.delta_v(V)
        beta = self._field("beta0") + self._field("dbeta") * dV
        coup = self._field("c0") + self._field("dc") * (dV[..., :-1] + dV[..., 1:])
        return simulator._tridiagonal(beta, coup)

    def forward(self, V: np.ndarray):
        V = np.asarray(V, dtype=float)
        dV = simulator.delta_v(V)
        H = self.chip_hamiltonian(V)
        U_chip, w, Vec = linalg.expm_batch(H)
        Hi = simulator._tridiagonal(self._field("fan_in_diag"), self._field("fan_in_coupling"))
        Ho = simulator._tridiagonal(self._field("fan_out_diag"), self._field("fan_out_coupling"))
        (Ui, wi, Vi) = linalg.expm_batch(Hi)
        (Uo, wo, Vo) = linalg.expm_batch(Ho)
        U = Uo @ U_chip @ Ui
        y = _outputs_from_unitary(U, self.mode)
        tape = {
            "dV": dV, "H": H, "U_chip": U_chip, "w": w, "Vec": Vec,
            "Ui": Ui, "wi": wi, "Vi": Vi, "Uo": Uo, "wo": wo, "Vo": Vo, "U": U,
        }
        return y, tape

    def backward(self, tape, y_bar: np.ndarray, input_grad: bool = False):
        U_bar = _unitary_bar(tape["U"], y_bar, self.mode)
        return self._unitary_backward(tape, U_bar, input_grad)

    def _unitary_backward(self, tape, U_bar: np.ndarray, input_grad: bool):
        Ui, Uo, U_chip = tape["Ui"], tape["Uo"], tape["U_chip"]
        Uc_bar = Uo.conj().T @ U_bar @ Ui.conj().T
        # fans are shared across the batch: accumulate their adjoints
        Ui_bar = np.einsum("bji,bjk->ik", (Uo @ U_chip).conj(), U_bar)
        Uo_bar = np.einsum("bik,bjk->ij", U_bar, (U_chip @ Ui).conj())
        H_bar = linalg.expm_grad_batch(tape["w"], tape["Vec"], Uc_bar)
        beta_bar = np.real(np.einsum("...ii->...i", H_bar))
        coup_bar = 2.0 * np.real(np.stack([H_bar[..., 0, 1], H_bar[..., 1, 2]], axis=-1))
        dV = tape["dV"]
        s = dV[..., :-1] + dV[..., 1:]
        g = np.zeros(WB_N_PARAMS)
        g[_WB_SLICES["beta0"]] = beta_bar.sum(axis=0)
        g[_WB_SLICES["dbeta"]] = (beta_bar * dV).sum(axis=0)
        g[_WB_SLICES["c0"]] = coup_bar.sum(axis=0)
        g[_WB_SLICES["dc"]] = (coup_bar * s).sum(axis=0)
        Hi_bar = linalg.expm_grad_batch(tape["wi"], tape["Vi"], Ui_bar)
        Ho_bar = linalg.expm_grad_batch(tape["wo"], tape["Vo"], Uo_bar)
        for mat_bar, dname, cname in (
            (Hi_bar, "fan_in_diag", "fan_in_coupling"),
            (Ho_bar, "fan_out_diag", "fan_out_coupling"),
        ):
            g[_WB_SLICES[dname]] = np.real(np.diagonal(mat_bar))
            g[_WB_SLICES[cname]] = 2.0 * np.real(
                np.array([mat_bar[0, 1], mat_bar[1, 2]])
            )
        if not input_grad:
            return g
        dV_bar = beta_bar * self._field("dbeta")
        s_bar = coup_bar * self._field("dc")
        dV_bar[..., :-1] += s_bar
        dV_bar[..., 1:] += s_bar
        V_bar = np.zeros((*dV.shape[:-1], simulator.N_ELECTRODES))
        V_bar[..., :DIM] += dV_bar
        V_bar[..., 1:] -= dV_bar
        return g, V_bar

    def predict_outputs(self, V: np.ndarray) -> np.ndarray:
        return self.forward(np.asarray(V, dtype=float))[0]

    # -- controller hooks ---------------------------------------------------

    def is_trained(self) -> bool:
        return self.trained

    def parameter_hash(self) -> str:
        return parameter_hash(self)

    def control_outputs(self, V: np.ndarray):
        return self.forward(V)

    def control_outputs_vjp(self, tape, y_bar: np.ndarray) -> np.ndarray:
        return self.backward(tape, y_bar, input_grad=True)[1]

    def control_unitary(self, V: np.ndarray):
        _, tape = self.forward(V)
        return tape["U"], tape

    def control_unitary_vjp(self, tape, U_bar: np.ndarray) -> np.ndarray:
        return self._unitary_backward(tape, U_bar, input_grad=True)[1]


class BlackboxModel:
    """Generic network from voltages straight to outputs; no physics inside."""

    kind = "blackbox"
    has_unitary_access = False

    def __init__(self, weights: neural.MlpWeights, mode: str = "power", seed: int = 0,
                 trained: bool = False):
        self.spec = self._spec_for(mode)
        self.weights = weights
        self.mode = mode
        self.dim = DIM
        self.seed = seed
        self.trained = trained

    @staticmethod
    def _spec_for(mode: str) -> neural.MlpSpec:
        if mode == "power":
            return neural.MlpSpec((4, 50, 100, 9), (*HIDDEN_ACTS, "softmax_group"),
                                  softmax_group_size=DIM)
        if mode == "interferometric":
            return neural.MlpSpec((4, 50, 100, 18), (*HIDDEN_ACTS, "sigmoid"))
        raise ShapeMismatch(f"unknown mode {mode!r}")

    @classmethod
    def create(cls, mode: str = "power", seed: int = 0) -> "BlackboxModel":
        spec = cls._spec_for(mode)
        return cls(neural.init_weights(spec, seed), mode=mode, seed=seed)

    @property
    def n_params(self) -> int:
        return self.spec.n_params

    def get_params(self) -> np.ndarray:
        return self.weights.to_vector()

    def set_params(self, vec: np.ndarray) -> None:
        self.weights = neural.MlpWeights.from_vector(self.spec, vec)

    def forward(self, V: np.ndarray):
        y, mlp_tape = neural.mlp_forward(self.weights, self.spec, V)
        return y, {"mlp": mlp_tape}

    def backward(self, tape, y_bar: np.ndarray, input_grad: bool = False):
        return neural.mlp_backward(self.weights, self.spec, tape["mlp"], y_bar,
                                   input_grad=input_grad)

    def predict_outputs(self, V: np.ndarray) -> np.ndarray:
        return self.forward(np.asarray(V, dtype=float))[0]

    def is_trained(self) -> bool:
        return self.trained

    def parameter_hash(self) -> str:
        return parameter_hash(self)

    def control_outputs(self, V: np.ndarray):
        return self.forward(V)

    def control_outputs_vjp(self, tape, y_bar: np.ndarray) -> np.ndarray:
        return self.backward(tape, y_bar, input_grad=True)[1]


Model = GrayboxModel | WhiteboxModel | BlackboxModel


def create_model(kind: str, mode: str = "power", seed: int = 0) -> Model:
    try:
        cls = {"graybox": GrayboxModel, "whitebox": WhiteboxModel,
               "blackbox": BlackboxModel}[kind]
    except KeyError:
        raise UnsupportedModel(f"unknown model kind {kind!r}") from None
    return cls.create(mode=mode, seed=seed)


# -- single-control-vector prediction entry points ----------------------------

def graybox_predict(model: GrayboxModel, V: np.ndarray):
    """(H, U, y) at one voltage setting; validates the control domain."""
    V = _check_domain(V)
    y, tape = model.forward(V[None, :])
    return tape["H"][0], tape["U"][0], y[0]


def whitebox_predict(model: WhiteboxModel, V: np.ndarray):
    """(H_chip, U_total, y) at one voltage setting; validates the control domain."""
    V = _check_domain(V)
    y, tape = model.forward(V[None, :])
    return tape["H"][0], tape["U"][0], y[0]


def blackbox_predict(model: BlackboxModel, V: np.ndarray) -> np.ndarray:
    V = _check_domain(V)
    return model.predict_outputs(V[None, :])[0]


def predict_hamiltonian(model: Model, V: np.ndarray) -> np.ndarray:
    """Model's Hamiltonian at V (graybox: hermitianized net output; whitebox: chip H)."""
    if model.kind == "graybox":
        return graybox_predict(model, V)[0]
    if model.kind == "whitebox":
        return whitebox_predict(model, V)[0]
    raise UnsupportedModel("blackbox exposes no Hamiltonian")


# -- training -----------------------------------------------------------------

@dataclass
class TrainConfig:
    """batch_size=None runs full-batch (one gradient step per iteration)."""

    iterations: int = 3000
    learning_rate: float = 0.003
    seed: int = 0
    batch_size: int | None = 32


@dataclass
class TrainReport:
    """Learning curves and the final parameters.

    train_mse[i] is the running mean of minibatch losses during epoch i (the
    quantity a stochastic trainer actually logs); test_mse[i] is the full test
    MSE at the end of epoch i.  final_train_mse / final_test_mse re-evaluate
    both sets at the final parameters.
    """

    train_mse: np.ndarray
    test_mse: np.ndarray
    final_params: np.ndarray
    wall_seconds: float
    seed: int
    final_train_mse: float = field(default=np.nan)
    final_test_mse: float = field(default=np.nan)


def _check_dataset(model: Model, ds: simulator.Dataset) -> None:
    if ds.mode != model.mode:
        raise ShapeMismatch(f"dataset mode {ds.mode!r} != model mode {model.mode!r}")
    if ds.outputs.shape[-1] != output_dim(model.mode):
        raise ShapeMismatch(
            f"dataset outputs have {ds.outputs.shape[-1]} coords, "
            f"model expects {output_dim(model.mode)}"
        )


def evaluate_model(model: Model, ds: simulator.Dataset) -> float:
    """Mean squared error over all examples and output coordinates."""
    _check_dataset(model, ds)
    y = model.predict_outputs(ds.voltages)
    return float(np.mean((y - ds.outputs) ** 2))


def train_model(
    model: Model,
    train_set: simulator.Dataset,
    test_set: simulator.Dataset,
    config: TrainConfig | None = None,
) -> TrainReport:
    """Adam on the MSE.  With a batch size, one iteration is one shuffled
    epoch; with batch_size=None, one iteration is a single full-batch step."""
    config = config or TrainConfig()
    _check_dataset(model, train_set)
    _check_dataset(model, test_set)
    X, T = train_set.voltages, train_set.outputs
    n = X.shape[0]
    batch = n if config.batch_size is None else max(1, min(config.batch_size, n))
    params = model.get_params()
    adam = neural.init_adam(params.size, config.learning_rate)
    shuffle = np.random.default_rng([5, config.seed])
    train_curve = np.empty(config.iterations)
    test_curve = np.empty(config.iterations)
    t0 = time.perf_counter()
    for it in range(config.iterations):
        perm = shuffle.permutation(n)
        sq_sum = 0.0
        for lo in range(0, n, batch):
            sel = perm[lo:lo + batch]
            y, tape = model.forward(X[sel])
            err = y - T[sel]
            sq = float(np.sum(err**2))
            if not np.isfinite(sq):
                raise NonFiniteLoss(f"training loss became non-finite at epoch {it}")
            sq_sum += sq
            grad = model.backward(tape, 2.0 * err / err.size)
            params, adam = neural.adam_step(adam, params, grad)
            model.set_params(params)
        train_curve[it] = sq_sum / T.size
        test_curve[it] = evaluate_model(model, test_set)
    model.trained = True
    return TrainReport(
        train_mse=train_curve,
        test_mse=test_curve,
        final_params=params.copy(),
        wall_seconds=time.perf_counter() - t0,
        seed=config.seed,
        final_train_mse=evaluate_model(model, train_set),
        final_test_mse=evaluate_model(model, test_set),
    )


# -- persistence ----------------------------------------------------------

def parameter_hash(model: Model) -> str:
    """sha256 over the raw parameter bytes plus identifying metadata."""
    h = hashlib.sha256()
    h.update(f"{model.kind}:{model.mode}:".encode())
    h.update(np.ascontiguousarray(model.get_params()).tobytes())
    return h.hexdigest()


def save_checkpoint(model: Model, path) -> None:
    doc = {
        "architecture": model.kind,
        "mode": model.mode,
        "dim": model.dim,
        "seed": model.seed,
        "trained": model.trained,
        "parameters": list(model.get_params()),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> Model:
    with open(path) as fh:
        doc = json.load(fh)
    kind = doc["architecture"]
    if kind not in ("graybox", "whitebox", "blackbox"):
        raise UnsupportedModel(f"unknown architecture {kind!r}")
    model = create_model(kind, mode=doc["mode"], seed=doc["seed"])
    model.set_params(np.asarray(doc["parameters"], dtype=float))
    model.trained = bool(doc["trained"])
    return model


def save_curves(report: TrainReport, path) -> None:
    """Learning curves as CSV: iteration, train_mse, test_mse."""
    with open(path, "w") as fh:
        fh.write("iteration,train_mse,test_mse\n")
        for i, (a, b) in enumerate(zip(report.train_mse, report.test_mse)):
            fh.write(f"{i},{float(a)!r},{float(b)!r}\n")
