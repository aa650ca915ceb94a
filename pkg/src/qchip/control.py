"""Gradient-based controllers on top of a frozen, trained model.

Two tasks: find voltages whose predicted output distribution matches a target
(squared-error objective), or whose predicted unitary maximizes gate fidelity
against a target gate.  The voltage box [-1,1]^4 is enforced by the smooth
reparameterization V = tanh(w) (plus a terminal clamp that closes the
interval), so the inner optimizer is plain unconstrained Adam.  Each call runs
a batch of seeded restarts in parallel and reports the best.

Model parameters are never touched; a parameter hash taken before the run is
re-checked afterwards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import neural, quantum, simulator
from .errors import (
    ModelNotTrained,
    NotUnitary,
    ShapeMismatch,
    UnsupportedModel,
)

#: objective level treated as "target reached"
CONVERGED_TOL = 1e-6
#: minimum improvement of the pooled best objective over the trailing window
#: for an unconverged run to still count as "improving"
STALL_WINDOW = 100
STALL_TOL = 1e-9


@dataclass(frozen=True)
class ControllerConfig:
    restarts: int = 10
    iterations: int = 500
    learning_rate: float = 0.05
    seed: int = 0


@dataclass
class TargetSpec:
    """A control target: 3x3 probability matrix or 3x3 unitary."""

    kind: str  # "distribution" | "unitary"
    payload: np.ndarray
    provenance: str = "reachable-sampled"

    def __post_init__(self):
        self.payload = np.asarray(self.payload)
        if self.kind == "distribution":
            quantum.validate_probability_matrix(self.payload.real, tol=1e-6)
        elif self.kind == "unitary":
            from . import linalg

            if linalg.unitarity_defect(self.payload) > 1e-8:
                raise NotUnitary("target payload is not unitary")
        else:
            raise ShapeMismatch(f"unknown target kind {self.kind!r}")


@dataclass
class ControlResult:
    """Outcome of one controller run.

    For distribution targets the objective is the summed squared output error
    (lower is better); for unitary targets it is the gate fidelity (higher is
    better).  achieved_objective is the same quantity evaluated on the true
    simulator at V_star; NaN until a ground truth is supplied.
    """

    V_star: np.ndarray
    predicted_objective: float
    achieved_objective: float
    restarts_used: int
    converged: bool


def _require_ready(model, need_unitary: bool) -> str:
    if need_unitary and not getattr(model, "has_unitary_access", False):
        raise UnsupportedModel(
            f"{model.kind} provides no unitary access; use graybox or whitebox"
        )
    if not model.is_trained():
        raise ModelNotTrained(f"{model.kind} model has not been trained")
    return model.parameter_hash()


def _initial_w(config: ControllerConfig) -> np.ndarray:
    rng = np.random.default_rng([4, config.seed])
    return np.arctanh(rng.uniform(-0.95, 0.95, size=(config.restarts, simulator.N_ELECTRODES)))


def _finish(model, frozen_hash: str, V_best, best_obj, best_hist, config,
            maximize: bool) -> ControlResult:
    if model.parameter_hash() != frozen_hash:
        raise ModelNotTrained("model parameters changed during control run")
    improving = (
        len(best_hist) > STALL_WINDOW
        and best_hist[-STALL_WINDOW - 1] - best_hist[-1] > STALL_TOL
    )
    converged = bool(best_obj <= CONVERGED_TOL or improving)
    predicted = 1.0 - best_obj if maximize else best_obj
    return ControlResult(
        V_star=np.clip(V_best, -1.0, 1.0),
        predicted_objective=float(predicted),
        achieved_objective=float("nan"),
        restarts_used=config.restarts,
        converged=converged,
    )


def _run_descent(model, config: ControllerConfig, objective) -> tuple[np.ndarray, float, list]:
    """Adam descent on w for a batched objective(V) -> (per-restart obj, V_bar)."""
    w = _initial_w(config)
    adam = neural.init_adam(w.size, config.learning_rate)
    best_obj = np.full(config.restarts, np.inf)
    best_V = np.tanh(w)
    best_hist = []
    for _ in range(config.iterations + 1):
        V = np.tanh(w)
        obj, V_bar = objective(V)
        improved = obj < best_obj
        best_obj = np.where(improved, obj, best_obj)
        best_V = np.where(improved[:, None], V, best_V)
        best_hist.append(float(best_obj.min()))
        w_bar = V_bar * (1.0 - V**2)
        flat, adam = neural.adam_step(adam, w.ravel(), w_bar.ravel())
        w = flat.reshape(w.shape)
    k = int(np.argmin(best_obj))
    return best_V[k], float(best_obj[k]), best_hist


def optimize_output(model, target: np.ndarray, config: ControllerConfig | None = None,
                    gt: simulator.ChipGroundTruth | None = None) -> ControlResult:
    """Voltages minimizing the squared error to a target output distribution."""
    config = config or ControllerConfig()
    target = np.asarray(target, dtype=float)
    if target.shape == (simulator.N_GUIDES, simulator.N_GUIDES):
        y_d = quantum.stack_columns(target)
    else:
        y_d = target
    if model.mode != "power":
        raise UnsupportedModel(
            "output control drives measured power distributions; model must be power-mode"
        )
    if y_d.shape != (simulator.N_GUIDES**2,):
        raise ShapeMismatch(f"target has shape {target.shape}")
    quantum.validate_probability_matrix(quantum.unstack_columns(y_d), tol=1e-6)
    frozen = _require_ready(model, need_unitary=False)

    def objective(V):
        y, tape = model.control_outputs(V)
        err = y - y_d
        obj = np.sum(err**2, axis=1)
        V_bar = model.control_outputs_vjp(tape, 2.0 * err)
        return obj, V_bar

    V_best, best_obj, hist = _run_descent(model, config, objective)
    result = _finish(model, frozen, V_best, best_obj, hist, config, maximize=False)
    if gt is not None:
        y_true = quantum.stack_columns(
            quantum.born_batch(simulator.ground_truth_unitary(gt, result.V_star))
        )
        result.achieved_objective = float(np.sum((y_true - y_d) ** 2))
    return result


def optimize_unitary(model, target: np.ndarray, config: ControllerConfig | None = None,
                     gt: simulator.ChipGroundTruth | None = None) -> ControlResult:
    """Voltages maximizing gate fidelity of the model's unitary against a target gate."""
    from . import linalg

    config = config or ControllerConfig()
    W = np.asarray(target, dtype=complex)
    if linalg.unitarity_defect(W) > 1e-8:
        raise NotUnitary("target gate is not unitary")
    frozen = _require_ready(model, need_unitary=True)

    def objective(V):
        U, tape = model.control_unitary(V)
        F, U_bar = quantum.gate_fidelity_and_grad(U, W)
        V_bar = model.control_unitary_vjp(tape, -U_bar)  # minimize 1 - F
        return 1.0 - F, V_bar

    V_best, best_obj, hist = _run_descent(model, config, objective)
    result = _finish(model, frozen, V_best, best_obj, hist, config, maximize=True)
    if gt is not None:
        U_true = simulator.ground_truth_unitary(gt, result.V_star)
        result.achieved_objective = quantum.gate_fidelity(U_true, W)
    return result


def haar_random_unitary(n: int, seed: int) -> np.ndarray:
    """Haar-distributed unitary via QR of a complex Gaussian matrix."""
    rng = np.random.default_rng([6, seed])
    Z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    Q, R = np.linalg.qr(Z)
    return Q * (np.diagonal(R) / np.abs(np.diagonal(R))).conj()


def sample_reachable_target(gt: simulator.ChipGroundTruth, kind: str, seed: int,
                            index: int = 0) -> TargetSpec:
    """Target realized by the true device at a random admissible voltage."""
    rng = simulator._example_rng(seed, "control", index)
    V = rng.uniform(-1.0, 1.0, simulator.N_ELECTRODES)
    U = simulator.ground_truth_unitary(gt, V)
    if kind == "unitary":
        return TargetSpec("unitary", U)
    if kind == "distribution":
        return TargetSpec("distribution", quantum.born_batch(U))
    raise ShapeMismatch(f"unknown target kind {kind!r}")


@dataclass
class ControlReport:
    """Per-target controller outcomes plus Table-style summary statistics."""

    rows: list  # dicts: target_id, kind, model, predicted_objective, achieved_fidelity, achieved_mse, restarts_used
    summary: dict  # mean / min / fraction_gt_99 over achieved fidelities


def evaluate_controls(gt: simulator.ChipGroundTruth, results: list, targets: list,
                      model_kind: str = "") -> ControlReport:
    """Score found controls on the true simulator: fidelity and MSE per target."""
    if len(results) != len(targets):
        raise ShapeMismatch(f"{len(results)} results vs {len(targets)} targets")
    rows = []
    fids = []
    for tid, (res, tgt) in enumerate(zip(results, targets)):
        U_true = simulator.ground_truth_unitary(gt, res.V_star)
        if tgt.kind == "distribution":
            P_true = quantum.born_batch(U_true)
            fid = quantum.distribution_fidelity_avg(P_true, tgt.payload.real)
            mse = float(np.mean((P_true - tgt.payload.real) ** 2))
            res.achieved_objective = float(np.sum((P_true - tgt.payload.real) ** 2))
        else:
            fid = quantum.gate_fidelity(U_true, tgt.payload)
            res.achieved_objective = fid
            P_true = quantum.born_batch(U_true)
            mse = float(np.mean((P_true - quantum.born_batch(tgt.payload)) ** 2))
        fids.append(fid)
        rows.append({
            "target_id": tid,
            "kind": tgt.kind,
            "model": model_kind,
            "predicted_objective": res.predicted_objective,
            "achieved_fidelity": fid,
            "achieved_mse": mse,
            "restarts_used": res.restarts_used,
        })
    fids = np.asarray(fids) if fids else np.zeros(0)
    summary = {
        "n_targets": len(rows),
        "model": model_kind,
        "mean_fidelity": float(fids.mean()) if fids.size else float("nan"),
        "min_fidelity": float(fids.min()) if fids.size else float("nan"),
        "fraction_gt_99": float(np.mean(fids > 0.99)) if fids.size else float("nan"),
    }
    return ControlReport(rows, summary)


def write_control_csv(report: ControlReport, path) -> None:
    cols = ["target_id", "kind", "model", "predicted_objective",
            "achieved_fidelity", "achieved_mse", "restarts_used"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in report.rows:
            fh.write(",".join(
                repr(float(row[c])) if isinstance(row[c], float) else str(row[c])
                for c in cols
            ) + "\n")


def write_control_summary(report: ControlReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.summary, fh, sort_keys=True)
        fh.write("\n")
