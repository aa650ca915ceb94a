"""Minimal fully connected network with hand-written reverse-mode gradients.

Supports exactly the architectures this project needs: tanh / linear /
sigmoid heads plus a grouped-softmax head that emits several concatenated
probability distributions.  Parameters live in a single flat float64 vector
(per layer: weight matrix row-major, then bias) so the whole model can be fed
to one Adam state.

Forward and backward accept a single input vector or a (B, n_in) batch; with
a batch the returned parameter gradient is summed over the batch (callers
fold any 1/B normalization into the upstream signal).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ShapeMismatch

ACTIVATIONS = ("tanh", "linear", "sigmoid", "softmax_group")


@dataclass(frozen=True)
class MlpSpec:
    """Architecture description: layer sizes plus one activation per non-input layer."""

    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]
    softmax_group_size: int | None = None

    def __post_init__(self):
        if len(self.layer_sizes) < 2 or any(s <= 0 for s in self.layer_sizes):
            raise ShapeMismatch(f"bad layer sizes {self.layer_sizes}")
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ShapeMismatch("need one activation per non-input layer")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ShapeMismatch(f"unknown activation {act!r}")
        if "softmax_group" in self.activations:
            if self.softmax_group_size is None:
                raise ShapeMismatch("softmax_group requires softmax_group_size")
            if self.layer_sizes[-1] % self.softmax_group_size != 0:
                raise ShapeMismatch("output size not divisible by softmax_group_size")

    @property
    def n_params(self) -> int:
        sizes = self.layer_sizes
        return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))


@dataclass
class MlpWeights:
    """Weight matrices (out x in) and bias vectors, one pair per layer."""

    matrices: list[np.ndarray]
    biases: list[np.ndarray]

    def to_vector(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.matrices, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, spec: MlpSpec, vec: np.ndarray) -> "MlpWeights":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (spec.n_params,):
            raise ShapeMismatch(f"expected {spec.n_params} parameters, got {vec.shape}")
        matrices, biases = [], []
        pos = 0
        sizes = spec.layer_sizes
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            matrices.append(vec[pos : pos + n_in * n_out].reshape(n_out, n_in).copy())
            pos += n_in * n_out
            biases.append(vec[pos : pos + n_out].copy())
            pos += n_out
        return cls(matrices, biases)


def init_weights(spec: MlpSpec, seed: int) -> MlpWeights:
    """Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = np.random.default_rng(seed)
    matrices, biases = [], []
    for n_in, n_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        matrices.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpWeights(matrices, biases)


def _softmax_groups(z: np.ndarray, group: int) -> np.ndarray:
    shape = z.shape
    zg = z.reshape(*shape[:-1], -1, group)
    zg = zg - zg.max(axis=-1, keepdims=True)  # overflow guard
    e = np.exp(zg)
    return (e / e.sum(axis=-1, keepdims=True)).reshape(shape)


def _apply_activation(z: np.ndarray, act: str, spec: MlpSpec) -> np.ndarray:
    if act == "tanh":
        return np.tanh(z)
    if act == "linear":
        return z
    if act == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return _softmax_groups(z, spec.softmax_group_size)


def mlp_forward(weights: MlpWeights, spec: MlpSpec, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Run the network; returns (output, tape) where the tape caches every layer activation."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.ndim != 2 or a.shape[1] != spec.layer_sizes[0]:
        raise ShapeMismatch(f"input shape {x.shape} incompatible with input size {spec.layer_sizes[0]}")
    tape = [a]
    for W, b, act in zip(weights.matrices, weights.biases, spec.activations):
        a = _apply_activation(a @ W.T + b, act, spec)
        tape.append(a)
    return (a[0] if single else a), tape


def mlp_backward(
    weights: MlpWeights,
    spec: MlpSpec,
    tape: list,
    upstream: np.ndarray,
    input_grad: bool = False,
) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Reverse-mode gradient of sum(upstream * output) in the flat parameter layout.

    With input_grad=True also returns the gradient with respect to the network
    input (needed when optimizing over control voltages).
    """
    upstream = np.asarray(upstream, dtype=float)
    single = upstream.ndim == 1
    da = upstream[None, :] if single else upstream
    if da.shape != tape[-1].shape:
        raise ShapeMismatch(f"upstream shape {upstream.shape} does not match output {tape[-1].shape}")
    grads_W: list[np.ndarray] = []
    grads_b: list[np.ndarray] = []
    for layer in range(len(weights.matrices) - 1, -1, -1):
        a_out = tape[layer + 1]
        act = spec.activations[layer]
        if act == "tanh":
            dz = da * (1.0 - a_out**2)
        elif act == "linear":
            dz = da
        elif act == "sigmoid":
            dz = da * a_out * (1.0 - a_out)
        else:  # softmax_group: dz_g = y_g * (da_g - <da_g, y_g>)
            g = spec.softmax_group_size
            yg = a_out.reshape(a_out.shape[0], -1, g)
            dag = da.reshape(da.shape[0], -1, g)
            dot = np.sum(dag * yg, axis=-1, keepdims=True)
            dz = (yg * (dag - dot)).reshape(da.shape)
        a_in = tape[layer]
        grads_W.append(dz.T @ a_in)
        grads_b.append(dz.sum(axis=0))
        da = dz @ weights.matrices[layer]
    parts = []
    for gW, gb in zip(reversed(grads_W), reversed(grads_b)):
        parts.append(gW.ravel())
        parts.append(gb)
    flat = np.concatenate(parts)
    if not input_grad:
        return flat
    dx = da[0] if single else da
    return flat, dx


@dataclass
class AdamState:
    """Adam accumulators; ``step`` counts completed updates."""

    learning_rate: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))


def init_adam(n_params: int, learning_rate: float = 0.003) -> AdamState:
    return AdamState(learning_rate=learning_rate, m=np.zeros(n_params), v=np.zeros(n_params))


def adam_step(
    state: AdamState, params: np.ndarray, grads: np.ndarray
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns fresh (params, state)."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ShapeMismatch(
            f"params {params.shape}, grads {grads.shape}, moments {state.m.shape} must agree"
        )
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads**2
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_params, replace(state, step=t, m=m, v=v)
