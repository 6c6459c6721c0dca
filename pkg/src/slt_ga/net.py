"""Masked feed-forward ReLU networks evaluated in float64 numpy.

Parameters live in two flat vectors. Weight ``i`` is addressed layer-major and,
inside a layer, source-neuron-major, so layer ``l`` is the C-order reshape of
its slice into a ``(fan_in, fan_out)`` matrix and ``h @ W + b`` is the layer
map. A bit mask covers the weight vector only; biases are never masked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import ArchitectureError, ConfigError, EmptyDataError, NumericsError, ShapeError

NAMED_HIDDEN = {
    "A": (20,),
    "B": (75,),
    "C": (100,),
    "D": (50, 50),
}


@dataclass(frozen=True)
class NetworkArch:
    layer_widths: tuple[int, ...]
    relu_inputs: bool = False

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2:
            raise ArchitectureError(f"need at least 2 layers, got {widths}")
        if any(w < 1 for w in widths):
            raise ArchitectureError(f"layer widths must be positive, got {widths}")
        object.__setattr__(self, "layer_widths", widths)

    @classmethod
    def named(cls, code: str, in_width: int, out_width: int) -> "NetworkArch":
        """Expand a single-letter architecture code (A-D)."""
        try:
            hidden = NAMED_HIDDEN[code.upper()]
        except KeyError:
            raise ArchitectureError(f"unknown architecture code {code!r}") from None
        return cls((in_width, *hidden, out_width))

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def in_width(self) -> int:
        return self.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        w = self.layer_widths
        return [(w[i], w[i + 1]) for i in range(self.n_layers)]

    @property
    def weight_count(self) -> int:
        return sum(a * b for a, b in self.layer_shapes)

    @property
    def bias_count(self) -> int:
        return sum(self.layer_widths[1:])

    @property
    def param_count(self) -> int:
        return self.weight_count + self.bias_count

    def weight_slices(self) -> list[slice]:
        out, start = [], 0
        for a, b in self.layer_shapes:
            out.append(slice(start, start + a * b))
            start += a * b
        return out

    def bias_slices(self) -> list[slice]:
        out, start = [], 0
        for w in self.layer_widths[1:]:
            out.append(slice(start, start + w))
            start += w
        return out


@dataclass
class ParamVector:
    arch: NetworkArch
    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        self.biases = np.asarray(self.biases, dtype=np.float64).ravel()
        if self.weights.size != self.arch.weight_count:
            raise ShapeError(f"expected {self.arch.weight_count} weights, got {self.weights.size}")
        if self.biases.size != self.arch.bias_count:
            raise ShapeError(f"expected {self.arch.bias_count} biases, got {self.biases.size}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise NumericsError("parameters must be finite")

    def layers(self, mask: np.ndarray | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield ``(W, b)`` per layer, with ``W`` already multiplied by the mask."""
        w = self.weights if mask is None else self.weights * check_mask(mask, self.arch)
        for (a, b), ws, bs in zip(self.arch.layer_shapes, self.arch.weight_slices(), self.arch.bias_slices()):
            yield w[ws].reshape(a, b), self.biases[bs]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights, self.biases])

    @classmethod
    def from_flat(cls, arch: NetworkArch, vec: np.ndarray) -> "ParamVector":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != arch.param_count:
            raise ShapeError(f"expected {arch.param_count} parameters, got {vec.size}")
        return cls(arch, vec[: arch.weight_count].copy(), vec[arch.weight_count :].copy())

    def apply_mask(self, mask: np.ndarray) -> "ParamVector":
        return ParamVector(self.arch, self.weights * check_mask(mask, self.arch), self.biases.copy())

    def copy(self) -> "ParamVector":
        return ParamVector(self.arch, self.weights.copy(), self.biases.copy())

    def to_json(self) -> dict:
        return {
            "arch": list(self.arch.layer_widths),
            "relu_inputs": self.arch.relu_inputs,
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ParamVector":
        arch = NetworkArch(tuple(doc["arch"]), bool(doc.get("relu_inputs", False)))
        return cls(arch, np.array(doc["weights"], dtype=np.float64), np.array(doc["biases"], dtype=np.float64))


@dataclass(frozen=True)
class EvalMetrics:
    accuracy: float
    cross_entropy: float
    sparsity: float

    def to_json(self) -> dict:
        return {"accuracy": self.accuracy, "cross_entropy": self.cross_entropy, "sparsity": self.sparsity}


# -- initialization schemes ------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    lo: float = -1.0
    hi: float = 1.0


@dataclass(frozen=True)
class KaimingNormalScaled:
    k: float = 1.0


@dataclass(frozen=True)
class SignedKaimingConstantScaled:
    k: float = 1.0


@dataclass(frozen=True)
class GlorotUniform:
    """Per-layer U[-r, r] with r = sqrt(6 / (fan_in + fan_out)), biases included."""


InitScheme = Uniform | KaimingNormalScaled | SignedKaimingConstantScaled | GlorotUniform


def kaiming_std(fan_in: int, k: float) -> float:
    return math.sqrt(2.0 / fan_in) * math.sqrt(1.0 / k)


def init_network(arch: NetworkArch, scheme: InitScheme, seed: int) -> ParamVector:
    rng = np.random.default_rng(seed)
    if isinstance(scheme, Uniform):
        if not scheme.hi >= scheme.lo:
            raise ConfigError(f"empty interval [{scheme.lo}, {scheme.hi}]")
        weights = rng.uniform(scheme.lo, scheme.hi, arch.weight_count)
        biases = rng.uniform(scheme.lo, scheme.hi, arch.bias_count)
        return ParamVector(arch, weights, biases)

    if isinstance(scheme, GlorotUniform):
        ws, bs = [], []
        for a, b in arch.layer_shapes:
            r = math.sqrt(6.0 / (a + b))
            ws.append(rng.uniform(-r, r, a * b))
            bs.append(rng.uniform(-r, r, b))
        return ParamVector(arch, np.concatenate(ws), np.concatenate(bs))

    if isinstance(scheme, (KaimingNormalScaled, SignedKaimingConstantScaled)):
        if not 0 < scheme.k <= 1:
            raise ConfigError(f"scale k must lie in (0, 1], got {scheme.k}")
        ws = []
        for a, b in arch.layer_shapes:
            std = kaiming_std(a, scheme.k)
            if isinstance(scheme, KaimingNormalScaled):
                ws.append(rng.normal(0.0, std, a * b))
            else:
                ws.append(np.where(rng.random(a * b) < 0.5, -std, std))
        return ParamVector(arch, np.concatenate(ws), np.zeros(arch.bias_count))

    raise ConfigError(f"unknown init scheme {scheme!r}")


# -- masks -----------------------------------------------------------------


def check_mask(mask: np.ndarray, arch: NetworkArch) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.shape != (arch.weight_count,):
        raise ShapeError(f"mask of shape {mask.shape} does not cover {arch.weight_count} weights")
    return mask


def ones_mask(arch: NetworkArch) -> np.ndarray:
    return np.ones(arch.weight_count, dtype=bool)


def sparsity(mask: np.ndarray) -> float:
    mask = np.asarray(mask)
    if mask.size == 0:
        return 0.0
    return 1.0 - np.count_nonzero(mask) / mask.size


def mask_to_json(mask: np.ndarray) -> dict:
    bits = np.asarray(mask, dtype=bool)
    return {"bits": np.packbits(bits, bitorder="little").tobytes().hex(), "len": int(bits.size)}


def mask_from_json(doc: dict) -> np.ndarray:
    n = int(doc["len"])
    raw = np.frombuffer(bytes.fromhex(doc["bits"]), dtype=np.uint8)
    return np.unpackbits(raw, count=n, bitorder="little").astype(bool)


# -- evaluation --------------------------------------------------------------


def _inputs(arch: NetworkArch, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != arch.in_width:
        raise ShapeError(f"input of shape {x.shape} does not match input width {arch.in_width}")
    return x


def forward(params: ParamVector, inputs, mask: np.ndarray | None = None) -> np.ndarray:
    """Logits for a batch of input rows; ReLU after every hidden layer."""
    h = _inputs(params.arch, inputs)
    if params.arch.relu_inputs:
        h = np.maximum(h, 0.0)
    last = params.arch.n_layers - 1
    for i, (w, b) in enumerate(params.layers(mask)):
        h = h @ w
        h += b
        if i < last:
            np.maximum(h, 0.0, out=h)
    return h


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _check_data(data) -> tuple[np.ndarray, np.ndarray]:
    if len(data.labels) == 0:
        raise EmptyDataError("dataset has no rows")
    return data.features, data.labels


def accuracy_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    # np.argmax returns the first maximal index, i.e. the lowest class on ties
    return float(np.count_nonzero(np.argmax(logits, axis=1) == labels)) / len(labels)


def cross_entropy_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    lp = log_softmax(logits)
    return float(-lp[np.arange(len(labels)), labels].mean())


def accuracy(params: ParamVector, data, mask: np.ndarray | None = None) -> float:
    x, y = _check_data(data)
    return accuracy_from_logits(forward(params, x, mask), y)


def cross_entropy(params: ParamVector, data, mask: np.ndarray | None = None) -> float:
    x, y = _check_data(data)
    return cross_entropy_from_logits(forward(params, x, mask), y)


def evaluate(params: ParamVector, data, mask: np.ndarray | None = None) -> EvalMetrics:
    x, y = _check_data(data)
    logits = forward(params, x, mask)
    return EvalMetrics(
        accuracy=accuracy_from_logits(logits, y),
        cross_entropy=cross_entropy_from_logits(logits, y),
        sparsity=0.0 if mask is None else sparsity(mask),
    )


def backprop(layers: Sequence[tuple[np.ndarray, np.ndarray]], x: np.ndarray, y: np.ndarray,
             relu_inputs: bool = False) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean cross-entropy and its gradient w.r.t. each layer's (effective) W and b.

    The ReLU derivative at exactly zero is taken as zero.
    """
    h = np.maximum(x, 0.0) if relu_inputs else x
    acts = [h]
    last = len(layers) - 1
    with np.errstate(over="ignore", invalid="ignore"):
        for i, (w, b) in enumerate(layers):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
    logits = acts[-1]
    if not np.all(np.isfinite(logits)):
        raise NumericsError("non-finite activations")

    n = len(y)
    lp = log_softmax(logits)
    loss = float(-lp[np.arange(n), y].mean())
    delta = np.exp(lp)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grads_w: list[np.ndarray] = [None] * len(layers)  # type: ignore[list-item]
    grads_b: list[np.ndarray] = [None] * len(layers)  # type: ignore[list-item]
    for i in range(last, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ layers[i][0].T) * (acts[i] > 0)
    return loss, grads_w, grads_b


def loss_and_gradient(params: ParamVector, data, l2_alpha: float = 0.0,
                      mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Regularized mean cross-entropy and its flat gradient ``[weights, biases]``.

    The objective is ``CE + l2_alpha/2 * ||W||^2`` (biases unregularized). With a
    mask, the gradient is taken w.r.t. the raw weights of the masked network, so
    pruned coordinates receive only the regularizer term times zero.
    """
    x, y = _check_data(data)
    layers = list(params.layers(mask))
    loss, gw, gb = backprop(layers, np.asarray(x, dtype=np.float64), y, params.arch.relu_inputs)
    grad_w = np.concatenate([g.ravel() for g in gw])
    if mask is not None:
        grad_w = grad_w * mask
    if l2_alpha:
        w_eff = params.weights if mask is None else params.weights * mask
        loss += 0.5 * l2_alpha * float(w_eff @ w_eff)
        grad_w = grad_w + l2_alpha * w_eff
    grad = np.concatenate([grad_w, *gb])
    if not np.all(np.isfinite(grad)):
        raise NumericsError("non-finite gradient")
    return loss, grad


def gradient(params: ParamVector, data, l2_alpha: float = 0.0, mask: np.ndarray | None = None) -> np.ndarray:
    return loss_and_gradient(params, data, l2_alpha, mask)[1]
