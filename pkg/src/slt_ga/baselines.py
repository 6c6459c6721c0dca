"""Comparison systems: minibatch backpropagation and edge-popup score search."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import net
from .datasets import Dataset, round_half_up
from .errors import ConfigError, NumericsError

SOLVERS = ("sgd", "adam")
SCHEDULES = ("constant", "adaptive")
EP_INITS = ("uniform", "kaiming_normal", "signed_kaiming_constant")

INIT_STREAM = 0x11
SHUFFLE_STREAM = 0x5F
SCORE_STREAM = 0x5C


def _from_json(cls, doc: dict):
    unknown = set(doc) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**doc)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


# -- backpropagation -----------------------------------------------------------


@dataclass
class BackpropConfig:
    solver: str = "adam"
    lr_schedule: str = "constant"
    lr_init: float = 0.001
    epsilon: float = 1e-8
    batch_size: int = 200
    alpha: float = 1e-4
    momentum: float = 0.9
    nesterov: bool = False
    epochs: int = 1000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    tol: float = 1e-4
    init: str = "glorot"

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}")
        if self.lr_schedule not in SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {SCHEDULES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.alpha < 0 or self.lr_init < 0:
            raise ConfigError("alpha and lr_init must be >= 0")
        if self.init not in ("glorot", "uniform"):
            raise ConfigError(f"unknown init {self.init!r}")

    to_json = asdict

    @classmethod
    def from_json(cls, doc: dict) -> "BackpropConfig":
        return _from_json(cls, doc)


@dataclass
class BackpropResult:
    params: net.ParamVector
    losses: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)


class _Adam:
    def __init__(self, size, cfg: BackpropConfig):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.cfg = cfg

    def step(self, grad: np.ndarray, lr: float) -> np.ndarray:
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad**2
        lr_t = lr * math.sqrt(1 - c.beta2**self.t) / (1 - c.beta1**self.t)
        return -lr_t * self.m / (np.sqrt(self.v) + c.epsilon)


class _Sgd:
    def __init__(self, size, cfg: BackpropConfig):
        self.velocity = np.zeros(size)
        self.cfg = cfg

    def step(self, grad: np.ndarray, lr: float) -> np.ndarray:
        mu = self.cfg.momentum
        self.velocity = mu * self.velocity - lr * grad
        if self.cfg.nesterov:
            return mu * self.velocity - lr * grad
        return self.velocity


def train_backprop(arch: net.NetworkArch, train: Dataset, cfg: BackpropConfig,
                   params: net.ParamVector | None = None) -> BackpropResult:
    """Minibatch training of all weights and biases.

    The L2 term uses the per-batch scaling ``alpha / (2 * batch_len) * ||W||^2``
    so that tuned ``alpha`` values keep their usual meaning. With the adaptive
    schedule the learning rate is divided by 5 whenever two consecutive epochs
    fail to lower the best training loss by at least ``tol``.
    """
    if params is None:
        scheme = net.GlorotUniform() if cfg.init == "glorot" else net.Uniform(-1.0, 1.0)
        params = net.init_network(arch, scheme, seed=[cfg.seed, INIT_STREAM])
    theta = params.flat()
    opt = _Adam(theta.size, cfg) if cfg.solver == "adam" else _Sgd(theta.size, cfg)
    rng = np.random.default_rng([cfg.seed, SHUFFLE_STREAM])
    n = len(train)
    lr = cfg.lr_init
    best = math.inf
    stalls = 0
    result = BackpropResult(params)

    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in _batches(n, cfg.batch_size, rng):
            current = net.ParamVector.from_flat(arch, theta)
            batch = train.subset(idx)
            try:
                loss, grad = net.loss_and_gradient(current, batch, cfg.alpha / len(idx))
            except NumericsError as exc:
                raise NumericsError(str(exc), epoch=epoch) from None
            total += loss * len(idx)
            theta = theta + opt.step(grad, lr)
        epoch_loss = total / n
        if not math.isfinite(epoch_loss) or not np.all(np.isfinite(theta)):
            raise NumericsError("training diverged", epoch=epoch)
        result.losses.append(epoch_loss)
        result.learning_rates.append(lr)
        if cfg.lr_schedule == "adaptive":
            stalls = stalls + 1 if epoch_loss > best - cfg.tol else 0
            if stalls >= 2:
                lr = lr / 5
                stalls = 0
        best = min(best, epoch_loss)

    result.params = net.ParamVector.from_flat(arch, theta)
    return result


# -- scaled Kaiming initializations ----------------------------------------------


def init_kaiming_normal_scaled(arch: net.NetworkArch, k: float, seed) -> net.ParamVector:
    return net.init_network(arch, net.KaimingNormalScaled(k), seed)


def init_signed_kaiming_constant_scaled(arch: net.NetworkArch, k: float, seed) -> net.ParamVector:
    return net.init_network(arch, net.SignedKaimingConstantScaled(k), seed)


# -- edge-popup ------------------------------------------------------------------


@dataclass
class EdgePopupConfig:
    prune_rate: float = 0.5
    init: str = "uniform"
    epochs: int = 100
    score_lr: float = 0.1
    score_momentum: float = 0.9
    score_weight_decay: float = 1e-4
    batch_size: int = 128
    cosine: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.prune_rate <= 1.0:
            raise ConfigError(f"prune_rate must lie in (0, 1], got {self.prune_rate}")
        if self.init not in EP_INITS:
            raise ConfigError(f"init must be one of {EP_INITS}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")

    to_json = asdict

    @classmethod
    def from_json(cls, doc: dict) -> "EdgePopupConfig":
        return _from_json(cls, doc)


@dataclass
class EdgePopupResult:
    params: net.ParamVector
    mask: np.ndarray
    scores: np.ndarray
    losses: list[float] = field(default_factory=list)
    retained: list[list[int]] = field(default_factory=list)


def retained_counts(arch: net.NetworkArch, k: float) -> list[int]:
    return [round_half_up(k * a * b) for a, b in arch.layer_shapes]


def top_k_mask(scores: np.ndarray, arch: net.NetworkArch, k: float) -> np.ndarray:
    """Per layer, keep the ``round(k * count)`` highest scores; ties go to the lower index."""
    mask = np.zeros(arch.weight_count, dtype=bool)
    for sl, keep in zip(arch.weight_slices(), retained_counts(arch, k)):
        order = np.argsort(-scores[sl], kind="stable")
        mask[sl.start + order[:keep]] = True
    return mask


def edge_popup_forward(params: net.ParamVector, scores: np.ndarray, k: float, inputs) -> np.ndarray:
    return net.forward(params, inputs, top_k_mask(scores, params.arch, k))


def init_scores(arch: net.NetworkArch, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = []
    for a, b in arch.layer_shapes:
        s = math.sqrt(1.0 / a)
        out.append(rng.uniform(-s, s, a * b))
    return np.concatenate(out)


def edge_popup_init(arch: net.NetworkArch, cfg: EdgePopupConfig) -> net.ParamVector:
    seed = [cfg.seed, INIT_STREAM]
    if cfg.init == "uniform":
        return net.init_network(arch, net.Uniform(-1.0, 1.0), seed)
    if cfg.init == "kaiming_normal":
        return init_kaiming_normal_scaled(arch, cfg.prune_rate, seed)
    return init_signed_kaiming_constant_scaled(arch, cfg.prune_rate, seed)


def score_gradient(params: net.ParamVector, scores: np.ndarray, k: float, batch: Dataset) -> tuple[float, np.ndarray]:
    """Straight-through gradient of the batch loss w.r.t. the scores.

    The top-k step is treated as the identity in the backward pass, so the
    gradient for weight ``(i -> j)`` is ``dL/dW_eff[i, j] * w[i, j]``.
    """
    mask = top_k_mask(scores, params.arch, k)
    layers = list(params.layers(mask))
    loss, gw, _ = net.backprop(layers, batch.features, batch.labels, params.arch.relu_inputs)
    return loss, np.concatenate([g.ravel() for g in gw]) * params.weights


def edge_popup_train(arch: net.NetworkArch, train: Dataset, cfg: EdgePopupConfig,
                     params: net.ParamVector | None = None) -> EdgePopupResult:
    """Learn per-weight scores with SGD + momentum while the weights stay frozen."""
    if params is None:
        params = edge_popup_init(arch, cfg)
    scores = init_scores(arch, [cfg.seed, SCORE_STREAM])
    buf = np.zeros_like(scores)
    rng = np.random.default_rng([cfg.seed, SHUFFLE_STREAM])
    n = len(train)
    result = EdgePopupResult(params, top_k_mask(scores, arch, cfg.prune_rate), scores)

    for epoch in range(cfg.epochs):
        lr = cfg.score_lr
        if cfg.cosine:
            lr = 0.5 * cfg.score_lr * (1 + math.cos(math.pi * epoch / cfg.epochs))
        total = 0.0
        for idx in _batches(n, cfg.batch_size, rng):
            try:
                loss, grad = score_gradient(params, scores, cfg.prune_rate, train.subset(idx))
            except NumericsError as exc:
                raise NumericsError(str(exc), epoch=epoch) from None
            total += loss * len(idx)
            grad = grad + cfg.score_weight_decay * scores
            buf = cfg.score_momentum * buf + grad
            scores = scores - lr * buf
        if not math.isfinite(total) or not np.all(np.isfinite(scores)):
            raise NumericsError("score training diverged", epoch=epoch)
        mask = top_k_mask(scores, arch, cfg.prune_rate)
        result.losses.append(total / n)
        result.retained.append([int(np.count_nonzero(mask[sl])) for sl in arch.weight_slices()])

    result.scores = scores
    result.mask = top_k_mask(scores, arch, cfg.prune_rate)
    return result
