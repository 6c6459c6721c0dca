"""Loss/accuracy slices around a found subnetwork and a Hessian sharpness probe."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import net
from .datasets import Dataset
from .errors import ConfigError, NumericsError

LOSS = "loss"
ACCURACY = "accuracy"

GradFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class LandscapeGrid:
    deltas: np.ndarray
    etas: np.ndarray
    values: np.ndarray
    metric: str
    d1_seed: int | None = None
    d2_seed: int | None = None

    def center(self) -> float:
        i = int(np.flatnonzero(self.deltas == 0.0)[0])
        j = int(np.flatnonzero(self.etas == 0.0)[0])
        return float(self.values[i, j])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["delta", "eta", "value"])
        for i, d in enumerate(self.deltas):
            for j, e in enumerate(self.etas):
                w.writerow([repr(float(d)), repr(float(e)), repr(float(self.values[i, j]))])
        return buf.getvalue()

    def header(self) -> dict:
        return {
            "metric": self.metric,
            "d1_seed": self.d1_seed,
            "d2_seed": self.d2_seed,
            "range": [float(self.deltas[0]), float(self.deltas[-1])],
            "resolution": len(self.deltas),
        }


def _blocks(arch: net.NetworkArch) -> list[np.ndarray]:
    """Flat-vector indices of each layer's weights plus biases."""
    nw = arch.weight_count
    return [
        np.concatenate([np.arange(ws.start, ws.stop), nw + np.arange(bs.start, bs.stop)])
        for ws, bs in zip(arch.weight_slices(), arch.bias_slices())
    ]


def random_direction(dim: int, seed, reference: net.ParamVector | None = None, layer_normalize: bool = False,
                     active_mask: np.ndarray | None = None) -> np.ndarray:
    """Standard-normal direction over the flat ``[weights, biases]`` vector.

    ``active_mask`` zeroes the entries of pruned weights. With
    ``layer_normalize`` each layer block is rescaled to the norm of the same
    block of ``reference``.
    """
    if dim < 1:
        raise ConfigError(f"dim must be >= 1, got {dim}")
    d = np.random.default_rng(seed).standard_normal(dim)
    if active_mask is not None:
        d[: active_mask.size][~np.asarray(active_mask, dtype=bool)] = 0.0
    if layer_normalize:
        if reference is None:
            raise ConfigError("layer normalization needs a reference parameter vector")
        ref = reference.flat()
        for idx in _blocks(reference.arch):
            dn = np.linalg.norm(d[idx])
            d[idx] = 0.0 if dn == 0 else d[idx] * (np.linalg.norm(ref[idx]) / dn)
    return d


def sample_directions(dim: int, seed: int, **kwargs) -> tuple[np.ndarray, np.ndarray]:
    """Two independent directions drawn from seeds ``seed`` and ``seed + 1``."""
    return random_direction(dim, seed, **kwargs), random_direction(dim, seed + 1, **kwargs)


def _metric(params: net.ParamVector, data: Dataset, metric: str) -> float:
    if metric == LOSS:
        return net.cross_entropy(params, data)
    if metric == ACCURACY:
        return net.accuracy(params, data)
    raise ConfigError(f"unknown metric {metric!r}")


def grid_axis(lo: float, hi: float, resolution: int) -> np.ndarray:
    if resolution < 2:
        raise ConfigError(f"resolution must be >= 2, got {resolution}")
    if not hi > lo:
        raise ConfigError(f"empty range [{lo}, {hi}]")
    axis = np.linspace(lo, hi, resolution)
    # pin the value nearest zero to exactly 0 so the centre reproduces w_s bit for bit
    i = int(np.argmin(np.abs(axis)))
    if abs(axis[i]) <= 1e-12 * (hi - lo):
        axis[i] = 0.0
    return axis


def landscape_grid(w_s: net.ParamVector, d1: np.ndarray, d2: np.ndarray, lo: float = -1.0, hi: float = 1.0,
                   resolution: int = 51, metric: str = LOSS, data: Dataset | None = None,
                   d1_seed: int | None = None, d2_seed: int | None = None) -> LandscapeGrid:
    """Evaluate ``metric`` at ``w_s + delta * d1 + eta * d2`` over an even grid.

    ``w_s`` must already have its mask applied; grid points are evaluated as
    dense networks.
    """
    if data is None:
        raise ConfigError("landscape_grid needs a dataset")
    base = w_s.flat()
    if d1.shape != base.shape or d2.shape != base.shape:
        raise ConfigError("directions must match the parameter vector length")
    axis = grid_axis(lo, hi, resolution)
    values = np.empty((resolution, resolution))
    for i, delta in enumerate(axis):
        for j, eta in enumerate(axis):
            point = net.ParamVector.from_flat(w_s.arch, base + (delta * d1 + eta * d2))
            values[i, j] = _metric(point, data, metric)
    return LandscapeGrid(axis, axis.copy(), values, metric, d1_seed, d2_seed)


# -- curvature ---------------------------------------------------------------------


def loss_gradient_fn(arch: net.NetworkArch, data: Dataset, l2_alpha: float = 0.0) -> GradFn:
    def grad(theta: np.ndarray) -> np.ndarray:
        return net.gradient(net.ParamVector.from_flat(arch, theta), data, l2_alpha)

    return grad


def fd_hvp(grad_fn: GradFn, w: np.ndarray, v: np.ndarray, eps_scale: float = 1e-4) -> np.ndarray:
    """Central difference of gradients along ``v``; exact for quadratics up to rounding."""
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        raise NumericsError("Hessian-vector product with a zero vector")
    unit = v / nv
    eps = eps_scale * (1.0 + float(np.linalg.norm(w)))
    hv = (grad_fn(w + eps * unit) - grad_fn(w - eps * unit)) * (nv / (2.0 * eps))
    if not np.all(np.isfinite(hv)):
        raise NumericsError("non-finite Hessian-vector product")
    return hv


def hessian_vector_product(params: net.ParamVector, v: np.ndarray, data: Dataset,
                           eps_scale: float = 1e-4) -> np.ndarray:
    return fd_hvp(loss_gradient_fn(params.arch, data), params.flat(), v, eps_scale)


@dataclass
class EigenProbe:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    iterations_used: int
    converged: np.ndarray

    def to_json(self) -> dict:
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "residuals": self.residuals.tolist(),
            "iterations_used": self.iterations_used,
            "converged": [bool(c) for c in self.converged],
        }


def _project_out(v: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    for u in basis:
        v = v - (u @ v) * u
    return v


def _ritz_step(hvp, v: np.ndarray, hv: np.ndarray, basis: list[np.ndarray]):
    """Best Ritz pair (largest |theta|) from span{v, Hv} with deflation applied.

    Plain power iteration stalls when +lambda and -lambda share the top
    magnitude; the two-dimensional extraction separates such pairs.
    """
    w = hv - (v @ hv) * v
    w = _project_out(w, basis)
    nw = np.linalg.norm(w)
    if nw <= 1e-14 * max(1.0, np.linalg.norm(hv)):
        lam = float(v @ hv)
        return lam, v, hv
    w /= nw
    # second Gram-Schmidt pass; the coupling term is nw by construction (Lanczos)
    w -= (v @ w) * v
    w /= np.linalg.norm(w)
    hw = _project_out(hvp(w), basis)
    t = np.array([[v @ hv, nw], [nw, w @ hw]])
    vals, vecs = np.linalg.eigh(t)
    k = int(np.argmax(np.abs(vals)))
    s = vecs[:, k]
    y = s[0] * v + s[1] * w
    hy = s[0] * hv + s[1] * hw
    ny = np.linalg.norm(y)
    return float(vals[k]), y / ny, hy / ny


def power_eigs(hvp: Callable[[np.ndarray], np.ndarray], dim: int, m: int = 3, max_iters: int = 1000,
               tol: float = 1e-8, seed: int = 0, max_restarts: int = 3) -> EigenProbe:
    """Top-``m`` eigenpairs by magnitude via power iteration with deflation.

    Each new vector is kept orthogonal to the eigenvectors already found, and
    every step extracts the dominant Ritz pair from ``span{v, Hv}``.
    Convergence means ``||Hv - lambda v|| <= tol`` for the unit iterate.
    """
    if m < 1:
        raise ConfigError(f"m must be >= 1, got {m}")
    rng = np.random.default_rng(seed)
    vecs: list[np.ndarray] = []
    vals, res, conv = [], [], []
    used = 0
    for _ in range(m):
        restarts = 0
        while True:
            v = _project_out(rng.standard_normal(dim), vecs)
            nv = np.linalg.norm(v)
            if nv > 1e-10:
                break
            restarts += 1
            if restarts > max_restarts:
                raise NumericsError("power iteration broke down: no direction left to explore")
        v /= nv
        lam, r, ok = 0.0, np.inf, False
        for _ in range(max_iters):
            used += 1
            hv = _project_out(hvp(v), vecs)
            lam, v, hv = _ritz_step(hvp, v, hv, vecs)
            r = float(np.linalg.norm(hv - lam * v))
            if r <= tol:
                ok = True
                break
            v = _project_out(v, vecs)
            v /= np.linalg.norm(v)
        vecs.append(v)
        vals.append(lam)
        res.append(r)
        conv.append(ok)
    order = np.argsort(-np.abs(np.array(vals)), kind="stable")
    return EigenProbe(
        eigenvalues=np.array(vals)[order],
        eigenvectors=np.array(vecs)[order],
        residuals=np.array(res)[order],
        iterations_used=used,
        converged=np.array(conv)[order],
    )


def top_eigenvalues(params: net.ParamVector, data: Dataset, m: int = 3, max_iters: int = 1000,
                    tol: float = 1e-6, seed: int = 0, eps_scale: float = 1e-4) -> EigenProbe:
    grad = loss_gradient_fn(params.arch, data)
    w = params.flat()
    return power_eigs(lambda v: fd_hvp(grad, w, v, eps_scale), w.size, m, max_iters, tol, seed)
