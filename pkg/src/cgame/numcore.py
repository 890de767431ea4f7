"""Dense numeric kernels: two-layer perceptrons with analytic gradients,
cosine reductions, a momentum SGD step, and a finite-difference oracle.

All arithmetic is 64-bit.  The backward passes are exact gradients of the
forward passes, which the test suite checks against central finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TrainingError


def as_float_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting NaN and infinity."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains nonfinite entries")
    return arr


def leaky_relu(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0, z, slope * z)


def leaky_relu_grad(z: np.ndarray, slope: float) -> np.ndarray:
    # derivative at exactly zero is defined as the slope
    return np.where(z > 0, 1.0, slope)


@dataclass
class MlpParams:
    """Parameters of a two-layer perceptron with leaky-ReLU activations.

    Computes ``leaky_relu(w2 @ leaky_relu(w1 @ x + b1) + b2)`` row-wise over a
    batch.
    """

    w1: np.ndarray  # (n_hidden, n_in)
    b1: np.ndarray  # (n_hidden,)
    w2: np.ndarray  # (n_out, n_hidden)
    b2: np.ndarray  # (n_out,)
    slope: float = 0.01

    def __post_init__(self) -> None:
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise ValueError("weight matrices must be 2-D")
        if self.b1.shape != (self.w1.shape[0],) or self.b2.shape != (self.w2.shape[0],):
            raise ValueError("bias shapes do not match weight rows")
        if self.w2.shape[1] != self.w1.shape[0]:
            raise ValueError(
                f"layer widths disagree: w1 has {self.w1.shape[0]} outputs, "
                f"w2 expects {self.w2.shape[1]} inputs"
            )
        if not 0 < self.slope < 1:
            raise ConfigError(f"leaky slope must be in (0, 1), got {self.slope}")

    @property
    def n_in(self) -> int:
        return self.w1.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def n_out(self) -> int:
        return self.w2.shape[0]

    def blocks(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class MlpCache:
    x: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    """Forward pass over a batch ``x`` of shape (batch, n_in)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.n_in:
        raise ValueError(f"input shape {x.shape} does not match n_in={params.n_in}")
    z1 = x @ params.w1.T + params.b1
    a1 = leaky_relu(z1, params.slope)
    z2 = a1 @ params.w2.T + params.b2
    y = leaky_relu(z2, params.slope)
    return y, MlpCache(x=x, z1=z1, a1=a1, z2=z2)


def mlp_backward(
    params: MlpParams, cache: MlpCache, grad_out: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact gradients of the forward pass.

    Returns the parameter gradients keyed like ``MlpParams.blocks`` and the
    gradient with respect to the input batch.
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != cache.z2.shape:
        raise ValueError(
            f"upstream gradient shape {grad_out.shape} does not match output "
            f"shape {cache.z2.shape}"
        )
    dz2 = grad_out * leaky_relu_grad(cache.z2, params.slope)
    dw2 = dz2.T @ cache.a1
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ params.w2
    dz1 = da1 * leaky_relu_grad(cache.z1, params.slope)
    dw1 = dz1.T @ cache.x
    db1 = dz1.sum(axis=0)
    dx = dz1 @ params.w1
    return {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}, dx


def batch_cosine(hx: np.ndarray, hy: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Per-feature cosine similarity across the batch axis.

    For feature ``f`` this is the cosine of the batch columns ``hx[:, f]`` and
    ``hy[:, f]``; features whose column norm falls below ``eps`` yield 0.
    """
    hx = as_float_matrix(hx, "hx")
    hy = as_float_matrix(hy, "hy")
    if hx.shape != hy.shape:
        raise ValueError(f"shape mismatch: {hx.shape} vs {hy.shape}")
    num = np.sum(hx * hy, axis=0)
    nx = np.sqrt(np.sum(hx * hx, axis=0))
    ny = np.sqrt(np.sum(hy * hy, axis=0))
    den = nx * ny
    ok = (nx >= eps) & (ny >= eps)
    out = np.zeros(hx.shape[1])
    np.divide(num, den, out=out, where=ok)
    return np.clip(out, -1.0, 1.0)


def structure_cosine(
    hx: np.ndarray,
    hy: np.ndarray,
    structures: np.ndarray,
    eps: float = 1e-12,
    literal: bool = False,
) -> np.ndarray:
    """Similarity of each structure-masked ``hx`` row to the matching ``hy`` row.

    For structure ``s`` and batch row ``i`` the masked vector is
    ``hx[i] * structures[:, s]``; its cosine with ``hy[i]`` over the feature
    axis is averaged over the batch.  Rows where either norm falls below
    ``eps`` contribute 0.

    With ``literal=True`` the radicals contain plain (unsquared) sums, kept
    only for comparison: that quotient is not a cosine, entries with a
    nonpositive radicand are defined as 0, and no range guarantee holds.
    """
    hx = as_float_matrix(hx, "hx")
    hy = as_float_matrix(hy, "hy")
    structures = as_float_matrix(structures, "structures")
    if hx.shape != hy.shape:
        raise ValueError(f"shape mismatch: {hx.shape} vs {hy.shape}")
    if structures.shape[0] != hx.shape[1]:
        raise ValueError(
            f"structures have {structures.shape[0]} features, embeddings have {hx.shape[1]}"
        )
    masked = hx[:, :, np.newaxis] * structures[np.newaxis, :, :]  # (b, n_f, n_s)
    num = np.einsum("bfs,bf->bs", masked, hy)
    if literal:
        rad_x = masked.sum(axis=1)
        rad_y = hy.sum(axis=1)[:, np.newaxis]
        ok = (rad_x >= eps) & (rad_y >= eps)
        den = np.sqrt(np.where(ok, rad_x, 1.0)) * np.sqrt(np.where(rad_y >= eps, rad_y, 1.0))
        per_row = np.where(ok, num / den, 0.0)
        return per_row.mean(axis=0)
    nx = np.sqrt(np.einsum("bfs,bfs->bs", masked, masked))
    ny = np.sqrt(np.sum(hy * hy, axis=1))[:, np.newaxis]
    ok = (nx >= eps) & (ny >= eps)
    per_row = np.zeros_like(num)
    np.divide(num, nx * ny, out=per_row, where=ok)
    np.clip(per_row, -1.0, 1.0, out=per_row)
    return per_row.mean(axis=0)


def sgd_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    lr: float,
    momentum: float,
) -> None:
    """In-place momentum SGD: ``v = momentum*v + g``, ``p -= lr*v``."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if not 0 <= momentum < 1:
        raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise ValueError(f"gradient shape {grad.shape} != parameter {name} {param.shape}")
        if not np.isfinite(grad).all():
            raise TrainingError(f"nonfinite gradient in block {name!r}")
        vel = velocity[name]
        vel *= momentum
        vel += grad
        param -= lr * vel


def finite_diff_grad(f, point: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    ``f`` receives a fresh array on each call; ``point`` is never mutated.
    """
    point = np.asarray(point, dtype=np.float64)
    grad = np.empty(point.size)
    flat = point.ravel()
    for i in range(flat.size):
        forward = flat.copy()
        forward[i] += step
        backward = flat.copy()
        backward[i] -= step
        fp = f(forward.reshape(point.shape))
        fm = f(backward.reshape(point.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"nonfinite function value near coordinate {i}")
        grad[i] = (fp - fm) / (2 * step)
    return grad.reshape(point.shape)
