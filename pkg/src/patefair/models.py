"""Logistic regression and two-hidden-layer ReLU networks with analytic gradients.

Parameters live in one flat vector. Layouts:

* ``logistic`` (binary only): ``[w_1 .. w_d, b]``; the model outputs
  ``P(class 1) = sigmoid(w.x + b)``.
* ``mlp2``: ``W1 (h1 x d), b1, W2 (h2 x h1), b2, W3 (C x h2), b3``, each
  weight matrix row-major, followed by a softmax.

Internally every routine works on a *stack* of parameter vectors with
shape ``(R, P)`` so that paired repetitions (identical data order, different
targets) train in one vectorized pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .rng import stream

PROB_CLAMP = 1e-12
ARCHS = ("logistic", "mlp2")


class ModelError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


def layer_dims(arch: str, d: int, class_count: int, hidden: Sequence[int] = (16, 16)) -> tuple[int, ...]:
    if arch == "logistic":
        if class_count != 2:
            raise ModelError("logistic regression is binary; use mlp2 for more classes")
        return (d, 1)
    if arch == "mlp2":
        if len(hidden) != 2:
            raise ModelError(f"mlp2 needs two hidden widths, got {tuple(hidden)}")
        return (d, int(hidden[0]), int(hidden[1]), class_count)
    raise ModelError(f"unknown architecture {arch!r}; expected one of {ARCHS}")


def param_count(arch: str, dims: Sequence[int]) -> int:
    if arch == "logistic":
        return dims[0] + 1
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


@dataclass(frozen=True)
class ModelParams:
    arch: str
    dims: tuple[int, ...]
    theta: np.ndarray
    class_count: int

    def __post_init__(self) -> None:
        theta = np.array(self.theta, dtype=float).reshape(-1)
        expected = param_count(self.arch, self.dims)
        if theta.size != expected:
            raise ModelError(f"{self.arch} with dims {self.dims} needs {expected} parameters, got {theta.size}")
        if not np.all(np.isfinite(theta)):
            raise ModelError("parameters must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))

    @property
    def d(self) -> int:
        return self.dims[0]

    def with_theta(self, theta: np.ndarray) -> "ModelParams":
        return ModelParams(self.arch, self.dims, theta, self.class_count)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.0
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 500
    init_seed: int = 0
    shuffle_seed: int = 0

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ModelError("lambda must be nonnegative")
        if self.learning_rate <= 0:
            raise ModelError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ModelError("batch_size and epochs must be >= 1")


@dataclass(frozen=True)
class Decomposition:
    h_value: float
    z_value: float
    c: float = 1.0


@dataclass
class TrainResult:
    """Final parameters plus per-epoch objective and optional snapshots."""

    thetas: np.ndarray
    epoch_objective: np.ndarray
    trajectory: list[np.ndarray] = field(default_factory=list)


def init_params(arch: str, dims: Sequence[int], seed: int, class_count: int | None = None) -> ModelParams:
    """Symmetric uniform initialization with zero biases."""
    dims = tuple(int(v) for v in dims)
    rng = np.random.default_rng(seed)
    if arch == "logistic":
        theta = np.concatenate([rng.uniform(-0.01, 0.01, size=dims[0]), [0.0]])
        return ModelParams(arch, dims, theta, 2)
    if arch != "mlp2":
        raise ModelError(f"unknown architecture {arch!r}")
    parts = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        parts.append(np.zeros(fan_out))
    return ModelParams(arch, dims, np.concatenate(parts), dims[-1] if class_count is None else class_count)


# ---------------------------------------------------------------------------
# stacked forward / backward


def augment(x: np.ndarray) -> np.ndarray:
    """Append the constant bias input 1 to each row (or to a single vector)."""
    x = np.asarray(x, dtype=float)
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def _unflatten_mlp(thetas: np.ndarray, dims: Sequence[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    R = thetas.shape[0]
    layers, off = [], 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        W = thetas[:, off : off + fan_in * fan_out].reshape(R, fan_out, fan_in)
        off += fan_in * fan_out
        b = thetas[:, off : off + fan_out]
        off += fan_out
        layers.append((W, b))
    return layers


def _mlp_forward(thetas: np.ndarray, dims: Sequence[int], X: np.ndarray):
    layers = _unflatten_mlp(thetas, dims)
    acts = [np.broadcast_to(X, (thetas.shape[0],) + X.shape)]
    pre = []
    a = acts[0]
    for i, (W, b) in enumerate(layers):
        z = a @ W.transpose(0, 2, 1) + b[:, None, :]
        pre.append(z)
        if i < len(layers) - 1:
            a = np.maximum(z, 0.0)
            acts.append(a)
    return layers, acts, pre


def _mlp_backward(layers, acts, pre, dlogits: np.ndarray) -> np.ndarray:
    """Gradient of sum_b dlogits[r, b] . logits[r, b] w.r.t. the flat parameters."""
    grads = []
    delta = dlogits
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        gW = delta.transpose(0, 2, 1) @ acts[i]
        gb = delta.sum(axis=1)
        grads.append((gW, gb))
        if i > 0:
            delta = (delta @ W) * (pre[i - 1] > 0)
    R = dlogits.shape[0]
    flat = []
    for gW, gb in reversed(grads):
        flat.append(gW.reshape(R, -1))
        flat.append(gb)
    return np.concatenate(flat, axis=1)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def stacked_proba(arch: str, dims: Sequence[int], thetas: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Class probabilities, shape ``(R, b, C)``."""
    if X.shape[-1] != dims[0]:
        raise ModelError(f"input has {X.shape[-1]} features, model expects {dims[0]}")
    if arch == "logistic":
        f = expit(thetas @ augment(X).T)
        return np.stack([1.0 - f, f], axis=-1)
    _, _, pre = _mlp_forward(thetas, dims, X)
    return _softmax(pre[-1])


def stacked_losses(arch: str, dims: Sequence[int], thetas: np.ndarray, X: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Per-sample weighted cross-entropy ``sum_c T_c * -log p_c``, shape ``(R, b)``."""
    P = stacked_proba(arch, dims, thetas, X)
    return -(np.broadcast_to(T, P.shape) * np.log(np.maximum(P, PROB_CLAMP))).sum(axis=-1)


def stacked_loss_grad(
    arch: str, dims: Sequence[int], thetas: np.ndarray, X: np.ndarray, T: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Mean data loss over the batch and its gradient, per stacked model.

    ``T`` has shape ``(b, C)`` or ``(R, b, C)``; rows are class weights
    (one-hot for hard labels).
    """
    b = X.shape[0]
    R = thetas.shape[0]
    T = np.broadcast_to(T, (R, b, T.shape[-1]))
    w = T.sum(axis=-1)
    if arch == "logistic":
        Xa = augment(X)
        z = thetas @ Xa.T
        f = expit(z)
        P = np.stack([1.0 - f, f], axis=-1)
        loss = -(T * np.log(np.maximum(P, PROB_CLAMP))).sum(axis=-1)
        resid = w * f - T[..., 1]
        grad = resid @ Xa / b
        return loss.mean(axis=1), grad
    layers, acts, pre = _mlp_forward(thetas, dims, X)
    P = _softmax(pre[-1])
    loss = -(T * np.log(np.maximum(P, PROB_CLAMP))).sum(axis=-1)
    dlogits = (w[..., None] * P - T) / b
    return loss.mean(axis=1), _mlp_backward(layers, acts, pre, dlogits)


def stacked_logit_margin_grad(arch: str, dims: Sequence[int], thetas: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Gradient of ``h = logit_0 - logit_1`` per sample, shape ``(R, b, P)``.

    For binary models this is the ``h`` in ``loss = z(h) + y*h``.
    """
    if arch == "logistic":
        Xa = augment(X)
        return np.broadcast_to(-Xa, (thetas.shape[0],) + Xa.shape).copy()
    if dims[-1] != 2:
        raise ModelError("logit margin is defined for binary models only")
    out = np.empty((thetas.shape[0], X.shape[0], thetas.shape[1]))
    for i in range(X.shape[0]):
        layers, acts, pre = _mlp_forward(thetas, dims, X[i : i + 1])
        dl = np.broadcast_to(np.array([1.0, -1.0]), (thetas.shape[0], 1, 2))
        out[:, i, :] = _mlp_backward(layers, acts, pre, dl)
    return out


# ---------------------------------------------------------------------------
# single-model API


def _targets(labels_or_alpha, class_count: int) -> np.ndarray:
    arr = np.asarray(labels_or_alpha)
    if arr.dtype.kind in "iub" and arr.ndim <= 1:
        arr = np.atleast_1d(arr).astype(np.int64)
        if np.any(arr < 0) or np.any(arr >= class_count):
            raise ModelError(f"labels must be in [0, {class_count})")
        return np.eye(class_count)[arr]
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    if arr.shape[-1] != class_count:
        raise ModelError(f"class-weight vectors need length {class_count}, got {arr.shape[-1]}")
    return arr


def _as_rows(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


def predict_proba(p: ModelParams, x) -> np.ndarray:
    """Probability vector for one input, or a ``(b, C)`` matrix for a batch."""
    x = np.asarray(x, dtype=float)
    P = stacked_proba(p.arch, p.dims, p.theta[None], _as_rows(x))[0]
    return P[0] if x.ndim == 1 else P


def predict(p: ModelParams, X) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    return np.argmax(predict_proba(p, _as_rows(X)), axis=-1)


def loss_hard(p: ModelParams, x, y: int) -> float:
    T = _targets(np.int64(y), p.class_count)
    return float(stacked_losses(p.arch, p.dims, p.theta[None], _as_rows(x), T)[0, 0])


def loss_soft(p: ModelParams, x, alpha) -> float:
    """``sum_c alpha_c * loss_hard(p, x, c)``."""
    T = _targets(np.asarray(alpha, dtype=float), p.class_count)
    return float(stacked_losses(p.arch, p.dims, p.theta[None], _as_rows(x), T)[0, 0])


def grad(p: ModelParams, x, label_or_alpha) -> np.ndarray:
    """Analytic gradient of the hard (int label) or soft (weight vector) loss."""
    T = _targets(label_or_alpha, p.class_count)
    _, g = stacked_loss_grad(p.arch, p.dims, p.theta[None], _as_rows(x), T)
    return g[0]


def grad_norm_at(p: ModelParams, x, y) -> float:
    return float(np.linalg.norm(grad(p, x, y)))


def smoothness_beta(x) -> float:
    """Per-sample curvature bound ``0.25 * ||x||^2`` of the logistic loss.

    Pass the bias-augmented input (:func:`augment`) to cover the bias
    parameter as well.
    """
    x = np.asarray(x, dtype=float)
    return 0.25 * float(x @ x)


def decompose_logistic(p: ModelParams, x, y: int) -> Decomposition:
    """Write the logistic loss as ``z(h) + c*y*h`` with ``h = -theta.x_aug``, ``c = 1``."""
    if p.arch != "logistic":
        raise ModelError(f"decomposition is only available for logistic models, not {p.arch}")
    h = -float(p.theta @ augment(np.asarray(x, dtype=float)))
    # z(h) = -log(e^h / (1 + e^h)) = log(1 + e^-h)
    z = float(np.logaddexp(0.0, -h))
    return Decomposition(h_value=h, z_value=z, c=1.0)


# ---------------------------------------------------------------------------
# training


def objective(p: ModelParams, X, targets, lam: float) -> float:
    """Mean-form regularized risk ``(1/m) sum loss + lam * ||theta||^2``."""
    X = _as_rows(X)
    T = _targets(targets, p.class_count)
    losses = stacked_losses(p.arch, p.dims, p.theta[None], X, T)[0]
    return float(losses.mean() + lam * p.theta @ p.theta)


def sgd(
    arch: str,
    dims: Sequence[int],
    theta0: np.ndarray,
    X: np.ndarray,
    T: np.ndarray,
    cfg: TrainConfig,
    record_trajectory: bool = False,
) -> TrainResult:
    """Mini-batch SGD on the mean-form objective for a stack of models.

    ``T`` is ``(m, C)`` (shared targets) or ``(R, m, C)``. Every stacked
    model sees the same batch sequence, drawn from ``cfg.shuffle_seed``.
    """
    X = np.asarray(X, dtype=float)
    m = X.shape[0]
    if m == 0:
        raise TrainingError("cannot train on an empty dataset")
    thetas = np.array(np.atleast_2d(theta0), dtype=float)
    R = thetas.shape[0]
    T = np.broadcast_to(np.asarray(T, dtype=float), (R, m, T.shape[-1]))
    rng = np.random.default_rng(cfg.shuffle_seed)
    lr, lam, bs = cfg.learning_rate, cfg.lam, cfg.batch_size
    epoch_obj = np.empty((cfg.epochs, R))
    traj = [thetas.copy()] if record_trajectory else []
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(m)
        acc = np.zeros(R)
        for start in range(0, m, bs):
            idx = perm[start : start + bs]
            loss, g = stacked_loss_grad(arch, dims, thetas, X[idx], T[:, idx])
            if not np.all(np.isfinite(loss)) or not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite loss at step {step} (epoch {epoch})")
            acc += loss * len(idx)
            thetas -= lr * (g + 2.0 * lam * thetas)
            step += 1
        epoch_obj[epoch] = acc / m + lam * np.einsum("rp,rp->r", thetas, thetas)
        if record_trajectory:
            traj.append(thetas.copy())
    if not np.all(np.isfinite(thetas)):
        raise TrainingError(f"non-finite parameters after step {step}")
    return TrainResult(thetas=thetas, epoch_objective=epoch_obj, trajectory=traj)


def train(
    X,
    targets,
    cfg: TrainConfig,
    arch: str = "logistic",
    hidden: Sequence[int] = (16, 16),
    class_count: int | None = None,
) -> ModelParams:
    """Fit one model by SGD; ``targets`` are int labels or ``(m, C)`` class weights."""
    X = _as_rows(X)
    if X.shape[0] == 0:
        raise TrainingError("cannot train on an empty dataset")
    tarr = np.asarray(targets)
    if class_count is None:
        class_count = tarr.shape[-1] if tarr.ndim == 2 else int(tarr.max()) + 1
        class_count = max(class_count, 2)
    dims = layer_dims(arch, X.shape[1], class_count, hidden)
    p0 = init_params(arch, dims, cfg.init_seed, class_count)
    res = sgd(arch, dims, p0.theta, X, _targets(targets, class_count), cfg)
    return p0.with_theta(res.thetas[0])


def train_stack(
    X,
    target_stack: np.ndarray,
    cfg: TrainConfig,
    arch: str = "logistic",
    hidden: Sequence[int] = (16, 16),
    record_trajectory: bool = False,
) -> TrainResult:
    """Train ``R`` models sharing init and batch order; ``target_stack`` is ``(R, m, C)``."""
    X = _as_rows(X)
    target_stack = np.asarray(target_stack, dtype=float)
    C = target_stack.shape[-1]
    dims = layer_dims(arch, X.shape[1], C, hidden)
    p0 = init_params(arch, dims, cfg.init_seed, C)
    theta0 = np.broadcast_to(p0.theta, (target_stack.shape[0], p0.theta.size))
    return sgd(arch, dims, theta0, X, target_stack, cfg, record_trajectory)


# ---------------------------------------------------------------------------
# serialization


def save_params(p: ModelParams, path: str | Path) -> None:
    """Text format: one JSON header line, then one ``repr`` float per line."""
    header = {"arch": p.arch, "dims": list(p.dims), "class_count": p.class_count, "size": int(p.theta.size)}
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for v in p.theta:
            fh.write(repr(float(v)) + "\n")


def load_params(path: str | Path) -> ModelParams:
    with Path(path).open(encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        theta = np.array([float(line) for line in fh if line.strip()])
    if theta.size != header["size"]:
        raise ModelError(f"{path}: header declares {header['size']} values, found {theta.size}")
    return ModelParams(header["arch"], tuple(header["dims"]), theta, header["class_count"])


def random_params(arch: str, dims: Sequence[int], seed: int, scale: float = 1.0) -> ModelParams:
    """Gaussian parameters (biases included); handy for tests and probes."""
    dims = tuple(dims)
    C = 2 if arch == "logistic" else dims[-1]
    theta = stream(seed, "random-params").normal(scale=scale, size=param_count(arch, dims))
    return ModelParams(arch, dims, theta, C)
