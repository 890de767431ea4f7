"""Training loop and the scikit-learn style regressor.

Training alternates two phases: ``update_interval`` momentum-SGD iterations
on the summed forward and inverse reconstruction losses (with the matcher
held constant), then one matcher structure update on fresh mini-batches.
The returned parameters are the snapshot with the best validation loss.
Everything is driven by child generators of one seed, so a (seed, config,
data) triple fully determines the loss curve and the final parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ConfigError, TrainingError
from .matcher import matcher_step
from .model import (
    CGameModel,
    ModelDims,
    Normalization,
    flatten_counts,
    flatten_od,
    init_model,
    model_backward,
    model_forward,
    parameter_blocks,
    predict_counts,
    predict_od,
    quantize_model,
)
from .numcore import mlp_forward, sgd_step
from .simkit import split_counts

LOSS_KINDS = ("mse", "l1")


@dataclass(frozen=True)
class TrainConfig:
    n_features: int = 256
    n_hidden: int = 512
    n_structures: int = 64
    structures_per_step: int = 8
    refresh_substeps: int = 4
    discount: float = 0.9
    update_interval: int = 50
    gate_mode: str = "mean"
    literal_cosine: bool = False
    leaky_slope: float = 0.01
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    max_iters: int = 5000
    loss: str = "mse"
    ablation: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be at least 2, got {self.batch_size}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be at least 1, got {self.max_iters}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    val_iterations: list[int] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_iteration: int = 0
    best_val_loss: float = float("inf")
    matcher_steps: int = 0


def _loss_and_grad(pred: np.ndarray, target: np.ndarray, kind: str) -> tuple[float, np.ndarray]:
    diff = pred - target
    n = diff.size
    if kind == "mse":
        return float(np.mean(diff * diff)), (2.0 / n) * diff
    return float(np.mean(np.abs(diff))), np.sign(diff) / n


def _loss_value(pred: np.ndarray, target: np.ndarray, kind: str) -> float:
    diff = pred - target
    if kind == "mse":
        return float(np.mean(diff * diff))
    return float(np.mean(np.abs(diff)))


def _both_direction_loss(model: CGameModel, x: np.ndarray, y: np.ndarray, kind: str) -> float:
    pred_y, _ = model_forward(model, x, "forward")
    pred_x, _ = model_forward(model, y, "inverse")
    return _loss_value(pred_y, y, kind) + _loss_value(pred_x, x, kind)


def _draw_batch(rng: np.random.Generator, indices: np.ndarray, size: int) -> np.ndarray:
    return rng.choice(indices, size=size, replace=len(indices) < size)


def _embedding_pairs(
    model: CGameModel,
    x: np.ndarray,
    y: np.ndarray,
    train_indices: np.ndarray,
    rng: np.random.Generator,
    count: int,
    batch_size: int,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Fresh (forward, inverse) embeddings of the same items, one per batch."""
    pairs = []
    for _ in range(count):
        idx = _draw_batch(rng, train_indices, batch_size)
        hx, _ = mlp_forward(model.fwd_encoder, x[idx])
        hy, _ = mlp_forward(model.inv_encoder, y[idx])
        pairs.append((hx, hy))
    return pairs


@dataclass
class _Snapshot:
    blocks: dict[str, np.ndarray]
    matcher_structures: np.ndarray
    matcher_scores: np.ndarray


def _take_snapshot(model: CGameModel) -> _Snapshot:
    return _Snapshot(
        blocks={k: v.copy() for k, v in parameter_blocks(model).items()},
        matcher_structures=model.matcher.structures.copy(),
        matcher_scores=model.matcher.scores.copy(),
    )


def _restore_snapshot(model: CGameModel, snap: _Snapshot) -> None:
    for name, arr in parameter_blocks(model).items():
        arr[...] = snap.blocks[name]
    model.matcher.structures = snap.matcher_structures.copy()
    model.matcher.scores = snap.matcher_scores.copy()


def fit_model(
    counts: np.ndarray,
    ods: np.ndarray,
    train_indices,
    val_indices,
    config: TrainConfig,
) -> tuple[CGameModel, TrainingHistory]:
    """Train a model on stacked (counts, od) items with a fixed split.

    ``counts`` has shape (n_items, n_links, n_timeslices) and ``ods``
    (n_items, n_spots, n_spots).  Returns the best-validation parameter state
    (quantized to 32-bit persistence precision) and the loss history.
    """
    counts = np.asarray(counts, dtype=np.float64)
    ods = np.asarray(ods, dtype=np.float64)
    train_indices = np.asarray(sorted(train_indices), dtype=np.int64)
    val_indices = np.asarray(sorted(val_indices), dtype=np.int64)
    if train_indices.size == 0:
        raise ConfigError("training split is empty")
    if counts.shape[0] != ods.shape[0]:
        raise ValueError("counts and ods must have the same number of items")

    dims = ModelDims(
        n_links=counts.shape[1],
        n_timeslices=counts.shape[2],
        n_spots=ods.shape[1],
        n_features=config.n_features,
        n_hidden=config.n_hidden,
        n_structures=config.n_structures,
    )

    init_ss, batch_ss, matcher_ss = np.random.SeedSequence(config.seed).spawn(3)
    model = init_model(
        dims,
        np.random.default_rng(init_ss),
        leaky_slope=config.leaky_slope,
        structures_per_step=config.structures_per_step,
        refresh_substeps=config.refresh_substeps,
        discount=config.discount,
        update_interval=config.update_interval,
        gate_mode=config.gate_mode,
        literal_cosine=config.literal_cosine,
    )

    x_all = flatten_counts(counts)
    y_all = flatten_od(ods)
    model.input_norm = Normalization.from_rows(x_all[train_indices])
    model.output_norm = Normalization.from_rows(y_all[train_indices])
    x_all = model.input_norm.apply(x_all)
    y_all = model.output_norm.apply(y_all)

    batch_rng = np.random.default_rng(batch_ss)
    matcher_rng = np.random.default_rng(matcher_ss)
    params = parameter_blocks(model)
    velocity = {name: np.zeros_like(arr) for name, arr in params.items()}

    history = TrainingHistory()
    best: _Snapshot | None = None

    def evaluate_validation(iteration: int) -> None:
        nonlocal best
        if val_indices.size == 0:
            return
        val = _both_direction_loss(model, x_all[val_indices], y_all[val_indices], config.loss)
        history.val_iterations.append(iteration)
        history.val_loss.append(val)
        if val < history.best_val_loss:
            history.best_val_loss = val
            history.best_iteration = iteration
            best = _take_snapshot(model)

    for iteration in range(1, config.max_iters + 1):
        idx = _draw_batch(batch_rng, train_indices, config.batch_size)
        xb, yb = x_all[idx], y_all[idx]

        pred_y, fwd_caches = model_forward(model, xb, "forward")
        loss_fwd, grad_fwd = _loss_and_grad(pred_y, yb, config.loss)
        pred_x, inv_caches = model_forward(model, yb, "inverse")
        loss_inv, grad_inv = _loss_and_grad(pred_x, xb, config.loss)
        total = loss_fwd + loss_inv
        if not np.isfinite(total):
            raise TrainingError(
                f"nonfinite loss at iteration {iteration}: "
                f"forward={loss_fwd}, inverse={loss_inv}"
            )
        history.train_loss.append(total)

        grads_fwd, _ = model_backward(model, fwd_caches, grad_fwd, "forward")
        grads_inv, _ = model_backward(model, inv_caches, grad_inv, "inverse")
        grads = {f"fwd_encoder.{k[4:]}": v for k, v in grads_fwd.items() if k.startswith("enc.")}
        grads.update(
            {f"fwd_decoder.{k[4:]}": v for k, v in grads_fwd.items() if k.startswith("dec.")}
        )
        grads.update(
            {f"inv_encoder.{k[4:]}": v for k, v in grads_inv.items() if k.startswith("enc.")}
        )
        grads.update(
            {f"inv_decoder.{k[4:]}": v for k, v in grads_inv.items() if k.startswith("dec.")}
        )
        sgd_step(params, grads, velocity, config.lr, config.momentum)

        if iteration % config.update_interval == 0:
            evaluate_validation(iteration)
            if not config.ablation:
                candidate_pairs = _embedding_pairs(
                    model, x_all, y_all, train_indices, matcher_rng,
                    config.structures_per_step, config.batch_size,
                )
                value_pairs = _embedding_pairs(
                    model, x_all, y_all, train_indices, matcher_rng,
                    config.refresh_substeps, config.batch_size,
                )
                model.matcher = matcher_step(
                    model.matcher, candidate_pairs, value_pairs, matcher_rng
                )
                history.matcher_steps += 1

    if config.max_iters % config.update_interval != 0:
        evaluate_validation(config.max_iters)

    if best is not None:
        _restore_snapshot(model, best)
    quantize_model(model)
    return model, history


class CGameRegressor(BaseEstimator):
    """Bidirectional OD-matrix regressor with a cross-space matching gate.

    Fits two coupled two-layer perceptron stacks: counts-to-OD and OD-to-
    counts, joined by a shared feature gate built from batch-axis cosine
    similarities between the two embedding spaces.  With ``ablation=True``
    the gate stays frozen at the identity, leaving two plain supervised
    regressors trained under the same schedule.

    Parameters
    ----------
    n_features : width of the shared embedding space.
    n_hidden : hidden width of every encoder and decoder.
    n_structures : number of columns in the matching bank.
    structures_per_step : columns replaced per matcher update.
    refresh_substeps : batches accumulated when rebuilding the scores.
    discount : forgetting factor of the score accumulation, in [0, 1).
    update_interval : gradient iterations between matcher updates.
    gate_mode : "mean" (identity at initialization) or "sum".
    literal_cosine : use the unsquared-radical score variant (comparison only).
    leaky_slope : negative slope of all activations.
    lr, momentum, batch_size, max_iters, loss : SGD settings; loss is
        "mse" or "l1".
    ablation : freeze the gate at the identity.
    validation_fraction : held-out share when fit has to split by itself.
    random_state : seed controlling initialization, batching, and the matcher.

    Attributes
    ----------
    model_ : the trained low-level model.
    history_ : per-iteration training loss, validation curve, matcher steps.
    loss_curve_ : training loss per iteration as an array.
    """

    def __init__(
        self,
        *,
        n_features: int = 256,
        n_hidden: int = 512,
        n_structures: int = 64,
        structures_per_step: int = 8,
        refresh_substeps: int = 4,
        discount: float = 0.9,
        update_interval: int = 50,
        gate_mode: str = "mean",
        literal_cosine: bool = False,
        leaky_slope: float = 0.01,
        lr: float = 1e-3,
        momentum: float = 0.9,
        batch_size: int = 32,
        max_iters: int = 5000,
        loss: str = "mse",
        ablation: bool = False,
        validation_fraction: float = 0.2,
        random_state: int = 0,
    ):
        self.n_features = n_features
        self.n_hidden = n_hidden
        self.n_structures = n_structures
        self.structures_per_step = structures_per_step
        self.refresh_substeps = refresh_substeps
        self.discount = discount
        self.update_interval = update_interval
        self.gate_mode = gate_mode
        self.literal_cosine = literal_cosine
        self.leaky_slope = leaky_slope
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.max_iters = max_iters
        self.loss = loss
        self.ablation = ablation
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            n_features=self.n_features,
            n_hidden=self.n_hidden,
            n_structures=self.n_structures,
            structures_per_step=self.structures_per_step,
            refresh_substeps=self.refresh_substeps,
            discount=self.discount,
            update_interval=self.update_interval,
            gate_mode=self.gate_mode,
            literal_cosine=self.literal_cosine,
            leaky_slope=self.leaky_slope,
            lr=self.lr,
            momentum=self.momentum,
            batch_size=self.batch_size,
            max_iters=self.max_iters,
            loss=self.loss,
            ablation=self.ablation,
            seed=self.random_state,
        )

    @staticmethod
    def _as_items(values, name: str) -> np.ndarray:
        arr = check_array(values, allow_nd=True, dtype=np.float64, ensure_2d=False)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis] if name == "X" else arr
        if name == "y" and arr.ndim == 2:
            side = int(round(np.sqrt(arr.shape[1])))
            if side * side != arr.shape[1]:
                raise ValueError(
                    f"2-D y must have a square number of columns, got {arr.shape[1]}"
                )
            arr = arr.reshape(arr.shape[0], side, side)
        if arr.ndim != 3:
            raise ValueError(f"{name} must be a stack of matrices, got shape {arr.shape}")
        return arr

    def fit(self, X, y, *, train_indices=None, val_indices=None):
        """Fit on stacked counts matrices X and OD matrices y.

        X is (n_items, n_links, n_timeslices) or 2-D with one column per
        link; y is (n_items, n_spots, n_spots) or 2-D with a square number
        of columns.  Without explicit indices a seeded shuffle holds out
        ``validation_fraction`` of the items.
        """
        X3 = self._as_items(X, "X")
        y3 = self._as_items(y, "y")
        if X3.shape[0] != y3.shape[0]:
            raise ValueError(
                f"X has {X3.shape[0]} items but y has {y3.shape[0]}"
            )
        if (train_indices is None) != (val_indices is None):
            raise ValueError("pass both train_indices and val_indices or neither")
        if train_indices is None:
            n_items = X3.shape[0]
            n_train, _ = split_counts(n_items, 1.0 - self.validation_fraction)
            perm = np.random.default_rng(
                np.random.SeedSequence(self.random_state).spawn(1)[0]
            ).permutation(n_items)
            train_indices = sorted(int(i) for i in perm[:n_train])
            val_indices = sorted(int(i) for i in perm[n_train:])

        self.model_, self.history_ = fit_model(
            X3, y3, train_indices, val_indices, self._train_config()
        )
        self.loss_curve_ = np.asarray(self.history_.train_loss)
        self.n_features_in_ = X3.shape[1] * X3.shape[2]
        return self

    def predict(self, X) -> np.ndarray:
        """Estimate OD matrices for a batch of counts matrices."""
        check_is_fitted(self, "model_")
        X3 = self._as_items(X, "X")
        return predict_od(self.model_, X3)

    def predict_counts(self, y) -> np.ndarray:
        """Estimate counts matrices for a batch of OD matrices (inverse path)."""
        check_is_fitted(self, "model_")
        y3 = self._as_items(y, "y")
        return predict_counts(self.model_, y3)

    def score(self, X, y) -> float:
        """Coefficient of determination over all OD cells."""
        from .evalkit import r2

        y3 = self._as_items(y, "y")
        return r2(y3.ravel(), self.predict(X).ravel())


def make_regressor_from_model(model: CGameModel) -> CGameRegressor:
    """Wrap an already-trained low-level model in the estimator interface."""
    reg = CGameRegressor(
        n_features=model.dims.n_features,
        n_hidden=model.dims.n_hidden,
        n_structures=model.dims.n_structures,
        structures_per_step=model.matcher.structures_per_step,
        refresh_substeps=model.matcher.refresh_substeps,
        discount=model.matcher.discount,
        update_interval=model.matcher.update_interval,
        gate_mode=model.gate_mode,
        literal_cosine=model.matcher.literal_cosine,
        leaky_slope=model.fwd_encoder.slope,
    )
    reg.model_ = model
    reg.history_ = TrainingHistory()
    reg.n_features_in_ = model.dims.n_inputs
    return reg
