"""AdamW, the epoch loop with early stopping, k-fold cross-validation and grid search."""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import data, models, nn

# Validation loss must improve by more than this to reset the patience counter.
EARLY_STOP_MIN_DELTA = 1e-6


@dataclass
class TrainConfig:
    learning_rate: float = 3e-5
    batch_size: int = 8
    max_epochs: int = 30
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size and max_epochs must be positive")
        if self.weight_decay < 0 or self.eps <= 0:
            raise ValueError("weight_decay must be >= 0 and eps > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if not 1 <= self.patience <= self.max_epochs:
            raise ValueError("patience must satisfy 1 <= patience <= max_epochs")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "weight_decay": self.weight_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "patience": self.patience,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        cfg = cls(**{k: d[k] for k in cls().to_dict() if k in d})
        cfg.validate()
        return cfg


@dataclass
class GridSpec:
    learning_rates: list[float]
    batch_sizes: list[int]
    dropout_rates: list[float]

    def validate(self) -> None:
        if not (self.learning_rates and self.batch_sizes and self.dropout_rates):
            raise ValueError("grid axes must be non-empty")

    @classmethod
    def default(cls) -> "GridSpec":
        return cls(
            learning_rates=[1e-5, 3e-5, 1e-4],
            batch_sizes=[8, 16, 32],
            dropout_rates=[0.1, 0.3, 0.5],
        )

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        spec = cls(
            learning_rates=[float(x) for x in d["learning_rates"]],
            batch_sizes=[int(x) for x in d["batch_sizes"]],
            dropout_rates=[float(x) for x in d["dropout_rates"]],
        )
        spec.validate()
        return spec


class AdamW:
    """AdamW with decoupled weight decay.

    The decay is applied multiplicatively, theta <- theta * (1 - lr*wd), before
    the bias-corrected Adam step; a zero-gradient step therefore scales the
    parameter by exactly (1 - lr*wd).
    """

    def __init__(self, params: dict[str, np.ndarray], config: TrainConfig):
        self.params = params
        self.config = config
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        cfg = self.config
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for key, g in grads.items():
            p = self.params[key]
            if p.shape != g.shape:
                raise ValueError(f"{key}: gradient shape {g.shape} != param {p.shape}")
            m = self.m[key]
            v = self.v[key]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p *= 1.0 - cfg.learning_rate * cfg.weight_decay
            p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float


@dataclass
class Checkpoint:
    """Deep copy of the model from the best validation-loss epoch."""

    model: models.FusionModel
    epoch: int
    val_loss: float
    val_acc: float


Batch = tuple[np.ndarray, np.ndarray, np.ndarray]  # (acoustic, text, labels)


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    if labels.size == 0:
        return 0.0
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def train_one(
    model: models.FusionModel,
    train_data: Batch,
    val_data: Batch,
    config: TrainConfig,
) -> tuple[Checkpoint, list[EpochStats]]:
    """Epoch loop with seeded shuffles, AdamW updates and early stopping.

    Stops once validation loss has failed to improve by more than
    ``EARLY_STOP_MIN_DELTA`` for ``patience`` consecutive epochs, and returns
    the checkpoint from the best-validation-loss epoch. The live model is left
    at its last-epoch state.
    """
    config.validate()
    xa_tr, xt_tr, y_tr = train_data
    xa_val, xt_val, y_val = val_data
    n = y_tr.shape[0]
    if n == 0 or y_val.shape[0] == 0:
        raise ValueError("train and validation sets must be non-empty")

    seq = np.random.SeedSequence(config.seed)
    shuffle_rng, dropout_rng = (np.random.default_rng(s) for s in seq.spawn(2))

    trainable = {
        name: layer for name, layer in models.named_layers(model) if not layer.frozen
    }
    flat_params: dict[str, np.ndarray] = {}
    for name, layer in trainable.items():
        flat_params[f"{name}.W"] = layer.W
        flat_params[f"{name}.b"] = layer.b
    optimizer = AdamW(flat_params, config)

    history: list[EpochStats] = []
    best: Checkpoint | None = None
    stale = 0

    for epoch in range(1, config.max_epochs + 1):
        perm = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            logits, cache = models.forward_with_cache(
                model, xa_tr[idx], xt_tr[idx], training=True, rng=dropout_rng
            )
            loss, dlogits = nn.softmax_cross_entropy(logits, y_tr[idx])
            grads = models.backward_model(model, cache, dlogits)
            flat_grads = {}
            for name, (dw, db) in grads.items():
                flat_grads[f"{name}.W"] = dw
                flat_grads[f"{name}.b"] = db
            optimizer.step(flat_grads)
            loss_sum += loss * idx.size
        train_loss = loss_sum / n

        val_logits = models.forward(model, xa_val, xt_val, training=False)
        val_loss, _ = nn.softmax_cross_entropy(val_logits, y_val)
        val_acc = _accuracy(val_logits, y_val)
        history.append(EpochStats(epoch, train_loss, val_loss, val_acc))

        if best is None or val_loss < best.val_loss - EARLY_STOP_MIN_DELTA:
            best = Checkpoint(
                model=models.clone_model(model),
                epoch=epoch,
                val_loss=val_loss,
                val_acc=val_acc,
            )
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    assert best is not None
    return best, history


@dataclass
class FoldOutcome:
    fold: int
    history: list[EpochStats]
    checkpoint: Checkpoint

    @property
    def val_acc(self) -> float:
        return self.checkpoint.val_acc

    @property
    def val_loss(self) -> float:
        return self.checkpoint.val_loss


@dataclass
class CVResult:
    folds: list[FoldOutcome]
    best_fold: int
    checkpoint: Checkpoint
    selection_metric: float

    @property
    def mean_val_acc(self) -> float:
        return sum(f.val_acc for f in self.folds) / len(self.folds)

    @property
    def mean_val_loss(self) -> float:
        return sum(f.val_loss for f in self.folds) / len(self.folds)


def select_best_fold(outcomes: list[FoldOutcome]) -> int:
    """Highest validation accuracy; ties broken by lower loss, then lower index."""
    best = min(outcomes, key=lambda o: (-o.val_acc, o.val_loss, o.fold))
    return best.fold


def cross_validate(
    spec: models.FusionSpec,
    train_split: data.SplitAssignment,
    manifest: data.DatasetManifest,
    config: TrainConfig,
    k: int = 5,
    jobs: int = 1,
) -> CVResult:
    """k independent train/validation cycles over a stratified fold assignment.

    Fold f trains a fresh model with seeds derived as ``config.seed + f``; folds
    are independent, so execution order (and ``jobs`` parallelism) cannot change
    the result.
    """
    config.validate()
    labels = manifest.labels()
    folds = data.stratified_kfold(train_split.train_ids, labels, k, config.seed)
    ordered = [sid for sid in manifest.sample_ids() if sid in train_split.train_ids]

    def run_fold(fold: int) -> FoldOutcome:
        val_ids = {sid for sid in ordered if folds.fold_of[sid] == fold}
        fit_ids = [sid for sid in ordered if sid not in val_ids]
        xa_tr, xt_tr, y_tr, _ = data.gather_arrays(manifest, fit_ids)
        xa_val, xt_val, y_val, _ = data.gather_arrays(manifest, val_ids)

        fold_seed = config.seed + fold
        model = models.build_model(spec, seed=fold_seed)
        models.fit_normalizers(model, xa_tr, xt_tr)
        fold_config = replace(config, seed=fold_seed)
        checkpoint, history = train_one(
            model, (xa_tr, xt_tr, y_tr), (xa_val, xt_val, y_val), fold_config
        )
        return FoldOutcome(fold=fold, history=history, checkpoint=checkpoint)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_fold, range(k)))
    else:
        outcomes = [run_fold(f) for f in range(k)]

    best = select_best_fold(outcomes)
    return CVResult(
        folds=outcomes,
        best_fold=best,
        checkpoint=outcomes[best].checkpoint,
        selection_metric=outcomes[best].val_acc,
    )


@dataclass
class GridCell:
    index: int
    learning_rate: float
    batch_size: int
    dropout_p: float
    mean_val_acc: float
    mean_val_loss: float
    fold_val_accs: list[float]


@dataclass
class GridResult:
    ranking: list[GridCell]  # best first
    winner: GridCell
    winner_config: TrainConfig
    winner_spec: models.FusionSpec
    winner_cv: CVResult


def grid_search(
    spec: models.FusionSpec,
    train_split: data.SplitAssignment,
    manifest: data.DatasetManifest,
    grid: GridSpec,
    config: TrainConfig,
    k: int = 5,
    jobs: int = 1,
) -> GridResult:
    """Evaluate the full Cartesian product via cross-validation.

    Cells are ranked by mean validation accuracy across folds, ties broken by
    lower mean validation loss and then grid order.
    """
    grid.validate()
    cells: list[GridCell] = []
    cvs: list[CVResult] = []
    combos = list(
        itertools.product(grid.learning_rates, grid.batch_sizes, grid.dropout_rates)
    )
    for index, (lr, bs, dp) in enumerate(combos):
        cell_spec = replace(spec, dropout_p=dp)
        cell_config = replace(config, learning_rate=lr, batch_size=bs)
        cv = cross_validate(cell_spec, train_split, manifest, cell_config, k=k, jobs=jobs)
        cells.append(
            GridCell(
                index=index,
                learning_rate=lr,
                batch_size=bs,
                dropout_p=dp,
                mean_val_acc=cv.mean_val_acc,
                mean_val_loss=cv.mean_val_loss,
                fold_val_accs=[f.val_acc for f in cv.folds],
            )
        )
        cvs.append(cv)

    ranking = sorted(cells, key=lambda c: (-c.mean_val_acc, c.mean_val_loss, c.index))
    winner = ranking[0]
    return GridResult(
        ranking=ranking,
        winner=winner,
        winner_config=replace(
            config, learning_rate=winner.learning_rate, batch_size=winner.batch_size
        ),
        winner_spec=replace(spec, dropout_p=winner.dropout_p),
        winner_cv=cvs[winner.index],
    )
