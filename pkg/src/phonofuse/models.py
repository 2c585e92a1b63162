"""Fusion topologies over paired acoustic/text embedding inputs.

Five strategies share one model shape (optional per-modality branch stacks
feeding a shared head):

* audio / text: normalize -> FC(256)-ReLU-Drop -> FC(C)
* early:        normalize both -> concat -> FC(512)-ReLU-Drop -> FC(256)-ReLU-Drop -> FC(C)
* intermediate: per-branch FC(256)-ReLU-Drop -> concat -> FC(256)-ReLU-Drop -> FC(C)
* late:         frozen unimodal trunks (penultimate ReLU tap) -> per-branch
                FC(128)-ReLU -> concat -> FC(128)-ReLU-Drop -> FC(C)

All widths are overridable through the FusionSpec.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import nn

STRATEGY_AUDIO = "audio"
STRATEGY_TEXT = "text"
STRATEGY_EARLY = "early"
STRATEGY_INTERMEDIATE = "intermediate"
STRATEGY_LATE = "late"
STRATEGIES = (
    STRATEGY_AUDIO,
    STRATEGY_TEXT,
    STRATEGY_EARLY,
    STRATEGY_INTERMEDIATE,
    STRATEGY_LATE,
)

NORM_L2 = "l2"
NORM_ZSCORE = "zscore"
NORM_NONE = "none"
NORMALIZATIONS = (NORM_L2, NORM_ZSCORE, NORM_NONE)

DEFAULT_WIDTHS: dict[str, dict[str, list[int]]] = {
    STRATEGY_AUDIO: {"head": [256]},
    STRATEGY_TEXT: {"head": [256]},
    STRATEGY_EARLY: {"head": [512, 256]},
    STRATEGY_INTERMEDIATE: {"audio": [256], "text": [256], "head": [256]},
    STRATEGY_LATE: {"audio": [128], "text": [128], "head": [128]},
}


@dataclass
class FusionSpec:
    """Declarative description of one model topology."""

    strategy: str
    da: int
    dt: int
    n_classes: int
    hidden: dict[str, list[int]] | None = None
    dropout_p: float = 0.1
    normalize: str = NORM_L2
    audio_checkpoint: str | None = None
    text_checkpoint: str | None = None

    def widths(self) -> dict[str, list[int]]:
        merged = {k: list(v) for k, v in DEFAULT_WIDTHS[self.strategy].items()}
        if self.hidden:
            for key, value in self.hidden.items():
                if key not in merged:
                    raise ValueError(
                        f"stage {key!r} not used by strategy {self.strategy!r}"
                    )
                merged[key] = [int(w) for w in value]
        return merged

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.normalize not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalize!r}")
        if min(self.da, self.dt, self.n_classes) < 1:
            raise ValueError("da, dt and n_classes must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        for stage, ws in self.widths().items():
            if not ws or any(w < 1 for w in ws):
                raise ValueError(f"stage {stage!r} widths must be positive, got {ws}")
        if self.strategy == STRATEGY_LATE:
            if not self.audio_checkpoint or not self.text_checkpoint:
                raise ValueError("late fusion requires trained unimodal checkpoints")

    def to_dict(self, include_checkpoints: bool = True) -> dict:
        out = {
            "strategy": self.strategy,
            "da": self.da,
            "dt": self.dt,
            "n_classes": self.n_classes,
            "hidden": self.hidden,
            "dropout_p": self.dropout_p,
            "normalize": self.normalize,
        }
        if include_checkpoints:
            out["audio_checkpoint"] = self.audio_checkpoint
            out["text_checkpoint"] = self.text_checkpoint
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "FusionSpec":
        return cls(
            strategy=d["strategy"],
            da=int(d["da"]),
            dt=int(d["dt"]),
            n_classes=int(d["n_classes"]),
            hidden=d.get("hidden"),
            dropout_p=float(d.get("dropout_p", 0.1)),
            normalize=d.get("normalize", NORM_L2),
            audio_checkpoint=d.get("audio_checkpoint"),
            text_checkpoint=d.get("text_checkpoint"),
        )


@dataclass
class Normalizer:
    """Per-modality input normalization; zscore stats come from training folds."""

    mode: str = NORM_L2
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def fit(self, x: np.ndarray) -> None:
        if self.mode != NORM_ZSCORE:
            return
        x = np.asarray(x, dtype=np.float64)
        self.mean = x.mean(axis=0)
        std = x.std(axis=0)
        self.std = np.where(std > 1e-8, std, 1.0)

    @property
    def fitted(self) -> bool:
        return self.mode != NORM_ZSCORE or self.mean is not None

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.mode == NORM_NONE:
            return x
        if self.mode == NORM_L2:
            return nn.l2_normalize_rows(x)
        if self.mean is None or self.std is None:
            raise RuntimeError("zscore normalizer used before fitting")
        return (x - self.mean) / self.std

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "mean": None if self.mean is None else self.mean.tolist(),
            "std": None if self.std is None else self.std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(
            mode=d["mode"],
            mean=None if d["mean"] is None else np.asarray(d["mean"], dtype=np.float64),
            std=None if d["std"] is None else np.asarray(d["std"], dtype=np.float64),
        )


@dataclass
class FusionModel:
    spec: FusionSpec
    audio_branch: list[nn.Step]
    text_branch: list[nn.Step]
    head: list[nn.Step]
    audio_norm: Normalizer
    text_norm: Normalizer
    init_seed: int = 0

    @property
    def uses_audio(self) -> bool:
        return self.spec.strategy != STRATEGY_TEXT

    @property
    def uses_text(self) -> bool:
        return self.spec.strategy != STRATEGY_AUDIO


@dataclass
class ModelCache:
    """Forward-pass activations for one batch, consumed by ``backward_model``."""

    audio: list[np.ndarray] | None
    text: list[np.ndarray] | None
    head: list[np.ndarray]
    feat_widths: list[int]


def named_layers(model: FusionModel) -> list[tuple[str, nn.Dense]]:
    """(path, layer) pairs in deterministic stack order; path is 'stack.step_idx'."""
    out = []
    for stack_name, steps in (
        ("audio", model.audio_branch),
        ("text", model.text_branch),
        ("head", model.head),
    ):
        for idx, step in enumerate(steps):
            if isinstance(step, nn.Dense):
                out.append((f"{stack_name}.{idx}", step))
    return out


def parameter_count(model: FusionModel) -> int:
    return sum(layer.W.size + layer.b.size for _, layer in named_layers(model))


def path_depth(model: FusionModel, modality: str = "audio") -> int:
    """Dense-layer count along one modality's input-to-logits path."""
    branch = model.audio_branch if modality == "audio" else model.text_branch
    return sum(isinstance(s, nn.Dense) for s in branch) + sum(
        isinstance(s, nn.Dense) for s in model.head
    )


def _classifier_steps(
    in_dim: int, widths: list[int], p: float, n_classes: int, make
) -> list[nn.Step]:
    steps: list[nn.Step] = []
    cur = in_dim
    for w in widths:
        steps.extend([make(w, cur), nn.Relu(), nn.Dropout(p)])
        cur = w
    steps.append(make(n_classes, cur))
    return steps


def _trunk_from_unimodal(model: FusionModel) -> list[nn.Step]:
    """Frozen copy of a unimodal model up to its penultimate (pre-dropout) ReLU."""
    steps: list[nn.Step] = []
    dense_seen = 0
    n_dense = sum(isinstance(s, nn.Dense) for s in model.head)
    for step in model.head:
        if isinstance(step, nn.Dense):
            dense_seen += 1
            if dense_seen == n_dense:
                break  # classification layer is not part of the trunk
            steps.append(nn.Dense(W=step.W.copy(), b=step.b.copy(), frozen=True))
        elif isinstance(step, nn.Relu):
            steps.append(nn.Relu())
        # dropout steps are skipped: the tap is the eval-mode activation
    return steps


def _trunk_out_dim(trunk: list[nn.Step], fallback: int) -> int:
    for step in reversed(trunk):
        if isinstance(step, nn.Dense):
            return step.out_dim
    return fallback


def build_model(spec: FusionSpec, seed: int) -> FusionModel:
    """Construct a model with seeded Kaiming-uniform init.

    Layer draw order is fixed (audio branch, text branch, head), so equal seeds
    give bit-identical parameters.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    widths = spec.widths()
    p = spec.dropout_p

    def make(out_dim: int, in_dim: int) -> nn.Dense:
        return nn.init_dense(out_dim, in_dim, rng)

    audio_branch: list[nn.Step] = []
    text_branch: list[nn.Step] = []
    audio_norm = Normalizer(mode=spec.normalize)
    text_norm = Normalizer(mode=spec.normalize)

    if spec.strategy in (STRATEGY_AUDIO, STRATEGY_TEXT):
        in_dim = spec.da if spec.strategy == STRATEGY_AUDIO else spec.dt
        head = _classifier_steps(in_dim, widths["head"], p, spec.n_classes, make)
    elif spec.strategy == STRATEGY_EARLY:
        head = _classifier_steps(
            spec.da + spec.dt, widths["head"], p, spec.n_classes, make
        )
    elif spec.strategy == STRATEGY_INTERMEDIATE:
        cur = spec.da
        for w in widths["audio"]:
            audio_branch.extend([make(w, cur), nn.Relu(), nn.Dropout(p)])
            cur = w
        audio_out = cur
        cur = spec.dt
        for w in widths["text"]:
            text_branch.extend([make(w, cur), nn.Relu(), nn.Dropout(p)])
            cur = w
        head = _classifier_steps(
            audio_out + cur, widths["head"], p, spec.n_classes, make
        )
    else:  # late
        audio_model = load_model(spec.audio_checkpoint)
        text_model = load_model(spec.text_checkpoint)
        for sub, want, label in (
            (audio_model, STRATEGY_AUDIO, "audio"),
            (text_model, STRATEGY_TEXT, "text"),
        ):
            if sub.spec.strategy != want:
                raise ValueError(
                    f"{label} checkpoint holds a {sub.spec.strategy!r} model"
                )
            if sub.spec.n_classes != spec.n_classes:
                raise ValueError(
                    f"{label} trunk was trained for {sub.spec.n_classes} classes, "
                    f"spec declares {spec.n_classes}"
                )
            if sub.spec.normalize != spec.normalize:
                raise ValueError(
                    f"{label} trunk normalization {sub.spec.normalize!r} != "
                    f"spec {spec.normalize!r}"
                )
        if audio_model.spec.da != spec.da or text_model.spec.dt != spec.dt:
            raise ValueError("trunk embedding dimensions do not match the declared da/dt")

        audio_branch = _trunk_from_unimodal(audio_model)
        cur = _trunk_out_dim(audio_branch, spec.da)
        for w in widths["audio"]:
            audio_branch.extend([make(w, cur), nn.Relu()])
            cur = w
        audio_out = cur

        text_branch = _trunk_from_unimodal(text_model)
        cur = _trunk_out_dim(text_branch, spec.dt)
        for w in widths["text"]:
            text_branch.extend([make(w, cur), nn.Relu()])
            cur = w

        head = _classifier_steps(
            audio_out + cur, widths["head"], p, spec.n_classes, make
        )
        audio_norm = audio_model.audio_norm
        text_norm = text_model.text_norm

    return FusionModel(
        spec=spec,
        audio_branch=audio_branch,
        text_branch=text_branch,
        head=head,
        audio_norm=audio_norm,
        text_norm=text_norm,
        init_seed=seed,
    )


def fit_normalizers(model: FusionModel, acoustic: np.ndarray, text: np.ndarray) -> None:
    """Fit any unfitted zscore statistics from training-fold data only."""
    if model.uses_audio and not model.audio_norm.fitted:
        model.audio_norm.fit(acoustic)
    if model.uses_text and not model.text_norm.fitted:
        model.text_norm.fit(text)


def _check_input(name: str, x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{name} input shape {x.shape} != (batch, {dim})")
    return x


def forward_with_cache(
    model: FusionModel,
    acoustic: np.ndarray | None,
    text: np.ndarray | None,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ModelCache]:
    feats: list[np.ndarray] = []
    widths: list[int] = []
    audio_cache = text_cache = None

    if model.uses_audio:
        xa = _check_input("acoustic", acoustic, model.spec.da)
        xa = model.audio_norm.apply(xa)
        xa, audio_cache = nn.forward_stack(model.audio_branch, xa, training, rng)
        feats.append(xa)
        widths.append(xa.shape[1])
    if model.uses_text:
        xt = _check_input("text", text, model.spec.dt)
        xt = model.text_norm.apply(xt)
        xt, text_cache = nn.forward_stack(model.text_branch, xt, training, rng)
        feats.append(xt)
        widths.append(xt.shape[1])

    if len(feats) == 2 and feats[0].shape[0] != feats[1].shape[0]:
        raise ValueError(
            f"modality batch sizes disagree: {feats[0].shape[0]} vs {feats[1].shape[0]}"
        )
    fused = np.concatenate(feats, axis=1) if len(feats) > 1 else feats[0]
    logits, head_cache = nn.forward_stack(model.head, fused, training, rng)
    return logits, ModelCache(
        audio=audio_cache, text=text_cache, head=head_cache, feat_widths=widths
    )


def forward(
    model: FusionModel,
    acoustic: np.ndarray | None,
    text: np.ndarray | None,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    logits, _ = forward_with_cache(model, acoustic, text, training, rng)
    return logits


def backward_model(
    model: FusionModel, cache: ModelCache, dlogits: np.ndarray
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Gradients for every unfrozen layer, keyed by the ``named_layers`` path."""
    grads: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    d, head_grads = nn.backward(model.head, cache.head, dlogits)
    for idx, g in head_grads.items():
        grads[f"head.{idx}"] = g

    parts: list[np.ndarray] = []
    offset = 0
    for w in cache.feat_widths:
        parts.append(d[:, offset : offset + w])
        offset += w

    part_iter = iter(parts)
    if model.uses_audio:
        _, branch_grads = nn.backward(model.audio_branch, cache.audio, next(part_iter))
        for idx, g in branch_grads.items():
            grads[f"audio.{idx}"] = g
    if model.uses_text:
        _, branch_grads = nn.backward(model.text_branch, cache.text, next(part_iter))
        for idx, g in branch_grads.items():
            grads[f"text.{idx}"] = g
    return grads


def grad_check_model(
    model: FusionModel,
    acoustic: np.ndarray | None,
    text: np.ndarray | None,
    labels: np.ndarray,
    tolerance: float = 1e-4,
    h: float = 1e-5,
    dropout_seed: int = 0,
) -> nn.GradCheckReport:
    """Finite-difference check over a whole model, frozen trunks excluded."""
    unfrozen = [(name, layer) for name, layer in named_layers(model) if not layer.frozen]
    n_params = sum(layer.W.size + layer.b.size for _, layer in unfrozen)
    if n_params > nn.GRAD_CHECK_MAX_PARAMS:
        raise ValueError(
            f"{n_params} unfrozen parameters exceed the {nn.GRAD_CHECK_MAX_PARAMS} "
            "finite-difference budget"
        )

    def loss_fn() -> float:
        rng = np.random.default_rng(dropout_seed)
        logits, _ = forward_with_cache(model, acoustic, text, training=True, rng=rng)
        loss, _ = nn.softmax_cross_entropy(logits, labels)
        return loss

    rng = np.random.default_rng(dropout_seed)
    logits, cache = forward_with_cache(model, acoustic, text, training=True, rng=rng)
    _, dlogits = nn.softmax_cross_entropy(logits, labels)
    grads = backward_model(model, cache, dlogits)

    params = []
    analytic = []
    for name, layer in unfrozen:
        params.extend([layer.W, layer.b])
        analytic.extend([grads[name][0], grads[name][1]])

    max_err, per_param, n = nn.finite_difference_check(loss_fn, params, analytic, h=h)
    return nn.GradCheckReport(
        max_rel_error=max_err,
        tolerance=tolerance,
        passed=max_err <= tolerance,
        n_params=n,
        per_param=per_param,
    )


def save_model(model: FusionModel, path: str | Path) -> None:
    """Write a checkpoint; the FusionSpec (checkpoint paths dropped) rides in the header."""
    stacks = {
        "audio": model.audio_branch,
        "text": model.text_branch,
        "head": model.head,
    }
    extra = {
        "fusion_spec": model.spec.to_dict(include_checkpoints=False),
        "normalizers": {
            "audio": model.audio_norm.to_dict(),
            "text": model.text_norm.to_dict(),
        },
        "init_seed": model.init_seed,
    }
    nn.save_params(path, stacks, extra)


def load_model(path: str | Path) -> FusionModel:
    stacks, header = nn.load_params(path)
    spec = FusionSpec.from_dict(header["fusion_spec"])
    return FusionModel(
        spec=spec,
        audio_branch=stacks["audio"],
        text_branch=stacks["text"],
        head=stacks["head"],
        audio_norm=Normalizer.from_dict(header["normalizers"]["audio"]),
        text_norm=Normalizer.from_dict(header["normalizers"]["text"]),
        init_seed=int(header.get("init_seed", 0)),
    )


def clone_model(model: FusionModel) -> FusionModel:
    return copy.deepcopy(model)
