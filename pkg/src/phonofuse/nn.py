"""Deterministic dense-layer numerics: forward/backward passes, losses and checks.

All math runs in float64. A model stack is a flat sequence of steps
(``Dense`` | ``Relu`` | ``Dropout``); ``forward_stack`` caches exactly what
``backward`` needs, and ``grad_check`` validates the analytic gradients with
central finite differences.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NORM_EPS = 1e-12
GRAD_CHECK_MAX_PARAMS = 10_000
CHECKPOINT_VERSION = 1


@dataclass
class Dense:
    """Affine layer y = x W^T + b. Frozen layers never receive updates."""

    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    frozen: bool = False

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]


@dataclass
class Relu:
    pass


@dataclass
class Dropout:
    p: float


Step = Dense | Relu | Dropout


def init_dense(out_dim: int, in_dim: int, rng: np.random.Generator, frozen: bool = False) -> Dense:
    """Kaiming-uniform weights (bound sqrt(6/fan_in)) with zero biases."""
    bound = np.sqrt(6.0 / in_dim)
    w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    return Dense(W=w, b=np.zeros(out_dim), frozen=frozen)


def dense_forward(layer: Dense, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ValueError(f"input shape {x.shape} incompatible with W {layer.W.shape}")
    return x @ layer.W.T + layer.b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def dropout(
    x: np.ndarray, p: float, rng: np.random.Generator | None, training: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Inference mode (or p = 0) is the identity with a unit mask, so the deployed
    forward pass needs no rescaling.
    """
    x = np.asarray(x, dtype=np.float64)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x.copy(), np.ones_like(x)
    if rng is None:
        raise ValueError("training-mode dropout needs a seeded generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale v to unit L2 norm; inputs with norm <= 1e-12 pass through unchanged.

    The max-abs pre-scaling makes the result bit-identical under positive
    rescaling of v whenever the scaled components are exactly representable.
    """
    v = np.asarray(v, dtype=np.float64)
    m = float(np.max(np.abs(v))) if v.size else 0.0
    if m == 0.0:
        return v.copy()
    w = v / m
    n = float(np.sqrt(np.sum(w * w)))
    if m * n <= NORM_EPS:
        return v.copy()
    return w / n


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise ``l2_normalize`` over a batch matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0 or x.shape[1] == 0:
        return x.copy()
    m = np.max(np.abs(x), axis=1, keepdims=True)
    safe_m = np.where(m > 0.0, m, 1.0)
    w = x / safe_m
    n = np.sqrt(np.sum(w * w, axis=1, keepdims=True))
    norm = m * n
    keep = norm <= NORM_EPS
    out = w / np.where(n > 0.0, n, 1.0)
    return np.where(keep, x, out)


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy with max-subtraction stability.

    Returns (loss, dlogits) with dlogits = (softmax - onehot) / batch. An empty
    batch yields loss 0 and an empty gradient.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    batch, n_classes = logits.shape
    if labels.shape != (batch,):
        raise ValueError(f"labels shape {labels.shape} != ({batch},)")
    if batch == 0:
        return 0.0, np.zeros_like(logits)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels outside [0, {n_classes})")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = float(-np.mean(log_probs[np.arange(batch), labels]))

    dlogits = np.exp(log_probs)
    dlogits[np.arange(batch), labels] -= 1.0
    dlogits /= batch
    return loss, dlogits


def forward_stack(
    steps: list[Step],
    x: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run a stack, caching per-step inputs/masks for ``backward``."""
    cache: list[np.ndarray] = []
    out = np.asarray(x, dtype=np.float64)
    for step in steps:
        if isinstance(step, Dense):
            cache.append(out)
            out = dense_forward(step, out)
        elif isinstance(step, Relu):
            cache.append(out)
            out = relu(out)
        elif isinstance(step, Dropout):
            out, mask = dropout(out, step.p, rng, training)
            cache.append(mask)
        else:
            raise TypeError(f"unknown step {step!r}")
    return out, cache


def backward(
    steps: list[Step], cache: list[np.ndarray], dout: np.ndarray
) -> tuple[np.ndarray, dict[int, tuple[np.ndarray, np.ndarray]]]:
    """Exact reverse-mode gradients for every unfrozen Dense step.

    Frozen layers contribute no (dW, db) entries but still propagate the
    upstream gradient. Returns (d_input, {step_index: (dW, db)}).
    """
    if len(cache) != len(steps):
        raise ValueError(f"cache length {len(cache)} != stack length {len(steps)}")
    grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    d = np.asarray(dout, dtype=np.float64)
    for idx in range(len(steps) - 1, -1, -1):
        step = steps[idx]
        saved = cache[idx]
        if isinstance(step, Dense):
            if d.shape != (saved.shape[0], step.out_dim):
                raise ValueError(
                    f"step {idx}: gradient shape {d.shape} does not match cache"
                )
            if not step.frozen:
                grads[idx] = (d.T @ saved, d.sum(axis=0))
            d = d @ step.W
        elif isinstance(step, Relu):
            d = d * (saved > 0.0)
        else:  # Dropout: saved mask already carries the 1/(1-p) scale
            d = d * saved
    return d, grads


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    passed: bool
    n_params: int
    per_param: list[float] = field(default_factory=list)


def finite_difference_check(
    loss_fn,
    params: list[np.ndarray],
    analytic: list[np.ndarray],
    h: float = 1e-5,
) -> tuple[float, list[float], int]:
    """Central differences against analytic gradients, perturbing in place.

    Error per entry is |analytic - numeric| / max(1, |analytic|, |numeric|).
    loss_fn must be deterministic (reseed any dropout generator per call).
    """
    max_err = 0.0
    per_param: list[float] = []
    n = 0
    for p, g in zip(params, analytic):
        flat = p.reshape(-1)
        gflat = np.asarray(g, dtype=np.float64).reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            loss_plus = loss_fn()
            flat[i] = orig - h
            loss_minus = loss_fn()
            flat[i] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            denom = max(1.0, abs(gflat[i]), abs(numeric))
            worst = max(worst, abs(gflat[i] - numeric) / denom)
            n += 1
        per_param.append(worst)
        max_err = max(max_err, worst)
    return max_err, per_param, n


def grad_check(
    steps: list[Step],
    x: np.ndarray,
    labels: np.ndarray,
    tolerance: float = 1e-4,
    h: float = 1e-5,
    dropout_seed: int = 0,
) -> GradCheckReport:
    """Verify analytic stack gradients with central finite differences.

    Dropout masks are replayed from ``dropout_seed`` on every evaluation so the
    checked function is deterministic. Only unfrozen parameters are perturbed.
    """
    n_params = sum(
        s.W.size + s.b.size for s in steps if isinstance(s, Dense) and not s.frozen
    )
    if n_params > GRAD_CHECK_MAX_PARAMS:
        raise ValueError(
            f"{n_params} unfrozen parameters exceed the {GRAD_CHECK_MAX_PARAMS} "
            "finite-difference budget"
        )

    def loss_fn() -> float:
        rng = np.random.default_rng(dropout_seed)
        out, _ = forward_stack(steps, x, training=True, rng=rng)
        loss, _ = softmax_cross_entropy(out, labels)
        return loss

    rng = np.random.default_rng(dropout_seed)
    out, cache = forward_stack(steps, x, training=True, rng=rng)
    _, dlogits = softmax_cross_entropy(out, labels)
    _, grads = backward(steps, cache, dlogits)

    params: list[np.ndarray] = []
    analytic: list[np.ndarray] = []
    for idx, step in enumerate(steps):
        if isinstance(step, Dense) and not step.frozen:
            params.extend([step.W, step.b])
            analytic.extend([grads[idx][0], grads[idx][1]])

    max_err, per_param, n = finite_difference_check(loss_fn, params, analytic, h=h)
    return GradCheckReport(
        max_rel_error=max_err,
        tolerance=tolerance,
        passed=max_err <= tolerance,
        n_params=n,
        per_param=per_param,
    )


def _step_meta(step: Step) -> dict:
    if isinstance(step, Dense):
        return {
            "kind": "dense",
            "out_dim": int(step.out_dim),
            "in_dim": int(step.in_dim),
            "frozen": bool(step.frozen),
        }
    if isinstance(step, Relu):
        return {"kind": "relu"}
    return {"kind": "dropout", "p": float(step.p)}


def save_params(
    path: str | Path, stacks: dict[str, list[Step]], extra: dict | None = None
) -> None:
    """Checkpoint format: u64 header length, JSON header, then float64 payloads.

    Payload order is the dense layers of each stack, stacks iterated in the
    header's ``stack_order``.
    """
    stack_order = list(stacks)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "stack_order": stack_order,
        "stacks": {name: [_step_meta(s) for s in stacks[name]] for name in stack_order},
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")

    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name in stack_order:
            for step in stacks[name]:
                if isinstance(step, Dense):
                    f.write(np.ascontiguousarray(step.W, dtype="<f8").tobytes())
                    f.write(np.ascontiguousarray(step.b, dtype="<f8").tobytes())


def load_params(path: str | Path) -> tuple[dict[str, list[Step]], dict]:
    """Inverse of ``save_params``; validates payload length against the header."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated checkpoint")
    (hlen,) = struct.unpack_from("<Q", raw, 0)
    if len(raw) < 8 + hlen:
        raise ValueError(f"{path}: truncated checkpoint header")
    header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported format_version {header.get('format_version')}")

    offset = 8 + hlen
    stacks: dict[str, list[Step]] = {}
    for name in header["stack_order"]:
        steps: list[Step] = []
        for meta in header["stacks"][name]:
            kind = meta["kind"]
            if kind == "dense":
                out_dim, in_dim = meta["out_dim"], meta["in_dim"]
                w_bytes = out_dim * in_dim * 8
                b_bytes = out_dim * 8
                if offset + w_bytes + b_bytes > len(raw):
                    raise ValueError(f"{path}: payload shorter than header declares")
                w = np.frombuffer(raw, dtype="<f8", count=out_dim * in_dim, offset=offset)
                offset += w_bytes
                b = np.frombuffer(raw, dtype="<f8", count=out_dim, offset=offset)
                offset += b_bytes
                steps.append(
                    Dense(
                        W=w.reshape(out_dim, in_dim).astype(np.float64),
                        b=b.astype(np.float64),
                        frozen=bool(meta["frozen"]),
                    )
                )
            elif kind == "relu":
                steps.append(Relu())
            elif kind == "dropout":
                steps.append(Dropout(p=float(meta["p"])))
            else:
                raise ValueError(f"{path}: unknown step kind {kind!r}")
        stacks[name] = steps
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing payload bytes")
    return stacks, header
