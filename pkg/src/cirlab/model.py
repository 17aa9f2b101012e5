"""Small differentiable classifier: MLP feature extractor + linear head.

The extractor is a stack of dense layers with an elementwise activation
applied after each one; the feature dimension is the last layer's width.
The head is a single dense layer whose columns correspond to output classes
and can be widened in place when new classes arrive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, NumericalError, ShapeError

CHECKPOINT_FORMAT = "cir-model"
CHECKPOINT_VERSION = 1

ACTIVATIONS = ("relu", "identity")


@dataclass
class ModelState:
    """All parameters of the classifier.

    `layer_ws[i]` has shape (fan_in, fan_out); `head_w` has shape
    (d_feat, n_classes) with one column per class.
    """

    layer_ws: list[np.ndarray]
    layer_bs: list[np.ndarray]
    head_w: np.ndarray
    head_b: np.ndarray
    activation: str = "relu"

    @property
    def d_in(self) -> int:
        return self.layer_ws[0].shape[0] if self.layer_ws else self.head_w.shape[0]

    @property
    def d_feat(self) -> int:
        return self.head_w.shape[0]

    @property
    def n_classes(self) -> int:
        return self.head_w.shape[1]


# An old-model snapshot is just a ModelState that is never trained; the alias
# documents intent at call sites.
OldModelSnapshot = ModelState


def _glorot_limit(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_model(
    d_in: int,
    hidden: tuple[int, ...],
    n_classes: int,
    rng: np.random.Generator,
    activation: str = "relu",
) -> ModelState:
    """Build a model with uniform [-a, a] weights, a = sqrt(6/(fan_in+fan_out)).

    Biases start at zero.  `n_classes` may be 0: the head is then a
    (d_feat, 0) matrix to be populated by `expand_head`.
    """
    if d_in <= 0 or any(h <= 0 for h in hidden):
        raise ShapeError(f"invalid architecture: d_in={d_in}, hidden={hidden}")
    if activation not in ACTIVATIONS:
        raise ShapeError(f"unknown activation {activation!r}")
    layer_ws, layer_bs = [], []
    fan_in = d_in
    for width in hidden:
        a = _glorot_limit(fan_in, width)
        layer_ws.append(rng.uniform(-a, a, size=(fan_in, width)))
        layer_bs.append(np.zeros(width))
        fan_in = width
    if n_classes > 0:
        a = _glorot_limit(fan_in, n_classes)
        head_w = rng.uniform(-a, a, size=(fan_in, n_classes))
    else:
        head_w = np.zeros((fan_in, 0))
    head_b = np.zeros(n_classes)
    return ModelState(layer_ws, layer_bs, head_w, head_b, activation)


def _check_input(x: np.ndarray, dim: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"{what} must have dimension {dim}, got shape {x.shape}")
    return x


def _activate(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.where(x > 0, x, 0.0)
    return x


def forward_features(state: ModelState, x) -> np.ndarray:
    """h = f(x): run the extractor. Accepts a single vector or a (B, d_in) batch."""
    single = np.asarray(x).ndim == 1
    h = _check_input(x, state.d_in, "input")
    for w, b in zip(state.layer_ws, state.layer_bs):
        h = _activate(h @ w + b, state.activation)
    return h[0] if single else h


def forward_logits(state: ModelState, h) -> np.ndarray:
    """z = g(h): apply the classification head to feature vectors."""
    single = np.asarray(h).ndim == 1
    h = _check_input(h, state.d_feat, "feature")
    z = h @ state.head_w + state.head_b
    return z[0] if single else z


def forward_all(state: ModelState, x) -> tuple[np.ndarray, np.ndarray]:
    """(features, logits) for a batch, one pass."""
    h = forward_features(state, x)
    return h, forward_logits(state, h)


def expand_head(state: ModelState, n_new: int, rng: np.random.Generator) -> ModelState:
    """Widen the head by `n_new` randomly initialized columns.

    Existing columns are preserved bit-for-bit; the extractor is untouched.
    New columns use the construction scheme with the expanded fan-out.
    """
    if n_new < 0:
        raise ShapeError(f"n_new must be >= 0, got {n_new}")
    out = snapshot(state)
    if n_new == 0:
        return out
    total = state.n_classes + n_new
    a = _glorot_limit(state.d_feat, total)
    new_cols = rng.uniform(-a, a, size=(state.d_feat, n_new))
    out.head_w = np.concatenate([out.head_w, new_cols], axis=1)
    out.head_b = np.concatenate([out.head_b, np.zeros(n_new)])
    return out


def snapshot(state: ModelState) -> OldModelSnapshot:
    """Deep copy; training the live model never touches the snapshot."""
    return ModelState(
        [w.copy() for w in state.layer_ws],
        [b.copy() for b in state.layer_bs],
        state.head_w.copy(),
        state.head_b.copy(),
        state.activation,
    )


def param_items(state: ModelState) -> list[tuple[str, np.ndarray]]:
    """Stable (name, array) listing of every trainable parameter."""
    items = []
    for i, (w, b) in enumerate(zip(state.layer_ws, state.layer_bs)):
        items.append((f"layer{i}.w", w))
        items.append((f"layer{i}.b", b))
    items.append(("head.w", state.head_w))
    items.append(("head.b", state.head_b))
    return items


class TracedModel:
    """Forward passes that build an autodiff graph over the model parameters."""

    def __init__(self, state: ModelState):
        self.state = state
        self.params: dict[str, Tensor] = {name: Tensor(arr) for name, arr in param_items(state)}

    def features(self, x) -> Tensor:
        h: Tensor = Tensor(_check_input(x, self.state.d_in, "input"))
        for i in range(len(self.state.layer_ws)):
            h = h @ self.params[f"layer{i}.w"] + self.params[f"layer{i}.b"]
            if self.state.activation == "relu":
                h = h.relu()
        return h

    def logits(self, h: Tensor) -> Tensor:
        return h @ self.params["head.w"] + self.params["head.b"]


def compute_gradients(state: ModelState, build_loss) -> tuple[float, dict[str, np.ndarray]]:
    """Differentiate a scalar loss with respect to every model parameter.

    `build_loss(traced)` must assemble the loss from the traced forward ops
    (and any constants) and return a scalar Tensor.  Returns the loss value
    and a dense name->gradient dict (zeros for parameters off the loss path).
    """
    traced = TracedModel(state)
    loss = build_loss(traced)
    if not isinstance(loss, Tensor):
        loss = Tensor(loss)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericalError(f"loss is non-finite ({value!r}); aborting gradient computation")
    loss.backward()
    grads = {}
    for name, t in traced.params.items():
        grads[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
    return value, grads


def save_model(path, state: ModelState, extra_arrays: dict[str, np.ndarray] | None = None,
               extra_meta: dict | None = None) -> None:
    """Write a versioned .npz checkpoint; float64 arrays round-trip bitwise."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "n_layers": len(state.layer_ws),
        "activation": state.activation,
        "n_classes": state.n_classes,
        "d_feat": state.d_feat,
        "d_in": state.d_in,
    }
    if extra_meta:
        meta.update(extra_meta)
    arrays = {}
    for name, arr in param_items(state):
        arrays["param__" + name] = arr
    if extra_arrays:
        for name, arr in extra_arrays.items():
            arrays["extra__" + name] = arr
    np.savez(path, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
             **arrays)


def load_model(path) -> tuple[ModelState, dict[str, np.ndarray], dict]:
    """Inverse of `save_model`: (state, extra arrays, meta)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"not a {CHECKPOINT_FORMAT} checkpoint: {meta.get('format')!r}")
        layer_ws = [data[f"param__layer{i}.w"] for i in range(meta["n_layers"])]
        layer_bs = [data[f"param__layer{i}.b"] for i in range(meta["n_layers"])]
        state = ModelState(layer_ws, layer_bs, data["param__head.w"], data["param__head.b"],
                           meta["activation"])
        extras = {k[len("extra__"):]: data[k] for k in data.files if k.startswith("extra__")}
    return state, extras, meta
