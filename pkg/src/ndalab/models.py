"""Dense feature networks with an exposed pre-logit latent layer."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError

CHECKPOINT_VERSION = 1


@dataclass
class Dense:
    weight: Tensor
    bias: Tensor
    activation: bool

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class ForwardResult:
    latent: Tensor
    logits: Tensor
    probs: Tensor


class Model:
    """Stack of dense layers; the layer before the logit layer is the latent.

    Hidden layers use relu. The latent layer is linear so the latent space
    is not clipped at zero, and the logit layer is linear.
    """

    def __init__(self, layers: list[Dense], latent_index: int | None = None):
        if len(layers) < 2:
            raise ContractError("a model needs at least a latent layer and a logit layer")
        for i, (a, b) in enumerate(zip(layers, layers[1:])):
            if a.out_dim != b.in_dim:
                raise ContractError(f"layer {i} outputs {a.out_dim} but layer {i + 1} expects {b.in_dim}")
        self.layers = layers
        self.latent_index = len(layers) - 2 if latent_index is None else latent_index
        if not 0 <= self.latent_index < len(layers) - 1:
            raise ContractError("latent layer must come before the logit layer")
        if self.num_classes < 2:
            raise ContractError("logit layer must have at least 2 outputs")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def latent_dim(self) -> int:
        return self.layers[self.latent_index].out_dim

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    def copy(self) -> "Model":
        layers = [Dense(Tensor(l.weight.data, True, l.weight.name),
                        Tensor(l.bias.data, True, l.bias.name), l.activation)
                  for l in self.layers]
        return Model(layers, self.latent_index)

    def load_state(self, other: "Model"):
        """Copy parameter values from a model of identical structure."""
        for mine, theirs in zip(self.parameters(), other.parameters()):
            if mine.shape != theirs.shape:
                raise ContractError("load_state: models have different structure")
            mine.data[...] = theirs.data

    def state_bytes(self) -> bytes:
        return b"".join(p.data.tobytes() for p in self.parameters())


def build_model(input_dim: int, hidden_dims, latent_dim: int, num_classes: int,
                seed: int = 0) -> Model:
    """Scaled-uniform (Glorot) init: U(-b, b) with b = sqrt(6 / (fan_in + fan_out))."""
    hidden_dims = list(hidden_dims)
    dims = [input_dim, *hidden_dims, latent_dim, num_classes]
    if any(d < 1 for d in dims):
        raise ContractError(f"all layer sizes must be >= 1, got {dims}")
    if num_classes < 2:
        raise ContractError(f"num_classes must be >= 2, got {num_classes}")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), True, f"W{i}")
        b = Tensor(np.zeros(fan_out), True, f"b{i}")
        layers.append(Dense(w, b, activation=i < len(hidden_dims)))
    return Model(layers)


def _as_input(model: Model, inputs) -> Tensor:
    x = inputs if isinstance(inputs, Tensor) else Tensor(inputs)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ContractError(f"model expects batch x {model.input_dim} inputs, got shape {x.shape}")
    return x


def forward_batch(model: Model, inputs) -> ForwardResult:
    h = _as_input(model, inputs)
    latent = None
    for i, layer in enumerate(model.layers):
        h = ad.add_bias(ad.matmul(h, layer.weight), layer.bias)
        if layer.activation:
            h = ad.relu(h)
        if i == model.latent_index:
            latent = h
    return ForwardResult(latent=latent, logits=h, probs=ad.softmax_rows(h))


def forward_siamese(model: Model, inputs_a, inputs_b) -> tuple[ForwardResult, ForwardResult]:
    """Run both inputs through the same parameter tensors."""
    a = _as_input(model, inputs_a)
    b = _as_input(model, inputs_b)
    return forward_batch(model, a), forward_batch(model, b)


def predict_proba(model: Model, inputs) -> np.ndarray:
    return forward_batch(model, inputs).probs.data


def latent_features(model: Model, inputs) -> np.ndarray:
    return forward_batch(model, inputs).latent.data


# --- checkpoints -----------------------------------------------------------


def save_model(model: Model, path):
    """Write shapes and parameters as JSON; floats are stored as hex strings."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "latent_index": model.latent_index,
        "layers": [
            {
                "activation": l.activation,
                "shape": list(l.weight.shape),
                "weight": [float(v).hex() for v in l.weight.data.ravel()],
                "bias": [float(v).hex() for v in l.bias.data],
            }
            for l in model.layers
        ],
    }
    from .data import atomic_write_text
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def load_model(path) -> Model:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {doc.get('version')!r}")
    layers = []
    for i, spec in enumerate(doc["layers"]):
        w = np.array([float.fromhex(v) for v in spec["weight"]]).reshape(spec["shape"])
        b = np.array([float.fromhex(v) for v in spec["bias"]])
        layers.append(Dense(Tensor(w, True, f"W{i}"), Tensor(b, True, f"b{i}"), spec["activation"]))
    return Model(layers, doc["latent_index"])
