"""Small MLPs arranged for bi-classifier adaptation.

A bundle holds two full copies of the same architecture: a trainable target
side (one feature extractor, two classifier heads) and a frozen source side
that keeps the pretrained weights bitwise intact so its predictions can anchor
the adaptation losses. Checkpoints are JSON with decimal parameter text, which
round-trips float64 exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, ParseError
from .tensor import Tensor

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple
    feature_dim: int
    num_classes: int
    activation: str = "relu"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.feature_dim < 1:
            raise ContractViolation(f"dims must be positive, got {self}")
        if any(h < 1 for h in self.hidden_dims):
            raise ContractViolation(f"hidden dims must be positive, got {self.hidden_dims}")
        if self.num_classes < 2:
            raise ContractViolation(f"need at least 2 classes, got {self.num_classes}")
        if self.activation != "relu":
            raise ContractViolation(f"unsupported activation {self.activation!r}")

    def extractor_dims(self):
        """Layer (fan_in, fan_out) pairs: input -> hiddens -> feature."""
        sizes = (self.input_dim,) + self.hidden_dims + (self.feature_dim,)
        return list(zip(sizes[:-1], sizes[1:]))

    def to_dict(self):
        return {"input_dim": self.input_dim, "hidden_dims": list(self.hidden_dims),
                "feature_dim": self.feature_dim, "num_classes": self.num_classes,
                "activation": self.activation, "init_seed": self.init_seed}


class ModelBundle:
    """Trainable target net plus a frozen copy of the source net.

    ``extractor`` / ``head1`` / ``head2`` are lists of (weight, bias) Tensors
    with requires_grad set; the ``frozen_*`` mirrors never require gradients
    and nothing in this package ever writes to them after construction.
    """

    def __init__(self, spec, extractor, head1, head2,
                 frozen_extractor, frozen_head1, frozen_head2):
        self.spec = spec
        self.extractor = extractor
        self.head1 = head1
        self.head2 = head2
        self.frozen_extractor = frozen_extractor
        self.frozen_head1 = frozen_head1
        self.frozen_head2 = frozen_head2

    def named_params(self, side="target"):
        if side == "target":
            parts = [("extractor", self.extractor), ("head1", self.head1), ("head2", self.head2)]
        elif side == "source":
            parts = [("extractor", self.frozen_extractor),
                     ("head1", self.frozen_head1), ("head2", self.frozen_head2)]
        else:
            raise ContractViolation(f"unknown side {side!r}")
        out = []
        for prefix, layers in parts:
            if prefix == "extractor":
                for i, (w, b) in enumerate(layers):
                    out.append((f"extractor.{i}.weight", w))
                    out.append((f"extractor.{i}.bias", b))
            else:
                w, b = layers[0]
                out.append((f"{prefix}.weight", w))
                out.append((f"{prefix}.bias", b))
        return out


def _kaiming_uniform(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _draw_params(spec):
    """One deterministic parameter draw; both heads copy a single draw."""
    rng = np.random.default_rng(spec.init_seed)
    extractor = []
    for fan_in, fan_out in spec.extractor_dims():
        w = _kaiming_uniform(rng, fan_in, fan_out)
        extractor.append((w, np.zeros(fan_out)))
    head_w = _kaiming_uniform(rng, spec.feature_dim, spec.num_classes)
    head = (head_w, np.zeros(spec.num_classes))
    return extractor, head


def _as_layers(arrays, requires_grad):
    return [(Tensor(w.copy(), requires_grad=requires_grad),
             Tensor(b.copy(), requires_grad=requires_grad)) for w, b in arrays]


def build(spec: MlpSpec) -> ModelBundle:
    """Fresh bundle: target and source sides start bitwise identical."""
    extractor, head = _draw_params(spec)
    return ModelBundle(
        spec,
        _as_layers(extractor, True), _as_layers([head], True), _as_layers([head], True),
        _as_layers(extractor, False), _as_layers([head], False), _as_layers([head], False))


def bundle_from_params(spec, params: dict) -> ModelBundle:
    """Rebuild a bundle from named arrays; both sides take the same values."""
    n_layers = len(spec.extractor_dims())
    expected = {}
    for i, (fan_in, fan_out) in enumerate(spec.extractor_dims()):
        expected[f"extractor.{i}.weight"] = (fan_in, fan_out)
        expected[f"extractor.{i}.bias"] = (fan_out,)
    for h in ("head1", "head2"):
        expected[f"{h}.weight"] = (spec.feature_dim, spec.num_classes)
        expected[f"{h}.bias"] = (spec.num_classes,)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ContractViolation(f"parameter names do not match spec "
                                f"(missing {missing}, unexpected {extra})")
    for name, shape in expected.items():
        got = np.asarray(params[name], dtype=np.float64)
        if got.shape != shape:
            raise ContractViolation(f"{name}: expected shape {shape}, got {got.shape}")
    ext = [(np.asarray(params[f"extractor.{i}.weight"], dtype=np.float64),
            np.asarray(params[f"extractor.{i}.bias"], dtype=np.float64))
           for i in range(n_layers)]
    h1 = (np.asarray(params["head1.weight"], dtype=np.float64),
          np.asarray(params["head1.bias"], dtype=np.float64))
    h2 = (np.asarray(params["head2.weight"], dtype=np.float64),
          np.asarray(params["head2.bias"], dtype=np.float64))
    return ModelBundle(
        spec,
        _as_layers(ext, True), _as_layers([h1], True), _as_layers([h2], True),
        _as_layers(ext, False), _as_layers([h1], False), _as_layers([h2], False))


def clone_for_adaptation(bundle: ModelBundle) -> ModelBundle:
    """New bundle whose target AND frozen sides copy `bundle`'s target side."""
    params = {name: t.data.copy() for name, t in bundle.named_params("target")}
    return bundle_from_params(bundle.spec, params)


# -- forward passes -------------------------------------------------------------


def _check_input(spec, x):
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ContractViolation(f"input must be [n, {spec.input_dim}], got shape {x.shape}")
    return x


def _extract(layers, x):
    out = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        out = out.matmul(w).add_bias(b)
        if i < last:
            out = out.relu()
    return out


def _head(head, feats):
    w, b = head[0]
    return feats.matmul(w).add_bias(b)


def forward_target(bundle, x):
    """Logits of both target heads from one shared extractor pass."""
    x = _check_input(bundle.spec, x)
    feats = _extract(bundle.extractor, x)
    return _head(bundle.head1, feats), _head(bundle.head2, feats)


def forward_source(bundle, x):
    """Frozen-side logits; constants as far as the tape is concerned."""
    x = _check_input(bundle.spec, x)
    feats = _extract(bundle.frozen_extractor, x)
    return _head(bundle.frozen_head1, feats), _head(bundle.frozen_head2, feats)


def forward_target_branch(bundle, x, branch):
    x = _check_input(bundle.spec, x)
    feats = _extract(bundle.extractor, x)
    return _head(bundle.head1 if branch == 1 else bundle.head2, feats)


def forward_source_branch(bundle, x, branch):
    x = _check_input(bundle.spec, x)
    feats = _extract(bundle.frozen_extractor, x)
    return _head(bundle.frozen_head1 if branch == 1 else bundle.frozen_head2, feats)


# -- parameter access -----------------------------------------------------------


def trainable_params(bundle, scope):
    if scope == "all_target":
        parts = [bundle.extractor, bundle.head1, bundle.head2]
    elif scope == "classifiers_only":
        parts = [bundle.head1, bundle.head2]
    else:
        raise ContractViolation(f"unknown scope {scope!r}")
    params = []
    for layers in parts:
        for w, b in layers:
            params.extend((w, b))
    return params


def frozen_params(bundle):
    params = []
    for layers in (bundle.frozen_extractor, bundle.frozen_head1, bundle.frozen_head2):
        for w, b in layers:
            params.extend((w, b))
    return params


def params_fingerprint(tensors):
    """sha256 over the raw little-endian bytes of every array, in order."""
    h = hashlib.sha256()
    for t in tensors:
        h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return h.hexdigest()


# -- checkpoints ------------------------------------------------------------------


def save_checkpoint(bundle: ModelBundle, path):
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "spec": bundle.spec.to_dict(),
        "params": {name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
                   for name, t in bundle.named_params("target")},
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def load_checkpoint(path, expect_spec: MlpSpec | None = None) -> ModelBundle:
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: not a valid checkpoint ({e})") from e
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: checkpoint root must be an object")
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    for key in ("spec", "params"):
        if key not in doc:
            raise ParseError(f"{path}: missing {key!r}")
    try:
        spec = MlpSpec(
            input_dim=int(doc["spec"]["input_dim"]),
            hidden_dims=tuple(doc["spec"]["hidden_dims"]),
            feature_dim=int(doc["spec"]["feature_dim"]),
            num_classes=int(doc["spec"]["num_classes"]),
            activation=doc["spec"].get("activation", "relu"),
            init_seed=int(doc["spec"]["init_seed"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: bad spec block ({e})") from e
    if expect_spec is not None and spec != expect_spec:
        raise ContractViolation(
            f"checkpoint spec {spec} does not match expected spec {expect_spec}")
    params = {}
    for name, entry in doc["params"].items():
        try:
            arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"{path}: bad parameter {name!r} ({e})") from e
        params[name] = arr
    try:
        return bundle_from_params(spec, params)
    except ContractViolation as e:
        raise ParseError(f"{path}: {e}") from e
