"""Linear and MLP predictors with a three-logit ZILN head or a scalar head.

Output activations are not applied here; :mod:`ziln_ltv.loss` and
:func:`predict` apply them, so one forward pass serves every loss.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from ziln_ltv import dist
from ziln_ltv.data import FeatureMatrix, FeatureSchema
from ziln_ltv.loss import activate, sigmoid

CHECKPOINT_VERSION = 1
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class Architecture(str, Enum):
    LINEAR = "LINEAR"
    DNN = "DNN"


class Head(str, Enum):
    ZILN = "ZILN"
    SCALAR = "SCALAR"


def default_embedding_dim(vocab_size: int) -> int:
    return int(min(32, max(1, round(6 * vocab_size**0.25))))


@dataclass
class ModelConfig:
    architecture: Architecture = Architecture.DNN
    hidden_sizes: tuple[int, ...] | None = None  # DNN default (64, 32)
    head: Head = Head.ZILN
    embedding_dims: dict[str, int] = field(default_factory=dict)
    seed: int = 0
    # SCALAR head only: "value" predicts LTV directly (MSE), "logit" a return logit (BCE).
    scalar_target: str = "value"

    def __post_init__(self):
        self.architecture = Architecture(str(getattr(self.architecture, "value", self.architecture)).upper())
        self.head = Head(str(getattr(self.head, "value", self.head)).upper())
        if self.architecture is Architecture.LINEAR:
            if self.hidden_sizes:
                raise ValueError("LINEAR models have no hidden layers")
            self.hidden_sizes = ()
        else:
            sizes = (64, 32) if self.hidden_sizes is None else self.hidden_sizes
            self.hidden_sizes = tuple(int(h) for h in sizes)
            if not self.hidden_sizes or min(self.hidden_sizes) < 1:
                raise ValueError("DNN needs at least one hidden layer of positive width")
        if self.scalar_target not in ("value", "logit"):
            raise ValueError(f"unknown scalar_target {self.scalar_target!r}")

    @property
    def n_outputs(self) -> int:
        return 3 if self.head is Head.ZILN else 1

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture.value,
            "hidden_sizes": list(self.hidden_sizes),
            "head": self.head.value,
            "embedding_dims": dict(sorted(self.embedding_dims.items())),
            "seed": self.seed,
            "scalar_target": self.scalar_target,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            architecture=d["architecture"],
            hidden_sizes=tuple(d.get("hidden_sizes", ())),
            head=d["head"],
            embedding_dims=dict(d.get("embedding_dims", {})),
            seed=int(d.get("seed", 0)),
            scalar_target=d.get("scalar_target", "value"),
        )


@dataclass
class ModelParams:
    """Trainable tensors keyed by name, plus fixed numeric input scaling."""

    config: ModelConfig
    schema: FeatureSchema
    tensors: dict[str, np.ndarray]
    input_shift: np.ndarray
    input_scale: np.ndarray

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            self.schema,
            {k: v.copy() for k, v in self.tensors.items()},
            self.input_shift.copy(),
            self.input_scale.copy(),
        )

    def dense_layers(self) -> list[tuple[str, str]]:
        names = sorted(
            (k for k in self.tensors if k.startswith("dense_") and k.endswith("/kernel")),
            key=lambda k: int(k.split("/")[0][6:]),
        )
        return [(k, k.replace("/kernel", "/bias")) for k in names]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_model(config: ModelConfig, schema: FeatureSchema) -> ModelParams:
    """Deterministic initialisation from ``config.seed``."""
    unknown = set(config.embedding_dims) - set(schema.categorical_names)
    if unknown:
        raise ValueError(f"embedding_dims names unknown categorical features {sorted(unknown)}")

    rng = np.random.default_rng(config.seed)
    k = len(schema.numeric_features)
    tensors: dict[str, np.ndarray] = {}

    if config.architecture is Architecture.LINEAR:
        # one-hot blocks for each vocabulary follow the numeric rows
        input_dim = k + sum(schema.vocab_sizes)
        tensors["linear/kernel"] = _glorot(rng, input_dim, config.n_outputs)
        tensors["linear/bias"] = np.zeros(config.n_outputs)
    else:
        input_dim = k
        for name, vocab in schema.categorical_features:
            d = config.embedding_dims.get(name, default_embedding_dim(len(vocab)))
            tensors[f"embedding/{name}"] = rng.uniform(-0.05, 0.05, size=(len(vocab), d))
            input_dim += d
        sizes = [input_dim, *config.hidden_sizes, config.n_outputs]
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            tensors[f"dense_{i}/kernel"] = _glorot(rng, fan_in, fan_out)
            tensors[f"dense_{i}/bias"] = np.zeros(fan_out)

    return ModelParams(config, schema, tensors, np.zeros(k), np.ones(k))


def set_input_scaling(params: ModelParams, numerics: np.ndarray) -> None:
    """Standardise numeric inputs with column statistics of ``numerics``."""
    numerics = np.asarray(numerics, dtype=np.float64)
    shift = numerics.mean(axis=0) if len(numerics) else np.zeros(numerics.shape[1])
    scale = numerics.std(axis=0) if len(numerics) else np.ones(numerics.shape[1])
    params.input_shift = shift
    params.input_scale = np.where(scale > 0, scale, 1.0)


def _one_hot_offsets(schema: FeatureSchema) -> np.ndarray:
    k = len(schema.numeric_features)
    return k + np.concatenate([[0], np.cumsum(schema.vocab_sizes)[:-1]]).astype(np.int64)


def _validate_batch(params: ModelParams, batch: FeatureMatrix) -> None:
    schema = params.schema
    if batch.numerics.shape[1] != len(schema.numeric_features):
        raise ValueError(
            f"batch has {batch.numerics.shape[1]} numeric columns, schema expects {len(schema.numeric_features)}"
        )
    if batch.categoricals.shape[1] != len(schema.categorical_features):
        raise ValueError("categorical column count does not match schema")
    if batch.categoricals.size:
        sizes = np.array(schema.vocab_sizes)
        bad = (batch.categoricals < 0) | (batch.categoricals >= sizes)
        if bad.any():
            row, colm = np.argwhere(bad)[0]
            raise ValueError(
                f"row {row}: id {batch.categoricals[row, colm]} outside vocabulary of "
                f"{schema.categorical_names[colm]!r} (size {sizes[colm]})"
            )


@dataclass
class ForwardCache:
    params: ModelParams
    batch: FeatureMatrix
    inputs: np.ndarray
    pre_activations: list[np.ndarray]
    hidden: list[np.ndarray]
    outputs: np.ndarray


def forward(params: ModelParams, batch: FeatureMatrix, with_cache: bool = False):
    """Raw outputs, ``(n, 3)`` for a ZILN head and ``(n, 1)`` for a scalar head."""
    _validate_batch(params, batch)
    x = (batch.numerics - params.input_shift) / params.input_scale
    t = params.tensors

    if params.config.architecture is Architecture.LINEAR:
        kernel = t["linear/kernel"]
        k = x.shape[1]
        out = x @ kernel[:k] + t["linear/bias"]
        if batch.categoricals.shape[1]:
            rows = batch.categoricals + _one_hot_offsets(params.schema)
            out = out + kernel[rows].sum(axis=1)
        cache = ForwardCache(params, batch, x, [], [], out)
        return (out, cache) if with_cache else out

    parts = [x] + [t[f"embedding/{name}"][batch.categoricals[:, j]]
                   for j, name in enumerate(params.schema.categorical_names)]
    h = np.concatenate(parts, axis=1)
    inputs = h
    pre, hidden = [], []
    layers = params.dense_layers()
    for kname, bname in layers[:-1]:
        a = h @ t[kname] + t[bname]
        h = np.maximum(a, 0.0)
        pre.append(a)
        hidden.append(h)
    kname, bname = layers[-1]
    out = h @ t[kname] + t[bname]
    cache = ForwardCache(params, batch, inputs, pre, hidden, out)
    return (out, cache) if with_cache else out


def backward(params: ModelParams, cache: ForwardCache | None, d_out: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of the loss given ``d_out = dL/d(outputs)``.

    ``d_out`` should already carry the batch-mean ``1/n`` factor, as
    returned by :func:`ziln_ltv.loss.batch_loss`.
    """
    if cache is None or cache.params is not params:
        raise RuntimeError("backward needs the cache from forward() on the same parameters")
    d_out = np.asarray(d_out, dtype=np.float64).reshape(cache.outputs.shape)
    t = params.tensors
    grads = {name: np.zeros_like(v) for name, v in t.items()}

    if params.config.architecture is Architecture.LINEAR:
        k = cache.inputs.shape[1]
        grads["linear/kernel"][:k] = cache.inputs.T @ d_out
        grads["linear/bias"] = d_out.sum(axis=0)
        if cache.batch.categoricals.shape[1]:
            rows = cache.batch.categoricals + _one_hot_offsets(params.schema)
            for j in range(rows.shape[1]):
                np.add.at(grads["linear/kernel"], rows[:, j], d_out)
        return grads

    layers = params.dense_layers()
    delta = d_out
    for i in range(len(layers) - 1, -1, -1):
        kname, bname = layers[i]
        below = cache.hidden[i - 1] if i > 0 else cache.inputs
        grads[kname] = below.T @ delta
        grads[bname] = delta.sum(axis=0)
        delta = delta @ t[kname].T
        if i > 0:
            delta = delta * (cache.pre_activations[i - 1] > 0)

    offset = cache.batch.numerics.shape[1]
    for j, name in enumerate(params.schema.categorical_names):
        table = t[f"embedding/{name}"]
        d = table.shape[1]
        np.add.at(grads[f"embedding/{name}"], cache.batch.categoricals[:, j], delta[:, offset:offset + d])
        offset += d
    return grads


@dataclass(frozen=True)
class PredictionRow:
    p_return: float
    mu: float
    sigma: float
    mean_ltv: float


@dataclass
class Predictions:
    """Column arrays; fields a head cannot produce are NaN."""

    p_return: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    mean_ltv: np.ndarray

    def __len__(self):
        return len(self.mean_ltv)

    def rows(self) -> list[PredictionRow]:
        return [PredictionRow(*map(float, r)) for r in zip(self.p_return, self.mu, self.sigma, self.mean_ltv)]

    def quantile(self, q: float) -> np.ndarray:
        """Per-example quantile of the lognormal value distribution."""
        return np.exp(self.mu + self.sigma * dist.norm_ppf(q))

    @property
    def score(self) -> np.ndarray:
        """Best available LTV ranking score."""
        return self.p_return if np.isnan(self.mean_ltv).all() else self.mean_ltv


def predict(params: ModelParams, batch: FeatureMatrix) -> Predictions:
    out = forward(params, batch)
    n = out.shape[0]
    nan = np.full(n, np.nan)
    if params.config.head is Head.ZILN:
        a = activate(out)
        with np.errstate(over="ignore"):
            mean = a[:, 0] * np.exp(a[:, 1] + 0.5 * a[:, 2] ** 2)
        return Predictions(a[:, 0], a[:, 1], a[:, 2], mean)
    if params.config.scalar_target == "logit":
        return Predictions(sigmoid(out[:, 0]), nan, nan.copy(), nan.copy())
    return Predictions(nan, nan.copy(), nan.copy(), out[:, 0].copy())


# ---------------------------------------------------------------------------
# checkpoints: a zip of .npy members with fixed timestamps, so saving the same
# parameters twice yields identical bytes; loadable with numpy.load as well.


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(path, params: ModelParams) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "schema": params.schema.to_dict(),
        "tensors": list(params.tensors),
    }
    members = [("meta.json", json.dumps(meta, sort_keys=True).encode())]
    members.append(("input_shift.npy", _npy_bytes(params.input_shift)))
    members.append(("input_scale.npy", _npy_bytes(params.input_scale)))
    for i, (name, arr) in enumerate(params.tensors.items()):
        members.append((f"t{i:03d}.npy", _npy_bytes(arr)))
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, data in members:
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)


def _read_npy(zf: zipfile.ZipFile, name: str) -> np.ndarray:
    return np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)


def load_checkpoint(path) -> ModelParams:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        tensors = {name: _read_npy(zf, f"t{i:03d}.npy") for i, name in enumerate(meta["tensors"])}
        shift = _read_npy(zf, "input_shift.npy")
        scale = _read_npy(zf, "input_scale.npy")
    config = ModelConfig.from_dict(meta["config"])
    schema = FeatureSchema.from_dict(meta["schema"])
    params = ModelParams(config, schema, tensors, shift, scale)
    expected = init_model(config, schema).tensors
    for name, arr in expected.items():
        if name not in tensors or tensors[name].shape != arr.shape:
            raise ValueError(f"checkpoint tensor {name!r} missing or mis-shaped")
    return params


def param_count(params: ModelParams) -> int:
    return int(sum(v.size for v in params.tensors.values()))


def flatten(grads: dict[str, np.ndarray], names: Sequence[str] | None = None) -> np.ndarray:
    names = list(grads) if names is None else names
    return np.concatenate([grads[n].ravel() for n in names])
