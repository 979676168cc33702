"""Per-view encoders, decoders and dual predictors, plus checkpoint persistence.

Views are numbered 1 and 2 throughout. Hidden layers are linear -> batch norm
-> ReLU; the latent and output layers are affine only.

Checkpoint layout (all integers little-endian u32, all reals little-endian
float64)::

    b"HMIW" | version | descriptor length | descriptor (UTF-8 JSON)
    | parameter blocks in declared order | Adam m blocks | Adam v blocks
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DimensionError
from .numerics import AdamState, LayerParams, stack_forward

PAPER_HIDDEN = (1024, 1024, 1024)
DESK_HIDDEN = (256, 256, 256)

CHECKPOINT_MAGIC = b"HMIW"
CHECKPOINT_VERSION = 1
STACK_ORDER = ("enc1", "enc2", "dec1", "dec2", "pred1", "pred2")
_FIELDS = ("weight", "bias", "bn_gamma", "bn_beta", "bn_running_mean", "bn_running_var")


@dataclass
class ModelParams:
    view_dims: tuple[int, ...]
    latent_dim: int
    hidden: tuple[int, ...]
    stacks: dict[str, list[LayerParams]] = field(default_factory=dict)

    def layers(self, kind: str, view: int) -> list[LayerParams]:
        return self.stacks[f"{kind}{view}"]

    def trainable(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of every trainable block, in declared order."""
        out = {}
        for name in STACK_ORDER:
            for i, layer in enumerate(self.stacks[name]):
                for key, arr in layer.trainable().items():
                    out[f"{name}.{i}.{key}"] = arr
        return out

    def all_blocks(self) -> dict[str, np.ndarray]:
        out = {}
        for name in STACK_ORDER:
            for i, layer in enumerate(self.stacks[name]):
                for key in _FIELDS:
                    arr = getattr(layer, key)
                    if arr is not None:
                        out[f"{name}.{i}.{key}"] = arr
        return out

    def copy(self) -> "ModelParams":
        stacks = {
            name: [LayerParams(*(None if getattr(p, f) is None else getattr(p, f).copy()
                                 for f in _FIELDS)) for p in layers]
            for name, layers in self.stacks.items()
        }
        return ModelParams(tuple(self.view_dims), self.latent_dim, tuple(self.hidden), stacks)

    def architecture(self) -> dict:
        return {"view_dims": list(self.view_dims), "latent_dim": self.latent_dim,
                "hidden": list(self.hidden)}


def _stack_widths(kind: str, view_dim: int, latent_dim: int, hidden, n_views: int):
    hidden = list(hidden)
    if kind == "enc":
        return [view_dim] + hidden + [latent_dim]
    if kind == "dec":
        return [n_views * latent_dim] + hidden[::-1] + [view_dim]
    return [latent_dim] + hidden + [latent_dim]


def init_params(view_dims, latent_dim: int = 10, hidden=PAPER_HIDDEN, seed=0) -> ModelParams:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases, unit BN scale."""
    if latent_dim < 1 or any(h < 1 for h in hidden):
        raise ValueError("latent_dim and hidden widths must be positive")
    view_dims = tuple(int(d) for d in view_dims)
    rng = np.random.default_rng(seed)
    stacks = {}
    for name in STACK_ORDER:
        kind, view = name[:-1], int(name[-1])
        widths = _stack_widths(kind, view_dims[view - 1], latent_dim, hidden, len(view_dims))
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
            layers.append(LayerParams.create(w, batchnorm=i < len(widths) - 2))
        stacks[name] = layers
    return ModelParams(view_dims, int(latent_dim), tuple(int(h) for h in hidden), stacks)


def _check_view(view: int) -> None:
    if view not in (1, 2):
        raise DimensionError(f"view must be 1 or 2, got {view}")


def encode(params: ModelParams, view: int, x, mode: str = "eval") -> np.ndarray:
    _check_view(view)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.view_dims[view - 1]:
        raise DimensionError(
            f"view {view} expects {params.view_dims[view - 1]} columns, got shape {x.shape}")
    return stack_forward(params.layers("enc", view), x, mode)[0]


def decode(params: ModelParams, view: int, z_concat, mode: str = "eval") -> np.ndarray:
    _check_view(view)
    z_concat = np.asarray(z_concat, dtype=np.float64)
    expect = len(params.view_dims) * params.latent_dim
    if z_concat.ndim != 2 or z_concat.shape[1] != expect:
        raise DimensionError(f"decoder expects {expect} latent columns, got shape {z_concat.shape}")
    return stack_forward(params.layers("dec", view), z_concat, mode)[0]


def predict_latent(params: ModelParams, from_view: int, z, mode: str = "eval") -> np.ndarray:
    """Map a latent of ``from_view`` onto the latent space of the other view."""
    _check_view(from_view)
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != params.latent_dim:
        raise DimensionError(f"predictor expects {params.latent_dim} columns, got shape {z.shape}")
    return stack_forward(params.layers("pred", from_view), z, mode)[0]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    params: ModelParams
    adam: AdamState | None = None
    meta: dict = field(default_factory=dict)


def checkpoint_bytes(params: ModelParams, adam: AdamState | None = None, meta=None) -> bytes:
    blocks = params.all_blocks()
    descriptor = {
        "architecture": params.architecture(),
        "blocks": [[name, list(arr.shape)] for name, arr in blocks.items()],
        "meta": meta or {},
        "adam": None,
    }
    adam_names = []
    if adam is not None:
        adam_names = [n for n in blocks if n in adam.m]
        descriptor["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
                              "eps": adam.eps, "step": adam.step, "blocks": adam_names}
    header = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(header)), header]
    chunks += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in blocks.values()]
    if adam is not None:
        chunks += [np.ascontiguousarray(adam.m[n], dtype="<f8").tobytes() for n in adam_names]
        chunks += [np.ascontiguousarray(adam.v[n], dtype="<f8").tobytes() for n in adam_names]
    return b"".join(chunks)


def save_params(params: ModelParams, path, adam: AdamState | None = None, meta=None) -> None:
    Path(path).write_bytes(checkpoint_bytes(params, adam, meta))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not an HMIW checkpoint (bad magic or truncated header)")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if len(raw) < 12 + hlen:
        raise CheckpointError(f"{path}: truncated descriptor")
    try:
        desc = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt descriptor") from exc

    shapes = [(name, tuple(shape)) for name, shape in desc["blocks"]]
    adam_desc = desc.get("adam")
    adam_shapes = []
    if adam_desc:
        lookup = dict(shapes)
        adam_shapes = [(n, lookup[n]) for n in adam_desc["blocks"]]
    n_values = sum(int(np.prod(s)) for _, s in shapes) + 2 * sum(int(np.prod(s)) for _, s in adam_shapes)
    body = raw[12 + hlen:]
    if len(body) != 8 * n_values:
        raise CheckpointError(
            f"{path}: corrupt checkpoint, expected {8 * n_values} payload bytes, found {len(body)}")
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)

    offset = 0

    def take(shape):
        nonlocal offset
        size = int(np.prod(shape))
        arr = values[offset:offset + size].reshape(shape).copy()
        offset += size
        return arr

    arrays = {name: take(shape) for name, shape in shapes}
    arch = desc["architecture"]
    stacks = {}
    for name in STACK_ORDER:
        layers = []
        i = 0
        while f"{name}.{i}.weight" in arrays:
            layers.append(LayerParams(*(arrays.get(f"{name}.{i}.{f}") for f in _FIELDS)))
            i += 1
        stacks[name] = layers
    params = ModelParams(tuple(arch["view_dims"]), int(arch["latent_dim"]), tuple(arch["hidden"]), stacks)

    adam = None
    if adam_desc:
        adam = AdamState(lr=adam_desc["lr"], beta1=adam_desc["beta1"], beta2=adam_desc["beta2"],
                         eps=adam_desc["eps"], step=adam_desc["step"])
        adam.m = {n: take(s) for n, s in adam_shapes}
        adam.v = {n: take(s) for n, s in adam_shapes}
    return Checkpoint(params, adam, desc.get("meta", {}))


def load_params(path, view_dims=None, latent_dim=None, hidden=None) -> ModelParams:
    """Load parameters, optionally checking them against an expected architecture."""
    params = load_checkpoint(path).params
    expected = {"view_dims": view_dims, "latent_dim": latent_dim, "hidden": hidden}
    got = params.architecture()
    for key, want in expected.items():
        if want is None:
            continue
        want = list(want) if isinstance(want, (list, tuple)) else want
        if got[key] != want:
            raise DimensionError(f"checkpoint {key} is {got[key]}, expected {want}")
    return params
