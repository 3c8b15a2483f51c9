"""Configurable U-Net with one weight-shared encoder applied per modality.

Encoder stage s (s = 0..depth) holds two conv->instance-norm->leaky-relu
layers; stages s >= 1 enter through a stride-2 conv. Channel width doubles
per stage from ``base_channels``. The per-modality bottleneck and skip
features are kept separate in a :class:`FeatureBundle`; after missing slots
are filled (see ``availability.generate_missing``) the decoder concatenates
all N slots channel-wise at every resolution and emits K sigmoid channels.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .availability import AvailabilityMask
from .errors import DataError

LEAKY_SLOPE = 0.01
NORM_EPS = 1e-5
SIGMOID_CLAMP = 1e-7

_CKPT_MAGIC = b"MKD1"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    spatial_dims: int
    n_modalities: int
    n_tasks: int
    base_channels: int = 8
    depth: int = 3
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.spatial_dims not in (2, 3):
            raise ValueError("spatial_dims must be 2 or 3")
        if self.n_modalities < 2:
            raise ValueError("need at least two modalities")
        if self.n_tasks < 1:
            raise ValueError("need at least one task")
        if self.base_channels < 1 or self.depth < 1:
            raise ValueError("base_channels and depth must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def channels(self, stage: int) -> int:
        return self.base_channels * (2 ** stage)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class ModelParams:
    """All weights, keyed ``enc.*`` / ``dec.*``; one encoder set regardless of N."""

    config: ModelConfig
    tensors: dict[str, ad.Tensor]

    def encoder_names(self):
        return [n for n in self.tensors if n.startswith("enc.")]

    def decoder_names(self):
        return [n for n in self.tensors if n.startswith("dec.")]

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def zero_grads(self):
        for t in self.tensors.values():
            t.zero_grad()

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self.tensors.values())


@dataclass
class FeatureBundle:
    """Per-modality features: ``bottleneck[i]`` and ``skips[s][i]`` (0-based i).

    Unfilled slots (missing modalities after ``encode``) are ``None``.
    """

    n_modalities: int
    bottleneck: list
    skips: list = field(default_factory=list)

    def filled(self) -> bool:
        return all(t is not None for t in self.bottleneck) and all(
            t is not None for stage in self.skips for t in stage
        )


def _kernel(config: ModelConfig, k: int) -> tuple[int, ...]:
    return (k,) * config.spatial_dims


def init_params(config: ModelConfig) -> ModelParams:
    """Fan-in-scaled uniform init, deterministic under ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    dtype = config.np_dtype
    tensors: dict[str, ad.Tensor] = {}

    def conv_weight(name, c_out, c_in, k):
        fan_in = c_in * k ** config.spatial_dims
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(c_out, c_in) + _kernel(config, k))
        tensors[name] = ad.Tensor(w.astype(dtype), requires_grad=True)

    def norm_params(name, c):
        tensors[name + ".g"] = ad.Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        tensors[name + ".b"] = ad.Tensor(np.zeros(c, dtype=dtype), requires_grad=True)

    # encoder: stage 0 at full resolution, stages 1..depth enter via stride 2
    for s in range(config.depth + 1):
        c_in = 1 if s == 0 else config.channels(s - 1)
        c = config.channels(s)
        conv_weight(f"enc.s{s}.c1.w", c, c_in, 3)
        norm_params(f"enc.s{s}.n1", c)
        conv_weight(f"enc.s{s}.c2.w", c, c, 3)
        norm_params(f"enc.s{s}.n2", c)

    # decoder: stage depth-1 .. 0; the first stage consumes N concatenated
    # bottlenecks, later ones the previous stage's output
    n = config.n_modalities
    for s in range(config.depth - 1, -1, -1):
        c = config.channels(s)
        c_in = n * config.channels(config.depth) if s == config.depth - 1 else config.channels(s + 1)
        conv_weight(f"dec.u{s}.c1.w", c, c_in, 3)
        norm_params(f"dec.u{s}.n1", c)
        conv_weight(f"dec.u{s}.c2.w", c, (n + 1) * c, 3)
        norm_params(f"dec.u{s}.n2", c)

    conv_weight("dec.head.w", config.n_tasks, config.base_channels, 1)
    tensors["dec.head.b"] = ad.Tensor(np.zeros(config.n_tasks, dtype=dtype), requires_grad=True)

    return ModelParams(config=config, tensors=tensors)


def _check_spatial(config: ModelConfig, shape: tuple[int, ...]):
    if len(shape) != config.spatial_dims:
        raise ValueError(f"expected {config.spatial_dims} spatial dims, got shape {shape}")
    for s in shape:
        if s % (2 ** config.depth) != 0:
            raise ValueError(
                f"spatial side {s} not divisible by 2^depth = {2 ** config.depth}"
            )


def _block(params, prefix, x, stride):
    t = params.tensors
    h = ad.conv(x, t[f"{prefix}.c1.w"], stride=stride, pad=1)
    h = ad.instance_norm(h, t[f"{prefix}.n1.g"], t[f"{prefix}.n1.b"], eps=NORM_EPS)
    h = ad.leaky_relu(h, LEAKY_SLOPE)
    h = ad.conv(h, t[f"{prefix}.c2.w"], stride=1, pad=1)
    h = ad.instance_norm(h, t[f"{prefix}.n2.g"], t[f"{prefix}.n2.b"], eps=NORM_EPS)
    return ad.leaky_relu(h, LEAKY_SLOPE)


def encode(params: ModelParams, modalities: np.ndarray, mask: AvailabilityMask) -> FeatureBundle:
    """Encode every available modality with the single shared encoder.

    ``modalities``: float array [B, N, *spatial]. Missing slots in the
    returned bundle are left as ``None``.
    """
    config = params.config
    if modalities.ndim != config.spatial_dims + 2:
        raise ValueError(f"expected [B, N, *spatial] input, got shape {modalities.shape}")
    if modalities.shape[1] != config.n_modalities:
        raise ValueError(
            f"expected {config.n_modalities} modalities, got {modalities.shape[1]}"
        )
    _check_spatial(config, modalities.shape[2:])
    if mask.n_modalities != config.n_modalities:
        raise ValueError("mask arity does not match model config")

    avail = mask.available
    b = modalities.shape[0]
    # modality-major stacking so each modality's features form a contiguous slab
    x = np.ascontiguousarray(
        modalities[:, [i - 1 for i in avail]].swapaxes(0, 1)
    ).reshape((len(avail) * b, 1) + modalities.shape[2:])
    h = ad.Tensor(x.astype(config.np_dtype))

    skips_flat = []
    for s in range(config.depth + 1):
        h = _block(params, f"enc.s{s}", h, stride=1 if s == 0 else 2)
        if s < config.depth:
            skips_flat.append(h)

    def split(t):
        slots = [None] * config.n_modalities
        for pos, i in enumerate(avail):
            slots[i - 1] = ad.narrow(t, 0, pos * b, b)
        return slots

    return FeatureBundle(
        n_modalities=config.n_modalities,
        bottleneck=split(h),
        skips=[split(t) for t in skips_flat],
    )


def decode(params: ModelParams, bundle: FeatureBundle) -> ad.Tensor:
    """Concatenate all N feature slots per resolution and decode K sigmoid maps."""
    config = params.config
    if bundle.n_modalities != config.n_modalities or len(bundle.skips) != config.depth:
        raise ValueError("feature bundle does not match model config")
    if not bundle.filled():
        raise ValueError("feature bundle has unfilled slots; generate missing features first")
    t = params.tensors

    h = ad.concat(bundle.bottleneck, axis=1)
    for s in range(config.depth - 1, -1, -1):
        h = ad.upsample_nearest(h)
        h = ad.conv(h, t[f"dec.u{s}.c1.w"], stride=1, pad=1)
        h = ad.instance_norm(h, t[f"dec.u{s}.n1.g"], t[f"dec.u{s}.n1.b"], eps=NORM_EPS)
        h = ad.leaky_relu(h, LEAKY_SLOPE)
        h = ad.concat([h] + bundle.skips[s], axis=1)
        h = ad.conv(h, t[f"dec.u{s}.c2.w"], stride=1, pad=1)
        h = ad.instance_norm(h, t[f"dec.u{s}.n2.g"], t[f"dec.u{s}.n2.b"], eps=NORM_EPS)
        h = ad.leaky_relu(h, LEAKY_SLOPE)

    h = ad.conv(h, t["dec.head.w"], bias=t["dec.head.b"], stride=1, pad=0)
    # clamp keeps the open-interval output contract under float32 saturation
    return ad.clip(ad.sigmoid(h), SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)


def forward(params: ModelParams, modalities: np.ndarray, mask: AvailabilityMask):
    """encode -> fill missing -> decode; returns (prediction, filled bundle)."""
    from .availability import generate_missing

    bundle = generate_missing(encode(params, modalities, mask), mask)
    return decode(params, bundle), bundle


# ---------------------------------------------------------------------------
# checkpoint container: magic, version, JSON header, little-endian f32 payload
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, iteration: int):
    header = {
        "config": {
            "spatial_dims": params.config.spatial_dims,
            "n_modalities": params.config.n_modalities,
            "n_tasks": params.config.n_tasks,
            "base_channels": params.config.base_channels,
            "depth": params.config.depth,
            "seed": params.config.seed,
            "dtype": params.config.dtype,
        },
        "iteration": int(iteration),
        "tensors": [{"name": n, "shape": list(t.data.shape)} for n, t in params.tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", _CKPT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for t in params.tensors.values():
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (params, iteration); raises DataError on any integrity problem."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no checkpoint at {path}")
    raw = path.read_bytes()
    try:
        if raw[:4] != _CKPT_MAGIC:
            raise DataError(f"{path}: bad checkpoint magic")
        (version,) = struct.unpack("<I", raw[4:8])
        if version != _CKPT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", raw[8:16])
        header = json.loads(raw[16:16 + hlen].decode())
        config = ModelConfig(**header["config"])
        offset = 16 + hlen
        tensors: dict[str, ad.Tensor] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            nbytes = int(np.prod(shape)) * 4
            chunk = raw[offset:offset + nbytes]
            if len(chunk) != nbytes:
                raise DataError(f"{path}: truncated tensor payload for {entry['name']}")
            arr = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(config.np_dtype)
            tensors[entry["name"]] = ad.Tensor(arr, requires_grad=True)
            offset += nbytes
        if offset != len(raw):
            raise DataError(f"{path}: trailing bytes after tensor payload")
    except (struct.error, KeyError, ValueError, json.JSONDecodeError, IndexError) as e:
        raise DataError(f"{path}: corrupt checkpoint ({e})") from e
    params = ModelParams(config=config, tensors=tensors)
    expected = {n for n in init_params(replace(config, seed=0)).tensors}
    if set(tensors) != expected:
        raise DataError(f"{path}: tensor registry does not match the model layout")
    return params, int(header["iteration"])
