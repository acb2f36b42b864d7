"""Encoder / generator / discriminator networks and checkpoint persistence.

Checkpoint layout (all integers little-endian)::

    b"MIXGAN"                  magic, 6 bytes
    u32 format_version
    u32 n, n bytes             config as canonical JSON (sorted keys)
    u64 epoch
    3 x network block          encoder, generator, discriminator
        u32 n_layers
        per layer: u32 rows, u32 cols, rows*cols f64 weights (row-major),
                   u32 n, n f64 bias
    u32 n_states               optimizer states, sorted by name
        per state: u32 n, n bytes name, u64 step_count,
                   4 f64 (learning_rate, beta1, beta2, epsilon),
                   u32 n_arrays, then each first moment and each second
                   moment as u32 ndim, ndim x u32 dims, f64 values
    32 bytes                   SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nn import LEAKY_SLOPE, AdamState, Mlp, ShapeError, build_mlp, forward

MAGIC = b"MIXGAN"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class MixGanConfig:
    input_dim: int = 1582
    latent_dim: int = 2
    encoder_hidden: tuple[int, ...] = (1000, 500)
    discriminator_hidden: tuple[int, ...] = (1000, 1000)
    dropout_rate: float = 0.5
    leaky_slope: float = LEAKY_SLOPE

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(h) for h in self.encoder_hidden))
        object.__setattr__(self, "discriminator_hidden", tuple(int(h) for h in self.discriminator_hidden))
        dims = (self.input_dim, self.latent_dim, *self.encoder_hidden, *self.discriminator_hidden)
        if any(d <= 0 for d in dims) or not self.encoder_hidden or not self.discriminator_hidden:
            raise ValueError(f"all dimensions must be positive: {self}")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1], got {self.dropout_rate}")

    @property
    def generator_hidden(self) -> tuple[int, ...]:
        return self.encoder_hidden[::-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["discriminator_hidden"] = list(self.discriminator_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MixGanConfig":
        return cls(**d)


@dataclass
class MixGanModel:
    config: MixGanConfig
    encoder: Mlp
    generator: Mlp
    discriminator: Mlp
    epoch: int = 0
    optimizers: dict[str, AdamState] = field(default_factory=dict)

    def networks(self) -> dict[str, Mlp]:
        return {"encoder": self.encoder, "generator": self.generator, "discriminator": self.discriminator}


def _hidden_dropout(n_hidden: int) -> tuple[int, ...]:
    # one mask between the first two hidden layers
    return (0,) if n_hidden >= 2 else ()


def build_model(config: MixGanConfig, rng: np.random.Generator) -> MixGanModel:
    c = config
    enc_sizes = [c.input_dim, *c.encoder_hidden, c.latent_dim]
    gen_sizes = [c.latent_dim, *c.generator_hidden, c.input_dim]
    dis_sizes = [c.input_dim, *c.discriminator_hidden, 1]
    hid = ["leaky_relu"] * len(c.encoder_hidden)
    encoder = build_mlp(enc_sizes, hid + ["linear"], rng, c.dropout_rate,
                        _hidden_dropout(len(c.encoder_hidden)), c.leaky_slope)
    generator = build_mlp(gen_sizes, hid + ["linear"], rng, c.dropout_rate,
                          _hidden_dropout(len(c.encoder_hidden)), c.leaky_slope)
    discriminator = build_mlp(dis_sizes, ["leaky_relu"] * len(c.discriminator_hidden) + ["sigmoid"],
                              rng, 0.0, (), c.leaky_slope)
    return MixGanModel(config, encoder, generator, discriminator)


def _check_cols(x: np.ndarray, expected: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != expected:
        raise ShapeError(f"{what} expects {expected} columns, got shape {x.shape}")
    return x


def encode(model: MixGanModel, x, train_mode: bool = False, rng=None) -> np.ndarray:
    x = _check_cols(x, model.config.input_dim, "encoder")
    return forward(model.encoder, x, train_mode, rng)[0]


def generate(model: MixGanModel, z, train_mode: bool = False, rng=None) -> np.ndarray:
    z = _check_cols(z, model.config.latent_dim, "generator")
    return forward(model.generator, z, train_mode, rng)[0]


def reconstruct(model: MixGanModel, x, train_mode: bool = False, rng=None) -> np.ndarray:
    return generate(model, encode(model, x, train_mode, rng), train_mode, rng)


def discriminate(model: MixGanModel, x, train_mode: bool = False, rng=None) -> np.ndarray:
    x = _check_cols(x, model.config.input_dim, "discriminator")
    return forward(model.discriminator, x, train_mode, rng)[0][:, 0]


def array_digest(arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def parameter_digest(*nets: Mlp) -> str:
    """SHA-256 over every parameter of ``nets`` in order."""
    return array_digest(p for net in nets for p in net.parameters())


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


class CheckpointIOError(CheckpointError):
    pass


def _write_array(buf: io.BytesIO, a: np.ndarray) -> None:
    buf.write(struct.pack("<I", a.ndim))
    buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
    buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def encode_checkpoint(model: MixGanModel) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<Q", model.epoch))
    for net in (model.encoder, model.generator, model.discriminator):
        buf.write(struct.pack("<I", len(net.layers)))
        for layer in net.layers:
            buf.write(struct.pack("<II", *layer.weights.shape))
            buf.write(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
            buf.write(struct.pack("<I", layer.bias.size))
            buf.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    buf.write(struct.pack("<I", len(model.optimizers)))
    for name in sorted(model.optimizers):
        st = model.optimizers[name]
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<Q", st.step_count))
        buf.write(struct.pack("<4d", st.learning_rate, st.beta1, st.beta2, st.epsilon))
        buf.write(struct.pack("<I", len(st.first_moment)))
        for a in [*st.first_moment, *st.second_moment]:
            _write_array(buf, a)
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    def array(self) -> np.ndarray:
        (ndim,) = self.unpack("<I")
        shape = self.unpack(f"<{ndim}I")
        return self.floats(int(np.prod(shape, dtype=np.int64))).reshape(shape)


def decode_checkpoint(data: bytes, expected_config: MixGanConfig | None = None) -> MixGanModel:
    if data[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError("bad magic bytes: not a MIXGAN checkpoint")
    if len(data) < len(MAGIC) + 4 + 32:
        raise CorruptCheckpointError("checkpoint is truncated")
    (version,) = struct.unpack("<I", data[len(MAGIC):len(MAGIC) + 4])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format {version}, this build reads {FORMAT_VERSION}")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError("checksum mismatch")

    r = _Reader(body)
    r.take(len(MAGIC) + 4)
    (n,) = r.unpack("<I")
    try:
        config = MixGanConfig.from_dict(json.loads(r.take(n).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CorruptCheckpointError(f"unreadable config block: {exc}") from None
    if expected_config is not None and config != expected_config:
        raise ConfigMismatchError(f"checkpoint config {config} does not match {expected_config}")
    (epoch,) = r.unpack("<Q")

    model = build_model(config, np.random.default_rng(0))
    for net in (model.encoder, model.generator, model.discriminator):
        (n_layers,) = r.unpack("<I")
        if n_layers != len(net.layers):
            raise CorruptCheckpointError("layer count disagrees with config")
        for layer in net.layers:
            rows, cols = r.unpack("<II")
            if (rows, cols) != layer.weights.shape:
                raise CorruptCheckpointError("layer shape disagrees with config")
            layer.weights = r.floats(rows * cols).reshape(rows, cols)
            (nb,) = r.unpack("<I")
            if nb != cols:
                raise CorruptCheckpointError("bias length disagrees with config")
            layer.bias = r.floats(nb)
    model.epoch = epoch

    (n_states,) = r.unpack("<I")
    for _ in range(n_states):
        (n,) = r.unpack("<I")
        name = r.take(n).decode("utf-8")
        (step,) = r.unpack("<Q")
        lr, b1, b2, eps = r.unpack("<4d")
        (count,) = r.unpack("<I")
        arrays = [r.array() for _ in range(2 * count)]
        model.optimizers[name] = AdamState(lr, b1, b2, eps, step, arrays[:count], arrays[count:])
    if r.pos != len(body):
        raise CorruptCheckpointError("trailing bytes after optimizer states")
    return model


def save_checkpoint(model: MixGanModel, path) -> None:
    try:
        Path(path).write_bytes(encode_checkpoint(model))
    except OSError as exc:
        raise CheckpointIOError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path, expected_config: MixGanConfig | None = None) -> MixGanModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointIOError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(data, expected_config)
