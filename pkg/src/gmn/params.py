"""Model configuration, trainable parameter storage, Adam, and checkpoints."""

from __future__ import annotations

import dataclasses
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import KIND_NAMES, Kind

CKPT_MAGIC = b"GMNP1"


class ConfigError(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in tensor {name!r}; step aborted")
        self.name = name


@dataclass
class GMNConfig:
    d: int = 128
    field_dims: dict[str, int] = field(default_factory=dict)
    k1: int = 4
    k2: int = 4
    rounds: int = 1
    temperature: float = 1.0
    metric_rank: int = 0  # 0 keeps the full d x d metric
    hidden: int = 256
    lr: float = 0.0015
    l2: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout: float = 0.75
    dropout_mode: str = "drop"  # "drop": rate is drop probability; "keep": rate is keep probability
    cap_v: int = 50
    cap_i: int = 50
    negatives: int = 4
    batch_size: int = 256
    epochs: int = 20
    patience: int = 3
    samples_per_user: int = 0  # 0 means every training edge once per epoch
    seed: int = 0
    node_matching: bool = True
    pref_matching: bool = True
    use_uv: bool = True
    use_ui: bool = True

    def validate(self) -> "GMNConfig":
        if self.d < 1:
            raise ConfigError("d must be positive")
        if self.k1 < 1 or self.k2 < 1:
            raise ConfigError("preference counts k1, k2 must be >= 1")
        if self.rounds < 1:
            raise ConfigError("rounds (L) must be >= 1")
        if not self.temperature > 0:
            raise ConfigError("pooling temperature must be positive")
        if self.metric_rank < 0 or self.metric_rank > self.d:
            raise ConfigError("metric_rank must be in [0, d]")
        if not 0 <= self.dropout < 1 and not (self.dropout_mode == "keep" and self.dropout == 1):
            raise ConfigError("dropout must be in [0, 1)")
        if self.dropout_mode not in ("drop", "keep"):
            raise ConfigError("dropout_mode must be 'drop' or 'keep'")
        if self.negatives < 0 or self.batch_size < 1:
            raise ConfigError("negatives must be >= 0 and batch_size >= 1")
        if self.cap_v < 1 or self.cap_i < 1:
            raise ConfigError("neighbor caps must be >= 1")
        return self

    @property
    def drop_prob(self) -> float:
        return self.dropout if self.dropout_mode == "drop" else 1.0 - self.dropout

    def ks(self, k: int) -> list[int]:
        """Preference count per pooling round: halve each round, floor 1."""
        return [max(1, k >> r) for r in range(self.rounds)]

    @property
    def node_width(self) -> int:
        return 2 * self.d

    @property
    def pref_width(self) -> int:
        """Width of e_u^{U-V} and e_u^{U-I} after the last round."""
        return 2 * self.d * 2**self.rounds

    @property
    def mlp_in(self) -> int:
        return 2 * self.pref_width + 2 * self.d

    def field_split(self, fields: list[str]) -> list[int]:
        """Per-field widths for one node kind; unset fields share what remains of d."""
        fixed = {f: self.field_dims[f] for f in fields if f in self.field_dims}
        free = [f for f in fields if f not in fixed]
        rest = self.d - sum(fixed.values())
        if rest < 0 or (free and rest < len(free)) or (not free and rest != 0):
            raise ConfigError(f"field widths for {fields} do not sum to d={self.d}")
        share = {}
        for n, f in enumerate(free):
            share[f] = rest // len(free) + (1 if n < rest % len(free) else 0)
        return [fixed.get(f, share.get(f)) for f in fields]

    # ----------------------------------------------------------- text format

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            if f.name == "field_dims":
                continue
            lines.append(f"{f.name} = {_fmt(getattr(self, f.name))}")
        for name in sorted(self.field_dims):
            lines.append(f"dim.{name} = {self.field_dims[name]}")
        lines.append(f"# node_width = {self.node_width}")
        lines.append(f"# pref_width = {self.pref_width}")
        lines.append(f"# mlp_in = {self.mlp_in}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GMNConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        defaults = cls()
        kwargs: dict = {"field_dims": {}}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep:
                raise ConfigError(f"config line {lineno}: expected 'key = value'")
            if key.startswith("dim."):
                kwargs["field_dims"][key[4:]] = int(value)
                continue
            if key not in types:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
            current = getattr(defaults, key)
            try:
                if isinstance(current, bool):
                    if value.lower() not in ("true", "false", "1", "0"):
                        raise ValueError(value)
                    kwargs[key] = value.lower() in ("true", "1")
                else:
                    kwargs[key] = type(current)(value)
            except ValueError:
                raise ConfigError(f"config line {lineno}: bad value for {key}: {value!r}") from None
        return cls(**kwargs).validate()

    @classmethod
    def from_file(cls, path: str | Path) -> "GMNConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def replace(self, **changes) -> "GMNConfig":
        return dataclasses.replace(self, **changes).validate()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


class ParamStore:
    """Named float64 tensors, each with a gradient buffer and Adam moments.

    Tensors keep insertion order; that order is the checkpoint order.
    """

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.values:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self) -> list[str]:
        return list(self.values)

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        self.grads[name] += grad

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def sq_norm(self) -> float:
        return float(sum(np.vdot(v, v) for v in self.values.values()))

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for name, v in self.values.items():
            other.add(name, v)
            other.m[name][...] = self.m[name]
            other.v[name][...] = self.v[name]
        other.t = self.t
        return other

    def load_values(self, other: "ParamStore") -> None:
        for name in self.values:
            self.values[name][...] = other.values[name]

    def adam_step(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0) -> None:
        """One Adam update with bias correction.

        ``weight_decay`` is the coefficient of an L2 penalty ``wd * ||theta||^2``;
        its gradient ``2 * wd * theta`` is added before the moment update. A
        tensor with an all-zero gradient and no penalty is left untouched.
        """
        for name, g in self.grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(name)
        b1, b2 = betas
        self.t += 1
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, theta in self.values.items():
            g = self.grads[name]
            if weight_decay:
                g = g + 2.0 * weight_decay * theta
            elif not g.any():
                continue
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            theta -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape if shape is not None else (fan_in, fan_out))


def table_name(field_name: str) -> str:
    return f"emb/{field_name}"


def init_params(config: GMNConfig, schema: dict[Kind, list[tuple[str, int]]], rng_seed: int) -> ParamStore:
    """Allocate and Xavier-initialise every trainable tensor.

    ``schema`` maps each node kind to its ``(field, vocab_size)`` list, as given by
    :meth:`DualGraph.schema`.
    """
    config.validate()
    rng = np.random.default_rng(rng_seed)
    p = ParamStore()
    d = config.d
    seen = set()
    for kind in Kind:
        fields = [f for f, _ in schema[kind]]
        widths = config.field_split(fields)
        for (name, vocab), width in zip(schema[kind], widths):
            if vocab <= 0:
                raise ConfigError(f"field {name!r} of {KIND_NAMES[kind]} has empty vocabulary")
            if name in seen:
                raise ConfigError(f"field {name!r} used by more than one node kind")
            seen.add(name)
            p.add(table_name(name), xavier(rng, vocab, width))
    if config.metric_rank in (0, d):
        p.add("metric", np.eye(d) + 0.01 * xavier(rng, d, d))
    else:
        r = config.metric_rank
        p.add("metric_left", np.eye(d, r) + 0.01 * xavier(rng, d, r))
        p.add("metric_right", np.eye(r, d) + 0.01 * xavier(rng, r, d))
    for side, k in (("video", config.k1), ("item", config.k2)):
        width = config.node_width
        for r, kr in enumerate(config.ks(k)):
            p.add(f"centroids/{side}/{r}", xavier(rng, width, kr).T.copy())
            width *= 2
    p.add("mlp/w0", xavier(rng, config.mlp_in, config.hidden))
    p.add("mlp/b0", np.zeros(config.hidden))
    p.add("mlp/w1", xavier(rng, config.hidden, d))
    p.add("mlp/b1", np.zeros(d))
    return p


def metric_matrix(p: ParamStore) -> np.ndarray:
    if "metric" in p:
        return p["metric"]
    return p["metric_left"] @ p["metric_right"]


# ---------------------------------------------------------------- checkpoints


def checkpoint_to_bytes(p: ParamStore, config: GMNConfig) -> bytes:
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    echo = config.to_text().encode("utf-8")
    buf.write(struct.pack("<Q", len(echo)))
    buf.write(echo)
    buf.write(struct.pack("<I", len(p.values)))
    for name, value in p.values.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", value.ndim))
        buf.write(struct.pack(f"<{value.ndim}Q", *value.shape))
        buf.write(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return buf.getvalue()


def checkpoint_from_bytes(data: bytes) -> tuple[ParamStore, GMNConfig]:
    if data[:5] != CKPT_MAGIC:
        raise ValueError("not a GMNP1 checkpoint")
    pos = 5

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from("<" + fmt, data, pos)
        pos += struct.calcsize("<" + fmt)
        return vals

    (n,) = take("Q")
    config = GMNConfig.from_text(data[pos : pos + n].decode("utf-8"))
    pos += n
    p = ParamStore()
    (count,) = take("I")
    for _ in range(count):
        (ln,) = take("I")
        name = data[pos : pos + ln].decode("utf-8")
        pos += ln
        (ndim,) = take("I")
        shape = take(f"{ndim}Q") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        value = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        p.add(name, value)
    return p, config


def save_checkpoint(p: ParamStore, config: GMNConfig, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(p, config))


def load_checkpoint(path: str | Path) -> tuple[ParamStore, GMNConfig]:
    return checkpoint_from_bytes(Path(path).read_bytes())
