"""Network architecture descriptions, validation, presets and sparse connectivity."""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

MASK64 = (1 << 64) - 1


class PipelineStrategy(str, enum.Enum):
    """Register placement for a composite Poly + Adder layer."""

    PER_LAYER = "per-layer"
    COMBINED = "combined"

    @classmethod
    def parse(cls, value: "str | PipelineStrategy") -> "PipelineStrategy":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"perlayer": "per-layer", "separate": "per-layer", "single": "combined"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown pipeline strategy {value!r}") from None


class ConfigError(ValueError):
    """Raised by :func:`validate_config`; ``errors`` holds every problem found."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture of a sparse polynomial LUT network.

    ``layer_widths`` lists neuron layers only (hidden layers then the output
    layer); the number of input features is ``input_width``.
    """

    input_width: int
    layer_widths: tuple[int, ...]
    beta: int = 2
    fanin: int = 6
    degree: int = 1
    adder: int = 1
    input_beta: int | None = None
    input_fanin: int | None = None
    output_beta: int | None = None
    output_fanin: int | None = None
    depth_factor: int = 1
    width_factor: int = 1
    seed: int = 0
    pipeline_strategy: PipelineStrategy = PipelineStrategy.COMBINED

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        object.__setattr__(self, "pipeline_strategy", PipelineStrategy.parse(self.pipeline_strategy))

    def replace(self, **changes) -> "NetworkConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["layer_widths"] = list(self.layer_widths)
        d["pipeline_strategy"] = self.pipeline_strategy.value
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "NetworkConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError([f"unknown config field {k!r}" for k in unknown])
        return cls(**d)

    def layer_specs(self) -> list["LayerSpec"]:
        """Per-layer word widths and fan-ins after overrides (config must be expanded)."""
        specs = []
        n = len(self.layer_widths)
        prev = self.input_width
        for i, width in enumerate(self.layer_widths):
            first, last = i == 0, i == n - 1
            in_bits = self.input_beta if first and self.input_beta is not None else self.beta
            if first and self.input_fanin is not None:
                fanin = self.input_fanin
            elif last and self.output_fanin is not None:
                fanin = self.output_fanin
            else:
                fanin = self.fanin
            out_bits = self.output_beta if last and self.output_beta is not None else self.beta
            specs.append(
                LayerSpec(
                    index=i,
                    in_width=prev,
                    width=width,
                    in_bits=in_bits,
                    out_bits=out_bits,
                    fanin=fanin,
                    degree=self.degree,
                    adder=self.adder,
                    is_output=last,
                )
            )
            prev = width
        return specs


@dataclass(frozen=True)
class LayerSpec:
    index: int
    in_width: int
    width: int
    in_bits: int
    out_bits: int
    fanin: int
    degree: int
    adder: int
    is_output: bool

    @property
    def sub_bits(self) -> int:
        # sub-neuron outputs grow by one bit so the adder cannot overflow
        return self.out_bits + 1


def expand_layers(widths: tuple[int, ...], depth_factor: int = 1, width_factor: int = 1) -> tuple[int, ...]:
    """Replicate each hidden layer ``depth_factor`` times in place and scale hidden widths.

    >>> expand_layers((64, 32, 5), depth_factor=2)
    (64, 64, 32, 32, 5)
    >>> expand_layers((64, 32, 5), width_factor=2)
    (128, 64, 5)
    """
    *hidden, out = widths
    expanded = []
    for w in hidden:
        expanded.extend([w * width_factor] * depth_factor)
    return tuple(expanded) + (out,)


def validate_config(cfg: NetworkConfig) -> NetworkConfig:
    """Check ``cfg`` and return it with depth/width factors folded into ``layer_widths``.

    Raises :class:`ConfigError` listing every violation found.
    """
    errors: list[str] = []

    def positive(name, value):
        if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
            errors.append(f"{name} must be a positive integer, got {value!r}")
            return False
        return True

    positive("input_width", cfg.input_width)
    positive("beta", cfg.beta)
    positive("fanin", cfg.fanin)
    positive("degree", cfg.degree)
    positive("adder", cfg.adder)
    positive("depth_factor", cfg.depth_factor)
    positive("width_factor", cfg.width_factor)
    for name in ("input_beta", "input_fanin", "output_beta", "output_fanin"):
        value = getattr(cfg, name)
        if value is not None:
            positive(name, value)
    if not cfg.layer_widths:
        errors.append("layer_widths must contain at least the output layer")
    for i, w in enumerate(cfg.layer_widths):
        if w < 1:
            errors.append(f"layer {i} has width {w}; widths must be positive")
    if not 0 <= int(cfg.seed) <= MASK64:
        errors.append(f"seed must fit in 64 bits, got {cfg.seed}")
    if errors:
        raise ConfigError(errors)

    widths = expand_layers(cfg.layer_widths, cfg.depth_factor, cfg.width_factor)
    out = cfg.replace(layer_widths=widths, depth_factor=1, width_factor=1)
    for spec in out.layer_specs():
        if spec.fanin > spec.in_width:
            errors.append(
                f"layer {spec.index}: fan-in {spec.fanin} exceeds previous layer width {spec.in_width}"
            )
    if errors:
        raise ConfigError(errors)
    return out


# ---------------------------------------------------------------------------
# connectivity

class SplitMix64:
    """SplitMix64 generator (Steele, Lea & Flood 2014); portable and bit-exact everywhere."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def sample(self, n: int, k: int) -> list[int]:
        """``k`` distinct values from ``range(n)`` via a partial Fisher-Yates shuffle."""
        swapped: dict[int, int] = {}
        out = []
        for i in range(k):
            j = i + self.below(n - i)
            vi, vj = swapped.get(i, i), swapped.get(j, j)
            swapped[j] = vi
            swapped[i] = vj
            out.append(vj)
        return out


def generate_connectivity(cfg: NetworkConfig) -> list[np.ndarray]:
    """Random sparse wiring: one ``(width, A, F)`` int array of source indices per layer.

    One SplitMix64 stream seeded with ``cfg.seed`` is consumed layer by layer,
    neuron by neuron, group by group. Indices inside a group are distinct;
    groups are drawn independently and may overlap.
    """
    rng = SplitMix64(cfg.seed)
    layers = []
    for spec in cfg.layer_specs():
        conn = np.empty((spec.width, spec.adder, spec.fanin), dtype=np.int64)
        for n in range(spec.width):
            for a in range(spec.adder):
                conn[n, a] = rng.sample(spec.in_width, spec.fanin)
        layers.append(conn)
    return layers


# ---------------------------------------------------------------------------
# presets and config documents

_MNIST_IN = 784
_JSC_IN = 16
_UNSW_IN = 593

PRESETS: dict[str, NetworkConfig] = {
    "hdr": NetworkConfig(_MNIST_IN, (256, 100, 100, 100, 100, 10), beta=2, fanin=6, degree=1, adder=1),
    "jsc-xl": NetworkConfig(
        _JSC_IN, (128, 64, 64, 64, 5), beta=5, fanin=3, degree=1, adder=1, input_beta=7, input_fanin=2
    ),
    "jsc-m-lite": NetworkConfig(_JSC_IN, (64, 32, 5), beta=3, fanin=4, degree=1, adder=1),
    "nid-lite": NetworkConfig(
        _UNSW_IN, (686, 147, 98, 49, 1), beta=3, fanin=5, degree=1, adder=1, input_beta=1, input_fanin=7
    ),
    "hdr-add2": NetworkConfig(_MNIST_IN, (256, 100, 100, 100, 100, 10), beta=2, fanin=4, degree=3, adder=2),
    "jsc-xl-add2": NetworkConfig(
        _JSC_IN, (128, 64, 64, 64, 5), beta=5, fanin=2, degree=3, adder=2, input_beta=7, input_fanin=1
    ),
    "jsc-m-lite-add2": NetworkConfig(_JSC_IN, (64, 32, 5), beta=3, fanin=2, degree=3, adder=2),
    "nid-add2": NetworkConfig(
        _UNSW_IN,
        (100, 100, 50, 50, 1),
        beta=2,
        fanin=3,
        degree=1,
        adder=2,
        input_beta=1,
        input_fanin=6,
        output_beta=2,
        output_fanin=7,
    ),
}

# mini-batch sizes used with each preset family
PRESET_BATCH_SIZE = {name: (128 if name.startswith("hdr") else 1024) for name in PRESETS}


def get_preset(name: str, **overrides) -> NetworkConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise ConfigError([f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}"]) from None
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return cfg.replace(**overrides) if overrides else cfg


def load_config(path: str | Path) -> NetworkConfig:
    """Read a JSON config document whose keys are :class:`NetworkConfig` field names."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"]) from None
    if not isinstance(doc, dict):
        raise ConfigError([f"{path}: top level must be an object"])
    doc.pop("format", None)
    doc.pop("version", None)
    return NetworkConfig.from_dict(doc)


def save_config(cfg: NetworkConfig, path: str | Path) -> None:
    doc = {"format": "polylut.config", "version": 1, **cfg.to_dict()}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


__all__ = [
    "ConfigError",
    "LayerSpec",
    "NetworkConfig",
    "PRESETS",
    "PRESET_BATCH_SIZE",
    "PipelineStrategy",
    "SplitMix64",
    "expand_layers",
    "generate_connectivity",
    "get_preset",
    "load_config",
    "save_config",
    "validate_config",
]
