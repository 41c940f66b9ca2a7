"""Uniform quantizers, batch-norm folding and straight-through masks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuantSpec:
    """Uniform quantizer: ``value = (code - zero_point) * scale``."""

    bits: int
    signed: bool
    scale: float = 1.0
    zero_point: int = 0

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError(f"bits must be >= 1, got {self.bits}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")

    @property
    def code_min(self) -> int:
        return -(1 << (self.bits - 1)) if self.signed else 0

    @property
    def code_max(self) -> int:
        return (1 << (self.bits - 1)) - 1 if self.signed else (1 << self.bits) - 1

    @property
    def n_codes(self) -> int:
        return 1 << self.bits

    def codes(self) -> np.ndarray:
        return np.arange(self.code_min, self.code_max + 1, dtype=np.int64)

    def to_dict(self) -> dict:
        return {"bits": self.bits, "signed": self.signed, "scale": self.scale, "zero_point": self.zero_point}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantSpec":
        return cls(int(d["bits"]), bool(d["signed"]), float(d["scale"]), int(d.get("zero_point", 0)))


def round_half_away(t: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(t) + 0.5), t)


def quantize(v, spec: QuantSpec):
    """Nearest code (ties away from zero), saturated to the code range.

    NaN maps to the zero-point code, infinities to the range ends.
    """
    with np.errstate(over="ignore"):  # overflow to +-inf saturates below
        t = np.asarray(v, dtype=np.float64) / spec.scale
    lo = float(spec.code_min - spec.zero_point)
    hi = float(spec.code_max - spec.zero_point)
    t = np.nan_to_num(t, nan=0.0, posinf=hi, neginf=lo)
    code = np.clip(round_half_away(t), lo, hi).astype(np.int64) + spec.zero_point
    return int(code) if code.ndim == 0 else code


def dequantize(code, spec: QuantSpec):
    out = (np.asarray(code, dtype=np.int64) - spec.zero_point).astype(np.float64) * spec.scale
    return float(out) if out.ndim == 0 else out


def fake_quantize(v, spec: QuantSpec) -> np.ndarray:
    return dequantize(quantize(v, spec), spec)


def ste_mask(v, spec: QuantSpec) -> np.ndarray:
    """Straight-through gradient of the quantizer: 1 inside the clipping range, else 0."""
    v = np.asarray(v, dtype=np.float64)
    lo = (spec.code_min - spec.zero_point) * spec.scale
    hi = (spec.code_max - spec.zero_point) * spec.scale
    return ((v >= lo) & (v <= hi)).astype(np.float64)


def activation_quantized(pre, spec: QuantSpec):
    """ReLU followed by quantization to the layer's unsigned output code."""
    return quantize(np.maximum(np.asarray(pre, dtype=np.float64), 0.0), spec)


def subneuron_output_spec(beta: int, scale: float = 1.0) -> QuantSpec:
    """Signed ``beta + 1``-bit word carried from a Poly sub-neuron into the adder."""
    if beta < 1:
        raise ValueError(f"beta must be >= 1, got {beta}")
    return QuantSpec(beta + 1, True, scale)


def adder_input_bits(beta: int, adder: int) -> int:
    return adder * (beta + 1)


@dataclass(frozen=True)
class BatchNormAffine:
    gamma: np.ndarray
    beta_shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5


def fold_batchnorm(bn: BatchNormAffine) -> tuple[np.ndarray, np.ndarray]:
    """Collapse inference-mode batch norm into ``y = a * x + c``."""
    var = np.asarray(bn.running_var, dtype=np.float64)
    if np.any(var < 0):
        raise ValueError("running_var must be non-negative")
    a = np.asarray(bn.gamma, dtype=np.float64) / np.sqrt(var + bn.epsilon)
    c = np.asarray(bn.beta_shift, dtype=np.float64) - a * np.asarray(bn.running_mean, dtype=np.float64)
    return a, c


def apply_batchnorm(bn: BatchNormAffine, x):
    """Unfolded reference form ``gamma * (x - mean) / sqrt(var + eps) + beta``."""
    return bn.gamma * (np.asarray(x) - bn.running_mean) / np.sqrt(bn.running_var + bn.epsilon) + bn.beta_shift
