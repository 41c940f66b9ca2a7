"""Trained network container, reference inference and its on-disk format.

The reference path works on integer codes between layers exactly as the
hardware does.  Table generation (:mod:`polylut.tablegen`) calls the same
unit-level helpers defined here, so table contents and the reference model
cannot drift apart.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .config import LayerSpec, NetworkConfig
from .polymath import enumerate_monomials, monomial_values, weighted_sum
from .quantize import BatchNormAffine, QuantSpec, dequantize, fold_batchnorm, quantize

FORMAT = "polylut.trained-network"
VERSION = 1


class ArtifactError(ValueError):
    """An artifact file is malformed or has an unsupported version."""


@dataclass
class LayerParams:
    spec: LayerSpec
    connectivity: np.ndarray  # (width, A, F) source indices
    weights: np.ndarray  # (width, A, M); column 0 is the bias
    bn: BatchNormAffine
    in_spec: QuantSpec
    out_spec: QuantSpec
    sub_spec: QuantSpec | None = None  # only when A >= 2

    @property
    def exponents(self) -> np.ndarray:
        return enumerate_monomials(self.spec.fanin, self.spec.degree).exponents

    @property
    def relu(self) -> bool:
        return not self.spec.is_output

    def folded_bn(self) -> tuple[np.ndarray, np.ndarray]:
        return fold_batchnorm(self.bn)


@dataclass
class TrainedNetwork:
    config: NetworkConfig
    layers: list[LayerParams]
    feature_min: np.ndarray
    feature_max: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def input_spec(self) -> QuantSpec:
        return self.layers[0].in_spec

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].spec.width

    def check(self) -> None:
        """Raise ``ArtifactError`` if any tensor shape disagrees with the config."""
        specs = self.config.layer_specs()
        if len(specs) != len(self.layers):
            raise ArtifactError(f"config has {len(specs)} layers, network has {len(self.layers)}")
        for spec, layer in zip(specs, self.layers):
            m = len(enumerate_monomials(spec.fanin, spec.degree))
            k, a, f = spec.width, spec.adder, spec.fanin
            if layer.spec != spec:
                raise ArtifactError(f"layer {spec.index}: stored spec {layer.spec} != config {spec}")
            if layer.connectivity.shape != (k, a, f):
                raise ArtifactError(f"layer {spec.index}: connectivity shape {layer.connectivity.shape}")
            if layer.connectivity.min() < 0 or layer.connectivity.max() >= spec.in_width:
                raise ArtifactError(f"layer {spec.index}: connectivity index out of range")
            if layer.weights.shape != (k, a, m):
                raise ArtifactError(f"layer {spec.index}: weight shape {layer.weights.shape} != {(k, a, m)}")
            if (a >= 2) != (layer.sub_spec is not None):
                raise ArtifactError(f"layer {spec.index}: sub-neuron spec must exist iff A >= 2")
        if self.feature_min.shape != (self.config.input_width,):
            raise ArtifactError("feature range does not match input width")


# ---------------------------------------------------------------------------
# unit arithmetic shared with table generation

def poly_preactivation(weights: np.ndarray, exponents: np.ndarray, x_vals: np.ndarray) -> np.ndarray:
    """Sub-neuron pre-activation; ``weights`` broadcasts against ``x_vals[..., :1]``."""
    return weighted_sum(monomial_values(exponents, x_vals), weights)


def finish_neuron(layer: LayerParams, acc: np.ndarray, neurons) -> np.ndarray:
    """Folded batch norm, then ReLU-quantize (hidden) or signed-quantize (output)."""
    a, c = layer.folded_bn()
    y = a[neurons] * acc + c[neurons]
    if layer.relu:
        y = np.maximum(y, 0.0)
    return quantize(y, layer.out_spec)


def adder_sum(sub_codes: np.ndarray, sub_spec: QuantSpec) -> np.ndarray:
    """Sum of dequantized sub-neuron words along the last axis, in group order."""
    acc = dequantize(sub_codes[..., 0], sub_spec)
    for i in range(1, sub_codes.shape[-1]):
        acc = acc + dequantize(sub_codes[..., i], sub_spec)
    return acc


def subneuron_unit(layer: LayerParams, neuron: int, group: int, in_codes: np.ndarray) -> np.ndarray:
    """Output codes of one Poly sub-neuron for ``in_codes`` of shape ``(E, F)``.

    With A = 1 the batch norm and activation are fused in.
    """
    x = dequantize(in_codes, layer.in_spec)
    pre = poly_preactivation(layer.weights[neuron, group], layer.exponents, x)
    if layer.sub_spec is None:
        return finish_neuron(layer, pre, neuron)
    return quantize(pre, layer.sub_spec)


def adder_unit(layer: LayerParams, neuron: int, sub_codes: np.ndarray) -> np.ndarray:
    return finish_neuron(layer, adder_sum(sub_codes, layer.sub_spec), neuron)


# ---------------------------------------------------------------------------
# reference inference

def layer_poly_codes(layer: LayerParams, in_codes: np.ndarray) -> np.ndarray:
    """Sub-neuron output codes, shape ``(N, width, A)``; requires A >= 2."""
    x = dequantize(in_codes[:, layer.connectivity], layer.in_spec)  # (N, K, A, F)
    pre = poly_preactivation(layer.weights, layer.exponents, x)
    return quantize(pre, layer.sub_spec)


def layer_forward_codes(layer: LayerParams, in_codes: np.ndarray) -> np.ndarray:
    neurons = np.arange(layer.spec.width)
    if layer.sub_spec is None:
        x = dequantize(in_codes[:, layer.connectivity[:, 0, :]], layer.in_spec)  # (N, K, F)
        pre = poly_preactivation(layer.weights[:, 0], layer.exponents, x)
        return finish_neuron(layer, pre, neurons)
    sub = layer_poly_codes(layer, in_codes)
    return finish_neuron(layer, adder_sum(sub, layer.sub_spec), neurons)


def forward_codes(net: TrainedNetwork, in_codes, chunk: int = 2048) -> np.ndarray:
    """Integer inference from input codes ``(N, input_width)`` to output codes."""
    codes = np.atleast_2d(np.asarray(in_codes, dtype=np.int64))
    if codes.shape[1] != net.config.input_width:
        raise ValueError(f"expected {net.config.input_width} input words, got {codes.shape[1]}")
    out = []
    for start in range(0, max(len(codes), 1), chunk):
        block = codes[start:start + chunk]
        for layer in net.layers:
            block = layer_forward_codes(layer, block)
        out.append(block)
    return np.concatenate(out)


def normalize_features(net: TrainedNetwork, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != net.config.input_width:
        raise ValueError(f"expected {net.config.input_width} features, got {X.shape[1]}")
    span = np.where(net.feature_max > net.feature_min, net.feature_max - net.feature_min, 1.0)
    return (X - net.feature_min) / span


def encode_inputs(net: TrainedNetwork, X) -> np.ndarray:
    """Raw features to input codes using the training-split min/max range."""
    return quantize(normalize_features(net, X), net.input_spec)


def forward(net: TrainedNetwork, X, fake_quant: bool = True) -> np.ndarray:
    """Class scores for raw features ``X``.

    With ``fake_quant`` every quantizer is active and the scores are the
    dequantized output codes; without it every quantizer is the identity
    (ReLU and the folded batch norm remain).
    """
    if fake_quant:
        return dequantize(forward_codes(net, encode_inputs(net, X)), net.layers[-1].out_spec)
    h = normalize_features(net, X)
    for layer in net.layers:
        a, c = layer.folded_bn()
        x = h[:, layer.connectivity]  # (N, K, A, F)
        pre = poly_preactivation(layer.weights, layer.exponents, x)
        acc = pre[..., 0]
        for g in range(1, pre.shape[-1]):
            acc = acc + pre[..., g]
        h = a * acc + c
        if layer.relu:
            h = np.maximum(h, 0.0)
    return h


def predict_classes(scores: np.ndarray) -> np.ndarray:
    if scores.shape[1] == 1:
        return (scores[:, 0] > 0).astype(np.int64)
    return np.argmax(scores, axis=1)


# ---------------------------------------------------------------------------
# serialization

def _bn_to_dict(bn: BatchNormAffine) -> dict:
    return {
        "gamma": bn.gamma.tolist(),
        "beta_shift": bn.beta_shift.tolist(),
        "running_mean": bn.running_mean.tolist(),
        "running_var": bn.running_var.tolist(),
        "epsilon": bn.epsilon,
    }


def network_to_dict(net: TrainedNetwork) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "config": net.config.to_dict(),
        "feature_min": net.feature_min.tolist(),
        "feature_max": net.feature_max.tolist(),
        "layers": [
            {
                "connectivity": layer.connectivity.tolist(),
                "weights": layer.weights.tolist(),
                "bn": _bn_to_dict(layer.bn),
                "in_spec": layer.in_spec.to_dict(),
                "out_spec": layer.out_spec.to_dict(),
                "sub_spec": None if layer.sub_spec is None else layer.sub_spec.to_dict(),
            }
            for layer in net.layers
        ],
        "metadata": net.metadata,
    }


def network_from_dict(doc: dict) -> TrainedNetwork:
    if doc.get("format") != FORMAT:
        raise ArtifactError(f"not a trained network file (format={doc.get('format')!r})")
    if doc.get("version") != VERSION:
        raise ArtifactError(f"unsupported trained network version {doc.get('version')!r}; expected {VERSION}")
    cfg = NetworkConfig.from_dict(doc["config"])
    layers = []
    for spec, d in zip(cfg.layer_specs(), doc["layers"]):
        bn = d["bn"]
        layers.append(
            LayerParams(
                spec=spec,
                connectivity=np.asarray(d["connectivity"], dtype=np.int64).reshape(spec.width, spec.adder, spec.fanin),
                weights=np.asarray(d["weights"], dtype=np.float64).reshape(spec.width, spec.adder, -1),
                bn=BatchNormAffine(
                    np.asarray(bn["gamma"], dtype=np.float64),
                    np.asarray(bn["beta_shift"], dtype=np.float64),
                    np.asarray(bn["running_mean"], dtype=np.float64),
                    np.asarray(bn["running_var"], dtype=np.float64),
                    float(bn["epsilon"]),
                ),
                in_spec=QuantSpec.from_dict(d["in_spec"]),
                out_spec=QuantSpec.from_dict(d["out_spec"]),
                sub_spec=None if d["sub_spec"] is None else QuantSpec.from_dict(d["sub_spec"]),
            )
        )
    net = TrainedNetwork(
        cfg,
        layers,
        np.asarray(doc["feature_min"], dtype=np.float64),
        np.asarray(doc["feature_max"], dtype=np.float64),
        dict(doc.get("metadata", {})),
    )
    net.check()
    return net


def save_network(net: TrainedNetwork, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n")


def load_network(path: str | Path) -> TrainedNetwork:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return network_from_dict(doc)
