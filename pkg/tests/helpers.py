"""Builders for small networks used across the test modules."""

from __future__ import annotations

import numpy as np

from polylut.config import NetworkConfig, generate_connectivity, validate_config
from polylut.network import LayerParams, TrainedNetwork, poly_preactivation
from polylut.polymath import enumerate_monomials
from polylut.quantize import BatchNormAffine, QuantSpec, dequantize, fold_batchnorm
from polylut.train import input_spec_for


def random_network(cfg: NetworkConfig, seed: int = 0) -> TrainedNetwork:
    """Random weights and batch norm, with scales set so codes use their whole range."""
    cfg = validate_config(cfg)
    rng = np.random.default_rng(seed)
    conns = generate_connectivity(cfg)
    specs = cfg.layer_specs()
    in_spec = input_spec_for(specs[0].in_bits)
    probe = rng.integers(0, 1 << in_spec.bits, size=(256, cfg.input_width))
    layers = []
    for spec, conn in zip(specs, conns):
        m = len(enumerate_monomials(spec.fanin, spec.degree))
        w = rng.uniform(-1, 1, size=(spec.width, spec.adder, m))
        bn = BatchNormAffine(
            rng.uniform(0.5, 1.5, spec.width),
            rng.normal(0, 0.3, spec.width),
            rng.normal(0, 0.3, spec.width),
            rng.uniform(0.5, 2.0, spec.width),
            1e-5,
        )
        pre = poly_preactivation(w, enumerate_monomials(spec.fanin, spec.degree).exponents,
                                 dequantize(probe[:, conn], in_spec))
        sub_spec = None
        if spec.adder >= 2:
            sub_spec = QuantSpec(spec.sub_bits, True, _scale(np.abs(pre), (1 << (spec.sub_bits - 1)) - 1))
            pre = dequantize(np.clip(np.round(pre / sub_spec.scale), sub_spec.code_min, sub_spec.code_max), sub_spec)
        a, c = fold_batchnorm(bn)
        y = a * pre.sum(-1) + c
        if spec.is_output:
            out_spec = QuantSpec(spec.out_bits, True, _scale(np.abs(y), max((1 << (spec.out_bits - 1)) - 1, 1)))
        else:
            y = np.maximum(y, 0)
            out_spec = QuantSpec(spec.out_bits, False, _scale(y, (1 << spec.out_bits) - 1))
        layers.append(LayerParams(spec, conn, w, bn, in_spec, out_spec, sub_spec))
        in_spec = out_spec
        probe = np.clip(np.round(y / out_spec.scale), out_spec.code_min, out_spec.code_max).astype(np.int64)
    fmin = np.zeros(cfg.input_width)
    fmax = np.ones(cfg.input_width)
    net = TrainedNetwork(cfg, layers, fmin, fmax, {"seed": seed})
    net.check()
    return net


def _scale(values: np.ndarray, code_max: int) -> float:
    return max(float(np.quantile(values, 0.9)), 1e-3) / code_max


def small_config(**kw) -> NetworkConfig:
    base = dict(input_width=6, layer_widths=(5, 4, 3), beta=2, fanin=2, degree=2, adder=2, seed=7)
    base.update(kw)
    return NetworkConfig(**base)


def gradient_check(cfg: NetworkConfig, n: int = 16, seed: int = 0, h: float = 1e-5) -> float:
    """Largest relative error between backprop and central differences, float mode.

    Relative error is ``|a - b| / max(|a|, |b|, 1e-6)``; the floor keeps
    parameters whose true gradient is zero from dividing rounding noise by zero.
    """
    from polylut.train import _Model, loss_and_grad

    cfg = validate_config(cfg)
    model = _Model(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    X = rng.uniform(0, 1, size=(n, cfg.input_width))
    n_out = cfg.layer_widths[-1]
    y = rng.integers(0, 2 if n_out == 1 else n_out, size=n)
    for layer in model.layers:
        layer.gamma[:] = rng.uniform(0.5, 1.5, layer.gamma.shape)
        layer.beta[:] = rng.normal(0, 0.5, layer.beta.shape)

    def loss():
        return loss_and_grad(model.forward(X, fake_quant=False, train=True), y)[0]

    _, dout = loss_and_grad(model.forward(X, fake_quant=False, train=True), y)
    grads = model.backward(dout)
    worst = 0.0
    for p, g in zip(list(model.params()), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss()
            flat[i] = keep - h
            down = loss()
            flat[i] = keep
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-6))
    return worst
