"""Quantization-aware training of sparse polynomial LUT networks.

Plain numpy with hand-written backpropagation.  Quantizers use
straight-through gradients (identity inside the clipping range, zero
outside); their scales are calibrated from running range statistics and
frozen into the returned network.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_is_fitted, validate_data

from .config import NetworkConfig, generate_connectivity, validate_config
from .datasets import Dataset
from .network import LayerParams, TrainedNetwork, forward, predict_classes
from .polymath import enumerate_monomials, monomial_values
from .quantize import BatchNormAffine, QuantSpec, fake_quantize, round_half_away, ste_mask

log = logging.getLogger(__name__)

BN_EPS = 1e-5
CALIBRATION_QUANTILE = 0.99


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainHyper:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-2
    weight_decay: float = 1e-2
    seed: int = 0
    bn_momentum: float = 0.1
    scale_momentum: float = 0.1
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8


@dataclass
class _Layer:
    """Mutable training state for one composite layer."""

    spec: object
    conn: np.ndarray
    exps: np.ndarray
    W: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    in_spec: QuantSpec
    sub_scale: np.ndarray | float = 1.0  # one scale per neuron while training
    out_scale: float = 1.0
    cache: dict = field(default_factory=dict)

    @property
    def quantized_sub(self) -> bool:
        return self.spec.adder >= 2

    def sub_scales(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.sub_scale, dtype=np.float64), (self.spec.width,))

    def out_spec(self) -> QuantSpec:
        return QuantSpec(self.spec.out_bits, self.spec.is_output, self.out_scale)


def input_spec_for(bits: int) -> QuantSpec:
    """Unsigned input code spanning the normalized feature range [0, 1]."""
    return QuantSpec(bits, False, 1.0 / ((1 << bits) - 1))


def _calibrated_scale(values: np.ndarray, code_max: int, axis=None):
    if values.size == 0:
        return 1.0
    q = np.quantile(values, CALIBRATION_QUANTILE, axis=axis)
    if not np.all(np.isfinite(q)):
        raise TrainingError("non-finite activations while calibrating quantizer scales")
    # a 1-bit signed word has code_max 0; size it by its single negative step instead
    out = np.maximum(q, 1e-6) / max(code_max, 1)
    return float(out) if out.ndim == 0 else out


def _fake_quantize_rows(pre: np.ndarray, scales: np.ndarray, bits: int) -> tuple[np.ndarray, np.ndarray]:
    """Signed fake quantization of ``pre`` (N, K, A) with a scale per neuron; returns values and STE mask."""
    s = scales[:, None]
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    q = np.clip(round_half_away(pre / s), lo, hi) * s
    mask = ((pre >= lo * s) & (pre <= hi * s)).astype(np.float64)
    return q, mask


class _Model:
    def __init__(self, cfg: NetworkConfig, seed: int):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        conns = generate_connectivity(cfg)
        self.layers: list[_Layer] = []
        in_spec = input_spec_for(cfg.layer_specs()[0].in_bits)
        for spec, conn in zip(cfg.layer_specs(), conns):
            exps = enumerate_monomials(spec.fanin, spec.degree).exponents
            bound = 1.0 / math.sqrt(spec.adder * exps.shape[0])
            W = rng.uniform(-bound, bound, size=(spec.width, spec.adder, exps.shape[0]))
            layer = _Layer(
                spec=spec,
                conn=conn,
                exps=exps,
                W=W,
                gamma=np.ones(spec.width),
                beta=np.zeros(spec.width),
                running_mean=np.zeros(spec.width),
                running_var=np.ones(spec.width),
                in_spec=in_spec,
            )
            self.layers.append(layer)
            in_spec = QuantSpec(spec.out_bits, False, 1.0)  # placeholder, fixed after calibration

    def params(self):
        for layer in self.layers:
            yield layer.W
            yield layer.gamma
            yield layer.beta

    def _link_specs(self):
        for prev, layer in zip(self.layers, self.layers[1:]):
            layer.in_spec = prev.out_spec()

    # -- forward -----------------------------------------------------------

    def forward(self, h: np.ndarray, fake_quant: bool, train: bool, calibrate: str | None = None,
                hyper: TrainHyper | None = None) -> np.ndarray:
        """Training-time forward on normalized inputs ``h``.

        ``calibrate`` is ``None`` (use current scales), ``"set"`` (overwrite
        scales from this batch) or ``"ema"`` (move scales toward this batch).
        """
        if fake_quant:
            h = fake_quantize(h, self.layers[0].in_spec)
        for layer in self.layers:
            spec = layer.spec
            c = layer.cache
            xg = h[:, layer.conn]  # (N, K, A, F)
            mon = monomial_values(layer.exps, xg)
            pre = (mon * layer.W).sum(-1)  # (N, K, A)
            c["xg"], c["mon"] = xg, mon
            if fake_quant and layer.quantized_sub:
                if calibrate is not None:
                    # the constant weight is invisible to batch norm; spend it on centring
                    # each sub-neuron inside its signed code range
                    m = 1.0 if calibrate == "set" else hyper.scale_momentum
                    shift = m * pre.mean(0)
                    layer.W[..., 0] -= shift
                    pre = pre - shift
                code_max = (1 << (spec.sub_bits - 1)) - 1
                # per neuron: pre-activations are not normalized yet, so their ranges differ widely
                layer.sub_scale = self._update_scale(layer.sub_scale, np.abs(pre), code_max, calibrate, hyper,
                                                     axis=(0, 2))
                q, c["sub_mask"] = _fake_quantize_rows(pre, layer.sub_scales(), spec.sub_bits)
            else:
                c["sub_mask"] = None
                q = pre
            z = q.sum(-1)  # (N, K)
            if train:
                mu = z.mean(0)
                var = z.var(0)
                inv_std = 1.0 / np.sqrt(var + BN_EPS)
                zhat = (z - mu) * inv_std
                c["zhat"], c["inv_std"] = zhat, inv_std
                if calibrate == "ema" and hyper is not None:
                    m = hyper.bn_momentum
                    n = z.shape[0]
                    layer.running_mean = (1 - m) * layer.running_mean + m * mu
                    layer.running_var = (1 - m) * layer.running_var + m * var * n / max(n - 1, 1)
            else:
                inv_std = 1.0 / np.sqrt(layer.running_var + BN_EPS)
                zhat = (z - layer.running_mean) * inv_std
                c["zhat"], c["inv_std"] = zhat, inv_std
            c["train"] = train
            y = layer.gamma * zhat + layer.beta
            if spec.is_output:
                if fake_quant:
                    code_max = (1 << (spec.out_bits - 1)) - 1
                    layer.out_scale = self._update_scale(layer.out_scale, np.abs(y), code_max, calibrate, hyper)
                    ospec = layer.out_spec()
                    c["out_mask"] = ste_mask(y, ospec)
                    h = fake_quantize(y, ospec)
                else:
                    c["out_mask"] = np.ones_like(y)
                    h = y
            else:
                r = np.maximum(y, 0.0)
                if fake_quant:
                    code_max = (1 << spec.out_bits) - 1
                    layer.out_scale = self._update_scale(layer.out_scale, r, code_max, calibrate, hyper)
                    ospec = layer.out_spec()
                    c["out_mask"] = (y > 0) * ste_mask(y, ospec)
                    h = fake_quantize(r, ospec)
                else:
                    c["out_mask"] = (y > 0).astype(np.float64)
                    h = r
        if fake_quant:
            self._link_specs()
        return h

    @staticmethod
    def _update_scale(current, values, code_max, mode, hyper, axis=None):
        if mode is None:
            return current
        target = _calibrated_scale(values, code_max, axis)
        if mode == "set":
            return target
        m = hyper.scale_momentum
        return (1 - m) * current + m * target

    # -- backward ----------------------------------------------------------

    def backward(self, dout: np.ndarray) -> list[np.ndarray]:
        """Gradients for every parameter, in :meth:`params` order."""
        grads: list[list[np.ndarray]] = []
        for li in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[li]
            c = layer.cache
            dy = dout * c["out_mask"]
            zhat = c["zhat"]
            dgamma = (dy * zhat).sum(0)
            dbeta = dy.sum(0)
            dzhat = dy * layer.gamma
            n = dy.shape[0]
            if c["train"]:
                dz = c["inv_std"] / n * (n * dzhat - dzhat.sum(0) - zhat * (dzhat * zhat).sum(0))
            else:
                dz = dzhat * c["inv_std"]
            dpre = np.broadcast_to(dz[..., None], c["mon"].shape[:-1])
            if c["sub_mask"] is not None:
                dpre = dpre * c["sub_mask"]
            dW = (dpre[..., None] * c["mon"]).sum(0)
            grads.append([dW, dgamma, dbeta])
            if li == 0:
                break
            dmon = dpre[..., None] * layer.W  # (N, K, A, M)
            dxg = np.zeros(c["xg"].shape)
            xg = c["xg"]
            for j in range(layer.exps.shape[1]):
                e = layer.exps[:, j]
                reduced = layer.exps.copy()
                reduced[e > 0, j] -= 1
                dxg[..., j] = (dmon * (monomial_values(reduced, xg) * e)).sum(-1)
            prev_width = self.layers[li - 1].spec.width
            dh = np.zeros((n, prev_width))
            np.add.at(dh, (slice(None), layer.conn.ravel()), dxg.reshape(n, -1))
            dout = dh
        out = []
        for g in reversed(grads):
            out.extend(g)
        return out

    # -- export ------------------------------------------------------------

    def to_network(self, feature_min, feature_max, metadata) -> TrainedNetwork:
        layers = []
        for layer in self.layers:
            W, mean, var = layer.W.copy(), layer.running_mean.copy(), layer.running_var.copy()
            sub_spec = None
            if layer.quantized_sub:
                # The exported format has one sub-neuron scale per layer.  Scaling a
                # neuron's weights by k keeps its codes on the shared grid, and batch
                # norm after the adder absorbs k (mean * k, var + eps -> k^2 (var + eps)).
                scales = layer.sub_scales()
                shared = float(scales.max())
                k = shared / scales  # >= 1, so the folded variance stays non-negative
                W *= k[:, None, None]
                mean *= k
                var = k * k * (var + BN_EPS) - BN_EPS
                sub_spec = QuantSpec(layer.spec.sub_bits, True, shared)
            layers.append(
                LayerParams(
                    spec=layer.spec,
                    connectivity=layer.conn.copy(),
                    weights=W,
                    bn=BatchNormAffine(layer.gamma.copy(), layer.beta.copy(), mean, var, BN_EPS),
                    in_spec=layer.in_spec,
                    out_spec=layer.out_spec(),
                    sub_spec=sub_spec,
                )
            )
        net = TrainedNetwork(self.cfg, layers, np.asarray(feature_min, float), np.asarray(feature_max, float), metadata)
        net.check()
        return net


def loss_and_grad(scores: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Cross-entropy over raw scores; a single output column uses the sigmoid form."""
    n = scores.shape[0]
    if scores.shape[1] == 1:
        s = scores[:, 0]
        t = y.astype(np.float64)
        loss = float(np.mean(np.logaddexp(0.0, s) - t * s))
        p = 0.5 * (1.0 + np.tanh(0.5 * s))
        return loss, ((p - t) / n)[:, None]
    shifted = scores - scores.max(1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(1))
    loss = float(np.mean(logsum - shifted[np.arange(n), y]))
    p = np.exp(shifted - logsum[:, None])
    p[np.arange(n), y] -= 1.0
    return loss, p / n


class AdamW:
    """Adam with decoupled weight decay (Loshchilov & Hutter)."""

    def __init__(self, params, lr, weight_decay, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr, self.wd, self.betas, self.eps = lr, weight_decay, betas, eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.betas
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            p *= 1 - self.lr * self.wd
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _accuracy(net: TrainedNetwork, X, y) -> float | None:
    if len(y) == 0:
        return None
    return float(np.mean(predict_classes(forward(net, X, fake_quant=True)) == y))


def train(cfg: NetworkConfig, data: Dataset, hyper: TrainHyper | None = None) -> TrainedNetwork:
    """Quantization-aware training; deterministic for fixed ``(cfg, data, hyper)``."""
    hyper = hyper or TrainHyper()
    cfg = validate_config(cfg)
    if data.n_features != cfg.input_width:
        raise ValueError(f"dataset has {data.n_features} features, config expects {cfg.input_width}")
    n_out = cfg.layer_widths[-1]
    if n_out == 1 and data.n_classes > 2 or n_out > 1 and data.n_classes > n_out:
        raise ValueError(f"{data.n_classes} classes cannot be scored by {n_out} output neurons")
    if len(data.train_idx) < 2:
        raise ValueError("need at least two training samples")

    fmin, fmax = data.feature_range()
    X_train, y_train = data.X[data.train_idx], data.y[data.train_idx]
    span = np.where(fmax > fmin, fmax - fmin, 1.0)
    H = (X_train - fmin) / span

    model = _Model(cfg, hyper.seed)
    rng = np.random.default_rng([hyper.seed, 1])
    calib = H[rng.permutation(len(H))[: max(hyper.batch_size, 2)]]
    model.forward(calib, fake_quant=True, train=True, calibrate="set")

    opt = AdamW(model.params(), hyper.learning_rate, hyper.weight_decay, hyper.adam_betas, hyper.adam_eps)
    history = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(H))
        total, seen = 0.0, 0
        for start in range(0, len(order), hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            if len(idx) < 2:
                continue
            scores = model.forward(H[idx], fake_quant=True, train=True, calibrate="ema", hyper=hyper)
            loss, dout = loss_and_grad(scores, y_train[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch starting at {start}")
            opt.step(model.backward(dout))
            total += loss * len(idx)
            seen += len(idx)
        history.append(total / max(seen, 1))
        log.debug("epoch %d loss %.5f", epoch, history[-1])

    metadata = {"epochs": hyper.epochs, "seed": hyper.seed, "loss_history": history}
    net = model.to_network(fmin, fmax, metadata)
    net.metadata["train_accuracy"] = _accuracy(net, X_train, y_train)
    net.metadata["test_accuracy"] = _accuracy(net, data.X[data.test_idx], data.y[data.test_idx])
    return net


# ---------------------------------------------------------------------------
# ablation grid

class AblationPoint(NamedTuple):
    label: str
    config: NetworkConfig


def ablation_grid(base: NetworkConfig, depth_factors=(2,), width_factors=(2,), adders=(2, 3)) -> list[AblationPoint]:
    """Baseline plus Deeper, Wider and Add variants of ``base`` (duplicates dropped)."""
    base = validate_config(base)
    points = [AblationPoint("PolyLUT", base)]
    for d in depth_factors:
        points.append(AblationPoint(f"PolyLUT-Deeper(D={d})", validate_config(base.replace(depth_factor=d))))
    for w in width_factors:
        points.append(AblationPoint(f"PolyLUT-Wider(W={w})", validate_config(base.replace(width_factor=w))))
    for a in adders:
        points.append(AblationPoint(f"PolyLUT-Add(A={a})", validate_config(base.replace(adder=a))))
    unique, seen = [], set()
    for p in points:
        if p.config not in seen:
            seen.add(p.config)
            unique.append(p)
    return unique


# ---------------------------------------------------------------------------
# estimator facade

class PolyLUTClassifier(ClassifierMixin, BaseEstimator):
    """Scikit-learn classifier backed by a quantized sparse polynomial LUT network.

    Parameters mirror :class:`~polylut.config.NetworkConfig`; the output layer
    width is inferred from the labels (one logit for binary problems).
    """

    def __init__(
        self,
        hidden_layer_sizes=(64, 32),
        beta=2,
        fanin=4,
        degree=1,
        adder=1,
        input_beta=None,
        input_fanin=None,
        output_beta=None,
        output_fanin=None,
        depth_factor=1,
        width_factor=1,
        epochs=100,
        batch_size=128,
        learning_rate=1e-2,
        weight_decay=1e-2,
        connectivity_seed=0,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.beta = beta
        self.fanin = fanin
        self.degree = degree
        self.adder = adder
        self.input_beta = input_beta
        self.input_fanin = input_fanin
        self.output_beta = output_beta
        self.output_fanin = output_fanin
        self.depth_factor = depth_factor
        self.width_factor = width_factor
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.connectivity_seed = connectivity_seed
        self.random_state = random_state

    def _config(self, n_features, n_classes) -> NetworkConfig:
        n_out = 1 if n_classes == 2 else n_classes
        return NetworkConfig(
            input_width=n_features,
            layer_widths=tuple(self.hidden_layer_sizes) + (n_out,),
            beta=self.beta,
            fanin=self.fanin,
            degree=self.degree,
            adder=self.adder,
            input_beta=self.input_beta,
            input_fanin=self.input_fanin,
            output_beta=self.output_beta,
            output_fanin=self.output_fanin,
            depth_factor=self.depth_factor,
            width_factor=self.width_factor,
            seed=self.connectivity_seed,
        )

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        codes = self._encoder.transform(y)
        data = Dataset(X, codes, np.arange(len(X)), np.arange(0), len(self.classes_), name="fit")
        hyper = TrainHyper(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            seed=self.random_state,
        )
        self.network_ = train(self._config(X.shape[1], len(self.classes_)), data, hyper)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        scores = forward(self.network_, X, fake_quant=True)
        return scores[:, 0] if scores.shape[1] == 1 else scores

    def predict_proba(self, X):
        s = self.decision_function(X)
        if s.ndim == 1:
            p = 0.5 * (1.0 + np.tanh(0.5 * s))
            return np.column_stack([1 - p, p])
        e = np.exp(s - s.max(1, keepdims=True))
        return e / e.sum(1, keepdims=True)

    def predict(self, X):
        s = self.decision_function(X)
        idx = (s > 0).astype(np.int64) if s.ndim == 1 else np.argmax(s, axis=1)
        return self.classes_[idx]

    def to_netlist(self, **kwargs):
        from .tablegen import compile_network

        check_is_fitted(self, "network_")
        return compile_network(self.network_, **kwargs)
