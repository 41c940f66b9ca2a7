"""Scalar reference implementations used as test oracles.

Written against plain Python floats and ints, without the package's numpy
kernels, so agreement with the library is evidence rather than tautology.
Floating-point operations are performed in the documented order (repeated
multiplication per monomial, left-to-right accumulation) which makes the
comparison exact.
"""

from __future__ import annotations

import itertools
import math

# First outputs of SplitMix64 seeded with 1234567, as published with the
# reference C implementation.
SPLITMIX64_1234567 = [
    6457827717110365317,
    3203168211198807973,
    9817491932198370423,
    4593380528125082431,
    16408922859458223821,
]


def exponent_tuples(n_vars: int, degree: int) -> list[tuple[int, ...]]:
    """Brute-force basis: every exponent vector of total degree <= ``degree``.

    Ordered by total degree, then with earlier variables carrying higher
    powers first (graded lexicographic).
    """
    rows = [e for e in itertools.product(range(degree + 1), repeat=n_vars) if sum(e) <= degree]
    return sorted(rows, key=lambda e: (sum(e), [-v for v in e]))


def count_monomials(n_vars: int, degree: int) -> int:
    """Dynamic-programming count of exponent vectors, no binomials involved."""
    ways = [1] + [0] * degree
    for _ in range(n_vars):
        ways = [sum(ways[: d + 1]) for d in range(degree + 1)]
    return sum(ways)


def splitmix64(seed: int, n: int) -> list[int]:
    mask = (1 << 64) - 1
    state, out = seed & mask, []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        out.append(z ^ (z >> 31))
    return out


# ---------------------------------------------------------------------------
# quantizer

def code_range(bits: int, signed: bool) -> tuple[int, int]:
    if signed:
        return -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return 0, (1 << bits) - 1


def quantize(v: float, bits: int, signed: bool, scale: float, zero_point: int = 0) -> int:
    lo, hi = code_range(bits, signed)
    lo -= zero_point
    hi -= zero_point
    t = v / scale
    if math.isnan(t):
        t = 0.0
    if t >= hi:
        return hi + zero_point
    if t <= lo:
        return lo + zero_point
    r = math.floor(abs(t) + 0.5)
    r = -r if t < 0 else r
    return min(max(r, lo), hi) + zero_point


def dequantize(code: int, scale: float, zero_point: int = 0) -> float:
    return float(code - zero_point) * scale


def to_signed(word: int, bits: int) -> int:
    return word - (1 << bits) if word >> (bits - 1) else word


def unpack(address: int, n_words: int, bits: int, signed: bool = False) -> list[int]:
    mask = (1 << bits) - 1
    words = [(address >> (i * bits)) & mask for i in range(n_words)]
    return [to_signed(w, bits) for w in words] if signed else words


# ---------------------------------------------------------------------------
# neuron arithmetic

def monomial(exps, x) -> float:
    v = None
    for j, e in enumerate(exps):
        for _ in range(int(e)):
            v = x[j] if v is None else v * x[j]
    return 1.0 if v is None else v


def poly(weights, x, degree: int) -> float:
    """``sum_i w_i m_i(x)`` over the brute-force basis, accumulated left to right."""
    basis = exponent_tuples(len(x), degree)
    acc = monomial(basis[0], x) * float(weights[0])
    for e, w in zip(basis[1:], weights[1:]):
        acc = acc + monomial(e, x) * float(w)
    return acc


def _finish(layer, neuron: int, acc: float) -> int:
    bn = layer.bn
    a = float(bn.gamma[neuron]) / math.sqrt(float(bn.running_var[neuron]) + bn.epsilon)
    c = float(bn.beta_shift[neuron]) - a * float(bn.running_mean[neuron])
    y = a * acc + c
    if not layer.spec.is_output:
        y = max(y, 0.0)
    o = layer.out_spec
    return quantize(y, o.bits, o.signed, o.scale, o.zero_point)


def subneuron_entry(layer, neuron: int, group: int, address: int) -> int:
    s, i = layer.spec, layer.in_spec
    codes = unpack(address, s.fanin, s.in_bits)
    x = [dequantize(c, i.scale, i.zero_point) for c in codes]
    acc = poly(layer.weights[neuron, group], x, s.degree)
    if layer.sub_spec is None:
        return _finish(layer, neuron, acc)
    u = layer.sub_spec
    return quantize(acc, u.bits, True, u.scale, u.zero_point)


def adder_entry(layer, neuron: int, address: int) -> int:
    u = layer.sub_spec
    codes = unpack(address, layer.spec.adder, u.bits, signed=True)
    acc = dequantize(codes[0], u.scale, u.zero_point)
    for c in codes[1:]:
        acc = acc + dequantize(c, u.scale, u.zero_point)
    return _finish(layer, neuron, acc)


def forward_codes(net, codes: list[int]) -> list[int]:
    """One input vector of codes through every layer, neuron by neuron."""
    h = list(codes)
    for layer in net.layers:
        s = layer.spec
        out = []
        for n in range(s.width):
            subs = []
            for g in range(s.adder):
                src = [h[int(k)] for k in layer.connectivity[n, g]]
                address = sum(c << (j * s.in_bits) for j, c in enumerate(src))
                subs.append(subneuron_entry(layer, n, g, address))
            if layer.sub_spec is None:
                out.append(subs[0])
            else:
                b = layer.sub_spec.bits
                out.append(adder_entry(layer, n, sum((c & ((1 << b) - 1)) << (j * b) for j, c in enumerate(subs))))
        h = out
    return h


# ---------------------------------------------------------------------------
# resource model, straight from the per-neuron definitions

def polylut_entries(beta: int, fanin: int) -> int:
    return 2 ** (beta * fanin)


def polylut_add_entries(beta: int, fanin: int, adder: int) -> int:
    return adder * 2 ** (beta * fanin) + 2 ** (adder * (beta + 1))


def single_table_entries(beta: int, fanin: int, adder: int) -> int:
    return 2 ** (beta * fanin * adder)
