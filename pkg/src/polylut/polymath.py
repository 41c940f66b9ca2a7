"""Monomial bases and exact evaluation of polynomial neurons.

Every routine that produces a value later baked into a lookup table goes
through :func:`monomial_values` and :func:`weighted_sum`.  Both fix their
floating-point operation order (repeated multiplication, left-to-right
accumulation) so a table entry and the reference forward pass agree bit for
bit regardless of array shape.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

INT64_MAX = 2**63 - 1


@dataclass(frozen=True)
class MonomialBasis:
    """All monomials in ``n_vars`` variables of total degree at most ``degree``.

    ``exponents`` has shape ``(M, n_vars)`` in graded lexicographic order, so
    row 0 is the constant monomial.
    """

    n_vars: int
    degree: int
    exponents: np.ndarray

    def __len__(self) -> int:
        return self.exponents.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, MonomialBasis):
            return NotImplemented
        return (
            self.n_vars == other.n_vars
            and self.degree == other.degree
            and np.array_equal(self.exponents, other.exponents)
        )

    def __hash__(self) -> int:
        return hash((self.n_vars, self.degree))

    def names(self, prefix: str = "x") -> list[str]:
        out = []
        for row in self.exponents:
            terms = []
            for j, e in enumerate(row):
                if e == 1:
                    terms.append(f"{prefix}{j}")
                elif e > 1:
                    terms.append(f"{prefix}{j}^{e}")
            out.append("*".join(terms) or "1")
        return out


def monomial_count(n_vars: int, degree: int) -> int:
    """``C(n_vars + degree, degree)``; raises ``OverflowError`` past int64."""
    count = math.comb(n_vars + degree, degree)
    if count > INT64_MAX:
        raise OverflowError(f"C({n_vars}+{degree}, {degree}) does not fit in int64")
    return count


def enumerate_monomials(n_vars: int, degree: int) -> MonomialBasis:
    """Build the basis for ``n_vars`` inputs and maximum total ``degree``.

    >>> enumerate_monomials(2, 2).names()
    ['1', 'x0', 'x1', 'x0^2', 'x0*x1', 'x1^2']
    """
    if n_vars < 1 or degree < 1:
        raise ValueError(f"need n_vars >= 1 and degree >= 1, got ({n_vars}, {degree})")
    count = monomial_count(n_vars, degree)
    exps = np.zeros((count, n_vars), dtype=np.int64)
    row = 1
    for d in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_vars), d):
            for j in combo:
                exps[row, j] += 1
            row += 1
    exps.setflags(write=False)
    return MonomialBasis(n_vars, degree, exps)


def monomial_values(exponents: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate every monomial at ``x`` of shape ``(..., F)``; returns ``(..., M)``."""
    x = np.asarray(x, dtype=np.float64)
    planes = np.ascontiguousarray(np.moveaxis(x, -1, 0))
    out = np.empty((exponents.shape[0],) + x.shape[:-1], dtype=np.float64)
    for i, row in enumerate(exponents):
        v = None
        for j, e in enumerate(row):
            for _ in range(int(e)):
                # starting from the first factor equals starting from 1.0 exactly
                v = planes[j].copy() if v is None else v * planes[j]
        out[i] = 1.0 if v is None else v
    return np.moveaxis(out, 0, -1)


def monomial_jacobian(exponents: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Partial derivatives ``d m_i / d x_j`` with shape ``(..., M, F)``."""
    x = np.asarray(x, dtype=np.float64)
    n_mono, n_vars = exponents.shape
    jac = np.zeros(x.shape[:-1] + (n_mono, n_vars), dtype=np.float64)
    for j in range(n_vars):
        reduced = exponents.copy()
        has = reduced[:, j] > 0
        reduced[has, j] -= 1
        vals = monomial_values(reduced, x)
        jac[..., j] = vals * np.where(has, exponents[:, j], 0)
    return jac


def weighted_sum(monos: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_i weights[..., i] * monos[..., i]`` accumulated left to right."""
    acc = monos[..., 0] * weights[..., 0]
    for i in range(1, monos.shape[-1]):
        acc = acc + monos[..., i] * weights[..., i]
    return acc


def eval_monomials(basis: MonomialBasis, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != basis.n_vars:
        raise ValueError(f"expected {basis.n_vars} variables, got {x.shape[-1]}")
    return monomial_values(basis.exponents, x)


@dataclass(frozen=True)
class PolyNeuron:
    """Polynomial neuron; the bias is the weight of the constant monomial."""

    basis: MonomialBasis
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (len(self.basis),):
            raise ValueError(f"expected {len(self.basis)} weights, got shape {w.shape}")
        object.__setattr__(self, "weights", w)


def neuron_preactivation(neuron: PolyNeuron, x) -> np.ndarray:
    return weighted_sum(eval_monomials(neuron.basis, x), neuron.weights)


def decompose_wide_dot(wide_weights, bias: float, adder: int) -> list[PolyNeuron]:
    """Split a degree-1 neuron of fan-in ``A*F`` into ``A`` sub-neurons of fan-in ``F``.

    Group ``a`` owns inputs ``a*F .. a*F+F-1``.  The whole bias goes to group 0.
    """
    w = np.asarray(wide_weights, dtype=np.float64)
    if adder < 1 or w.ndim != 1 or len(w) == 0 or len(w) % adder:
        raise ValueError(f"cannot split {w.shape} weights into {adder} equal groups")
    fanin = len(w) // adder
    basis = enumerate_monomials(fanin, 1)
    subs = []
    for a in range(adder):
        b = float(bias) if a == 0 else 0.0
        subs.append(PolyNeuron(basis, np.concatenate([[b], w[a * fanin:(a + 1) * fanin]])))
    return subs


class MonomialFeatures(TransformerMixin, BaseEstimator):
    """Expand features into the graded-lex monomial basis of a given degree.

    Unlike :class:`sklearn.preprocessing.PolynomialFeatures` the column order is
    the one used for LUT neuron weights, and the constant column is always first.
    """

    def __init__(self, degree: int = 2):
        self.degree = degree

    def fit(self, X, y=None):
        X = validate_data(self, X, reset=True, dtype=np.float64)
        self.basis_ = enumerate_monomials(X.shape[1], self.degree)
        self.n_output_features_ = len(self.basis_)
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return eval_monomials(self.basis_, X)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "basis_")
        if input_features is None:
            return np.asarray(self.basis_.names(), dtype=object)
        input_features = check_array(np.asarray(input_features, dtype=object).reshape(1, -1), dtype=None)[0]
        names = []
        for row in self.basis_.exponents:
            terms = [
                str(input_features[j]) if e == 1 else f"{input_features[j]}^{e}"
                for j, e in enumerate(row)
                if e
            ]
            names.append(" ".join(terms) or "1")
        return np.asarray(names, dtype=object)
