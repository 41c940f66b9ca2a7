"""Exhaustive truth-table enumeration and lookup-table resource accounting.

Bit packing (shared with the simulator and the RTL): a unit's address is the
concatenation of its input words with word 0 in the least significant
position.  Poly sub-neuron words are unsigned codes of ``in_bits`` bits taken
in connectivity order; adder words are the ``sub_bits``-bit two's-complement
codes of sub-neurons ``0..A-1``.
"""

from __future__ import annotations

import enum
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineStrategy
from .network import (
    ArtifactError,
    LayerParams,
    TrainedNetwork,
    adder_sum,
    adder_unit,
    finish_neuron,
    poly_preactivation,
    subneuron_unit,
)
from .quantize import dequantize, quantize

DEFAULT_CAP = 1 << 20
NETLIST_FORMAT = "polylut.netlist"
NETLIST_VERSION = 1
WORKERS_ENV = "POLYLUT_WORKERS"
INT64_MAX = 2**63 - 1


class EnumerationCapError(ValueError):
    """A unit's address space exceeds the configured enumeration cap."""


class UnitKind(str, enum.Enum):
    POLY = "poly"
    ADDER = "adder"


@dataclass(eq=False)
class TruthTable:
    input_bits: int
    output_bits: int
    signed: bool
    entries: np.ndarray
    layer: int
    neuron: int
    kind: UnitKind
    group: int = -1

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.int64)
        if self.entries.shape != (1 << self.input_bits,):
            raise ValueError(f"{self.name}: expected {1 << self.input_bits} entries, got {self.entries.shape}")
        lo = -(1 << (self.output_bits - 1)) if self.signed else 0
        hi = (1 << (self.output_bits - 1)) - 1 if self.signed else (1 << self.output_bits) - 1
        if self.entries.size and (self.entries.min() < lo or self.entries.max() > hi):
            raise ValueError(f"{self.name}: entry outside {self.output_bits}-bit range")

    @property
    def name(self) -> str:
        if self.kind == UnitKind.ADDER:
            return f"l{self.layer}_n{self.neuron}_add"
        return f"l{self.layer}_n{self.neuron}_s{self.group}"

    def __eq__(self, other) -> bool:
        if not isinstance(other, TruthTable):
            return NotImplemented
        return (
            (self.input_bits, self.output_bits, self.signed, self.layer, self.neuron, self.kind, self.group)
            == (other.input_bits, other.output_bits, other.signed, other.layer, other.neuron, other.kind, other.group)
            and np.array_equal(self.entries, other.entries)
        )

    def lookup(self, address) -> np.ndarray:
        return self.entries[np.asarray(address, dtype=np.int64)]


@dataclass(eq=False)
class NetLayer:
    index: int
    in_width: int
    width: int
    in_bits: int
    out_bits: int
    out_signed: bool
    fanin: int
    adder: int
    sub_bits: int | None
    connectivity: np.ndarray  # (width, A, F)
    poly: list[list[TruthTable]]  # [neuron][group]
    adders: list[TruthTable] | None = None
    _poly_stack: np.ndarray | None = field(default=None, repr=False)
    _adder_stack: np.ndarray | None = field(default=None, repr=False)

    @property
    def has_adder(self) -> bool:
        return self.adders is not None

    def poly_stack(self) -> np.ndarray:
        if self._poly_stack is None:
            self._poly_stack = np.stack([np.stack([t.entries for t in row]) for row in self.poly])
        return self._poly_stack

    def adder_stack(self) -> np.ndarray:
        if self._adder_stack is None:
            self._adder_stack = np.stack([t.entries for t in self.adders])
        return self._adder_stack

    def invalidate(self) -> None:
        self._poly_stack = self._adder_stack = None

    def units(self):
        for n in range(self.width):
            yield from self.poly[n]
            if self.adders is not None:
                yield self.adders[n]

    def header(self) -> tuple:
        return (
            self.index, self.in_width, self.width, self.in_bits, self.out_bits,
            self.out_signed, self.fanin, self.adder, self.sub_bits,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetLayer):
            return NotImplemented
        return (
            self.header() == other.header()
            and np.array_equal(self.connectivity, other.connectivity)
            and all(a == b for a, b in zip(self.units(), other.units()))
            and sum(1 for _ in self.units()) == sum(1 for _ in other.units())
        )


@dataclass(eq=False)
class Netlist:
    input_width: int
    input_bits: int
    layers: list[NetLayer]
    strategy: PipelineStrategy = PipelineStrategy.COMBINED  # default register placement; not part of equality

    @property
    def output_width(self) -> int:
        return self.layers[-1].width if self.layers else self.input_width

    @property
    def output_bits(self) -> int:
        return self.layers[-1].out_bits if self.layers else self.input_bits

    @property
    def output_signed(self) -> bool:
        return self.layers[-1].out_signed if self.layers else False

    def units(self):
        for layer in self.layers:
            yield from layer.units()

    def __eq__(self, other) -> bool:
        if not isinstance(other, Netlist):
            return NotImplemented
        return (
            self.input_width == other.input_width
            and self.input_bits == other.input_bits
            and len(self.layers) == len(other.layers)
            and all(a == b for a, b in zip(self.layers, other.layers))
        )

    def resource_report(self) -> "ResourceReport":
        return resource_report(
            [
                LayerGeometry(l.width, l.in_bits, l.fanin, l.out_bits, l.adder)
                for l in self.layers
            ]
        )


# ---------------------------------------------------------------------------
# resource model

class EntryMode(str, enum.Enum):
    POLYLUT = "polylut"
    POLYLUT_ADD = "polylut-add"
    SINGLE_TABLE = "single-table"


def _pow2(exponent: int) -> int:
    if exponent > 62:
        raise OverflowError(f"2^{exponent} table entries do not fit in int64")
    return 1 << exponent


def entry_count(beta: int, fanin: int, degree: int, adder: int, mode: EntryMode | str) -> int:
    """Lookup-table entries per neuron output.

    Independent of ``degree``: the polynomial changes table contents, not size.
    For ``adder == 1`` PolyLUT-Add has no adder unit and equals PolyLUT.
    """
    for name, v in (("beta", beta), ("fanin", fanin), ("degree", degree), ("adder", adder)):
        if v < 1:
            raise ValueError(f"{name} must be positive, got {v}")
    mode = EntryMode(mode)
    if mode == EntryMode.POLYLUT:
        return _pow2(beta * fanin)
    if mode == EntryMode.SINGLE_TABLE:
        return _pow2(beta * fanin * adder)
    if adder == 1:
        return _pow2(beta * fanin)
    total = adder * _pow2(beta * fanin) + _pow2(adder * (beta + 1))
    if total > INT64_MAX:
        raise OverflowError("entry count does not fit in int64")
    return total


def entry_formula(beta: int, fanin: int, adder: int, out_beta: int | None = None) -> str:
    """Human-readable per-neuron entry count, e.g. ``2^12×2 + 2^6``."""
    out_beta = beta if out_beta is None else out_beta
    if adder == 1:
        return f"2^{beta * fanin}"
    return f"2^{beta * fanin}×{adder} + 2^{adder * (out_beta + 1)}"


@dataclass(frozen=True)
class LayerGeometry:
    width: int
    in_bits: int
    fanin: int
    out_bits: int
    adder: int

    @property
    def poly_entries(self) -> int:
        return self.adder * _pow2(self.in_bits * self.fanin)

    @property
    def adder_entries(self) -> int:
        return _pow2(self.adder * (self.out_bits + 1)) if self.adder >= 2 else 0

    @property
    def entries_per_neuron(self) -> int:
        return self.poly_entries + self.adder_entries

    @property
    def single_table_per_neuron(self) -> int:
        return _pow2(self.in_bits * self.fanin * self.adder)

    @property
    def formula(self) -> str:
        if self.adder == 1:
            return f"2^{self.in_bits * self.fanin}"
        return f"2^{self.in_bits * self.fanin}×{self.adder} + 2^{self.adder * (self.out_bits + 1)}"

    @property
    def stages(self) -> dict[PipelineStrategy, int]:
        return {PipelineStrategy.COMBINED: 1, PipelineStrategy.PER_LAYER: 2 if self.adder >= 2 else 1}


@dataclass
class ResourceReport:
    layers: list[LayerGeometry]
    entries_per_layer: list[int]
    single_table_per_layer: list[int]
    total_entries: int
    total_single_table: int
    latency_cycles: dict[PipelineStrategy, int]

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "width": g.width,
                    "in_bits": g.in_bits,
                    "fanin": g.fanin,
                    "out_bits": g.out_bits,
                    "adder": g.adder,
                    "entries_per_neuron": g.entries_per_neuron,
                    "formula": g.formula,
                    "entries": e,
                    "single_table_per_neuron": g.single_table_per_neuron,
                    "single_table_entries": s,
                }
                for g, e, s in zip(self.layers, self.entries_per_layer, self.single_table_per_layer)
            ],
            "total_entries": self.total_entries,
            "total_single_table": self.total_single_table,
            "latency_cycles": {k.value: v for k, v in self.latency_cycles.items()},
        }


def resource_report(layers: list[LayerGeometry]) -> ResourceReport:
    per_layer = [g.width * g.entries_per_neuron for g in layers]
    single = [g.width * g.single_table_per_neuron for g in layers]
    latency = {s: sum(g.stages[s] for g in layers) for s in PipelineStrategy}
    return ResourceReport(layers, per_layer, single, sum(per_layer), sum(single), latency)


def config_resource_report(cfg) -> ResourceReport:
    """Resource model straight from a validated :class:`NetworkConfig`."""
    return resource_report(
        [LayerGeometry(s.width, s.in_bits, s.fanin, s.out_bits, s.adder) for s in cfg.layer_specs()]
    )


# ---------------------------------------------------------------------------
# enumeration

def unpack_words(addresses: np.ndarray, n_words: int, bits: int, signed: bool = False) -> np.ndarray:
    """Split packed addresses into ``(E, n_words)`` codes, word 0 least significant."""
    mask = (1 << bits) - 1
    shifts = np.arange(n_words, dtype=np.int64) * bits
    words = (np.asarray(addresses, dtype=np.int64)[:, None] >> shifts) & mask
    if signed:
        words = words - ((words >> (bits - 1)) & 1) * (1 << bits)
    return words


def pack_words(words: np.ndarray, bits: int) -> np.ndarray:
    """Inverse of :func:`unpack_words` along the last axis (signed words wrap to two's complement)."""
    words = np.asarray(words, dtype=np.int64) & ((1 << bits) - 1)
    shifts = np.arange(words.shape[-1], dtype=np.int64) * bits
    return (words << shifts).sum(-1)


def _check_cap(bits: int, cap: int, what: str) -> None:
    if (1 << bits) > cap:
        raise EnumerationCapError(f"{what}: 2^{bits} entries exceed enumeration cap {cap}")


def build_subneuron_table(net: TrainedNetwork, layer: int, neuron: int, group: int, cap: int = DEFAULT_CAP) -> TruthTable:
    lp = net.layers[layer]
    s = lp.spec
    bits = s.in_bits * s.fanin
    _check_cap(bits, cap, f"layer {layer} poly unit (beta={s.in_bits}, F={s.fanin})")
    codes = unpack_words(np.arange(1 << bits), s.fanin, s.in_bits)
    entries = subneuron_unit(lp, neuron, group, codes)
    out_bits, signed = (lp.out_spec.bits, lp.out_spec.signed) if lp.sub_spec is None else (lp.sub_spec.bits, True)
    return TruthTable(bits, out_bits, signed, entries, layer, neuron, UnitKind.POLY, group)


def build_adder_table(net: TrainedNetwork, layer: int, neuron: int, cap: int = DEFAULT_CAP) -> TruthTable:
    lp = net.layers[layer]
    if lp.sub_spec is None:
        raise ValueError(f"layer {layer} has A=1 and therefore no adder unit")
    sb, a = lp.sub_spec.bits, lp.spec.adder
    bits = a * sb
    _check_cap(bits, cap, f"layer {layer} adder unit (beta={lp.spec.out_bits}, A={a})")
    codes = unpack_words(np.arange(1 << bits), a, sb, signed=True)
    entries = adder_unit(lp, neuron, codes)
    return TruthTable(bits, lp.out_spec.bits, lp.out_spec.signed, entries, layer, neuron, UnitKind.ADDER)


def _layer_tables(lp: LayerParams, neurons: np.ndarray):
    """Batched enumeration for a block of neurons; arithmetic identical to the per-unit builders."""
    s = lp.spec
    bits = s.in_bits * s.fanin
    codes = unpack_words(np.arange(1 << bits), s.fanin, s.in_bits)
    x = dequantize(codes, lp.in_spec)
    w = lp.weights[neurons][:, :, None, :]  # (n, A, 1, M)
    pre = poly_preactivation(w, lp.exponents, x[None, None])  # (n, A, E)
    if lp.sub_spec is None:
        poly = finish_neuron(lp, pre[:, 0], neurons[:, None])[:, None]
        return poly, None
    poly = quantize(pre, lp.sub_spec)
    sb = lp.sub_spec.bits
    sub_codes = unpack_words(np.arange(1 << (s.adder * sb)), s.adder, sb, signed=True)
    acc = adder_sum(sub_codes, lp.sub_spec)
    adders = finish_neuron(lp, acc[None, :], neurons[:, None])
    return poly, adders


def _workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, workers)


def compile_network(net: TrainedNetwork, cap: int = DEFAULT_CAP, workers: int | None = None,
                    block: int = 64) -> Netlist:
    """Enumerate every unit of ``net`` into a :class:`Netlist`.

    Neuron blocks may be built on ``workers`` threads (default from the
    ``POLYLUT_WORKERS`` environment variable); results are assembled by unit
    identity, so the netlist does not depend on scheduling.
    """
    for lp in net.layers:
        s = lp.spec
        _check_cap(s.in_bits * s.fanin, cap, f"layer {s.index} poly unit (beta={s.in_bits}, F={s.fanin})")
        if lp.sub_spec is not None:
            _check_cap(s.adder * lp.sub_spec.bits, cap, f"layer {s.index} adder unit (beta={s.out_bits}, A={s.adder})")

    jobs = []
    for li, lp in enumerate(net.layers):
        for start in range(0, lp.spec.width, block):
            jobs.append((li, np.arange(start, min(start + block, lp.spec.width))))

    n_workers = _workers(workers)
    if n_workers == 1:
        results = [_layer_tables(net.layers[li], idx) for li, idx in jobs]
    else:
        with ThreadPoolExecutor(n_workers) as pool:
            results = list(pool.map(lambda job: _layer_tables(net.layers[job[0]], job[1]), jobs))

    by_layer: dict[int, list] = {}
    for (li, idx), res in zip(jobs, results):
        by_layer.setdefault(li, []).append((idx, res))

    layers = []
    for li, lp in enumerate(net.layers):
        s = lp.spec
        bits = s.in_bits * s.fanin
        fused = lp.sub_spec is None
        p_bits, p_signed = (lp.out_spec.bits, lp.out_spec.signed) if fused else (lp.sub_spec.bits, True)
        poly_rows: list[list[TruthTable]] = []
        adders: list[TruthTable] | None = None if fused else []
        for idx, (poly, add) in by_layer[li]:
            for j, n in enumerate(idx):
                poly_rows.append([
                    TruthTable(bits, p_bits, p_signed, poly[j, g], li, int(n), UnitKind.POLY, g)
                    for g in range(poly.shape[1])
                ])
                if not fused:
                    adders.append(
                        TruthTable(s.adder * lp.sub_spec.bits, lp.out_spec.bits, lp.out_spec.signed,
                                   add[j], li, int(n), UnitKind.ADDER)
                    )
        layers.append(
            NetLayer(
                index=li,
                in_width=s.in_width,
                width=s.width,
                in_bits=s.in_bits,
                out_bits=lp.out_spec.bits,
                out_signed=lp.out_spec.signed,
                fanin=s.fanin,
                adder=s.adder,
                sub_bits=None if fused else lp.sub_spec.bits,
                connectivity=lp.connectivity.copy(),
                poly=poly_rows,
                adders=adders,
            )
        )
    return Netlist(net.config.input_width, net.input_spec.bits, layers, net.config.pipeline_strategy)


# ---------------------------------------------------------------------------
# netlist dump

def _hex_digits(bits: int) -> int:
    return (bits + 3) // 4


def encode_entries(entries: np.ndarray, bits: int) -> str:
    """Two's-complement entries as fixed-width lowercase hex, entry 0 first."""
    digits = _hex_digits(bits)
    raw = (np.asarray(entries, dtype=np.int64) & ((1 << bits) - 1)).astype(np.uint64)
    chars = np.empty((len(raw), digits), dtype="<U1")
    alphabet = np.array(list("0123456789abcdef"))
    for d in range(digits):
        chars[:, digits - 1 - d] = alphabet[(raw >> np.uint64(4 * d)) & np.uint64(15)]
    return "".join(chars.ravel())


def decode_entries(text: str, n: int, bits: int, signed: bool) -> np.ndarray:
    digits = _hex_digits(bits)
    if len(text) != n * digits:
        raise ArtifactError(f"table payload has {len(text)} hex digits, expected {n * digits}")
    buf = np.frombuffer(text.encode("ascii"), dtype=np.uint8).reshape(n, digits)
    vals = np.where(buf >= ord("a"), buf - ord("a") + 10, buf - ord("0")).astype(np.int64)
    out = np.zeros(n, dtype=np.int64)
    for d in range(digits):
        out = (out << 4) | vals[:, d]
    if signed:
        out = out - ((out >> (bits - 1)) & 1) * (1 << bits)
    return out


def _table_doc(t: TruthTable) -> dict:
    return {
        "input_bits": t.input_bits,
        "output_bits": t.output_bits,
        "signed": t.signed,
        "entries": encode_entries(t.entries, t.output_bits),
    }


def netlist_to_dict(nl: Netlist) -> dict:
    return {
        "format": NETLIST_FORMAT,
        "version": NETLIST_VERSION,
        "packing": "word 0 least significant; signed words two's complement",
        "input_width": nl.input_width,
        "input_bits": nl.input_bits,
        "strategy": nl.strategy.value,
        "layers": [
            {
                "index": l.index,
                "in_width": l.in_width,
                "width": l.width,
                "in_bits": l.in_bits,
                "out_bits": l.out_bits,
                "out_signed": l.out_signed,
                "fanin": l.fanin,
                "adder": l.adder,
                "sub_bits": l.sub_bits,
                "connectivity": l.connectivity.tolist(),
                "poly": [[_table_doc(t) for t in row] for row in l.poly],
                "adders": None if l.adders is None else [_table_doc(t) for t in l.adders],
            }
            for l in nl.layers
        ],
    }


def _table_from_doc(d: dict, layer: int, neuron: int, kind: UnitKind, group: int = -1) -> TruthTable:
    n = 1 << int(d["input_bits"])
    entries = decode_entries(d["entries"], n, int(d["output_bits"]), bool(d["signed"]))
    return TruthTable(int(d["input_bits"]), int(d["output_bits"]), bool(d["signed"]), entries, layer, neuron, kind, group)


def netlist_from_dict(doc: dict) -> Netlist:
    if doc.get("format") != NETLIST_FORMAT:
        raise ArtifactError(f"not a netlist file (format={doc.get('format')!r})")
    if doc.get("version") != NETLIST_VERSION:
        raise ArtifactError(f"unsupported netlist version {doc.get('version')!r}; expected {NETLIST_VERSION}")
    layers = []
    for l in doc["layers"]:
        li = int(l["index"])
        k, a, f = int(l["width"]), int(l["adder"]), int(l["fanin"])
        poly = [
            [_table_from_doc(t, li, n, UnitKind.POLY, g) for g, t in enumerate(row)]
            for n, row in enumerate(l["poly"])
        ]
        adders = None
        if l["adders"] is not None:
            adders = [_table_from_doc(t, li, n, UnitKind.ADDER) for n, t in enumerate(l["adders"])]
        layers.append(
            NetLayer(
                index=li,
                in_width=int(l["in_width"]),
                width=k,
                in_bits=int(l["in_bits"]),
                out_bits=int(l["out_bits"]),
                out_signed=bool(l["out_signed"]),
                fanin=f,
                adder=a,
                sub_bits=None if l["sub_bits"] is None else int(l["sub_bits"]),
                connectivity=np.asarray(l["connectivity"], dtype=np.int64).reshape(k, a, f),
                poly=poly,
                adders=adders,
            )
        )
    return Netlist(int(doc["input_width"]), int(doc["input_bits"]), layers, PipelineStrategy.parse(doc["strategy"]))


def save_netlist(nl: Netlist, path: str | Path) -> None:
    Path(path).write_text(json.dumps(netlist_to_dict(nl), indent=1) + "\n")


def load_netlist(path: str | Path) -> Netlist:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return netlist_from_dict(doc)
