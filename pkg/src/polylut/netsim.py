"""Bit-exact netlist evaluation, register-level pipeline simulation and equivalence checks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import PipelineStrategy
from .network import TrainedNetwork, forward_codes
from .tablegen import DEFAULT_CAP, NetLayer, Netlist, compile_network, pack_words

DEFAULT_EXHAUSTIVE_BITS = 16
DEFAULT_RANDOM_SAMPLES = 100_000


def poly_stage(layer: NetLayer, codes: np.ndarray) -> np.ndarray:
    """Poly-layer lookups: ``(N, in_width)`` codes to ``(N, width, A)`` sub-neuron codes."""
    addr = pack_words(codes[:, layer.connectivity], layer.in_bits)  # (N, K, A)
    k = np.arange(layer.width)[:, None]
    g = np.arange(layer.adder)[None, :]
    return layer.poly_stack()[k, g, addr]


def adder_stage(layer: NetLayer, sub_codes: np.ndarray) -> np.ndarray:
    addr = pack_words(sub_codes, layer.sub_bits)  # (N, K)
    return layer.adder_stack()[np.arange(layer.width), addr]


def layer_stage(layer: NetLayer, codes: np.ndarray) -> np.ndarray:
    sub = poly_stage(layer, codes)
    return adder_stage(layer, sub) if layer.has_adder else sub[..., 0]


def eval_netlist(netlist: Netlist, input_codes) -> np.ndarray:
    """Combinational evaluation by table lookup in layer order."""
    codes = np.atleast_2d(np.asarray(input_codes, dtype=np.int64))
    if codes.shape[1] != netlist.input_width:
        raise ValueError(f"expected {netlist.input_width} input words, got {codes.shape[1]}")
    if codes.size and (codes.min() < 0 or codes.max() >= 1 << netlist.input_bits):
        raise ValueError(f"input codes must fit in {netlist.input_bits} unsigned bits")
    for layer in netlist.layers:
        codes = layer_stage(layer, codes)
    return codes


def pipeline_stages(netlist: Netlist, strategy) -> list[tuple[str, Callable[[np.ndarray], np.ndarray]]]:
    """Combinational stages, each followed by one register."""
    strategy = PipelineStrategy.parse(strategy)
    stages = []
    for layer in netlist.layers:
        if strategy == PipelineStrategy.PER_LAYER and layer.has_adder:
            stages.append((f"layer{layer.index}.poly", lambda c, l=layer: poly_stage(l, c)))
            stages.append((f"layer{layer.index}.adder", lambda c, l=layer: adder_stage(l, c)))
        else:
            stages.append((f"layer{layer.index}", lambda c, l=layer: layer_stage(l, c)))
    return stages


def pipeline_latency(netlist: Netlist, strategy) -> int:
    return len(pipeline_stages(netlist, strategy))


@dataclass
class SimTrace:
    strategy: PipelineStrategy
    latency: int
    stage_names: list[str]
    inputs: np.ndarray
    outputs: np.ndarray  # (n, output_width), item k emerged at cycle k + latency
    output_cycles: np.ndarray
    cycles: int
    registers: list[list[np.ndarray | None]] = field(default_factory=list)  # [cycle][stage], empty if not recorded

    def latency_ns(self, clock_period_ns: float) -> float:
        return self.latency * clock_period_ns

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "latency_cycles": self.latency,
            "stages": self.stage_names,
            "cycles": self.cycles,
            "n_items": int(len(self.outputs)),
            "throughput_items_per_cycle": 1,
            "output_cycles": self.output_cycles.tolist(),
            "outputs": self.outputs.tolist(),
        }


def simulate_pipeline(netlist: Netlist, strategy, input_stream, record: bool = False) -> SimTrace:
    """Clock the free-running pipeline, presenting one input per cycle.

    A register captures its stage's output on every clock edge; input ``k`` is
    presented during cycle ``k`` and its result is held by the last register
    from cycle ``k + latency``.
    """
    strategy = PipelineStrategy.parse(strategy)
    stream = np.atleast_2d(np.asarray(input_stream, dtype=np.int64))
    if stream.shape[0] == 0:
        raise ValueError("input stream is empty")
    if stream.shape[1] != netlist.input_width:
        raise ValueError(f"expected {netlist.input_width} input words, got {stream.shape[1]}")
    stages = pipeline_stages(netlist, strategy)
    n, depth = len(stream), len(stages)
    regs: list[np.ndarray | None] = [None] * depth
    valid = [-1] * depth  # item index held by each register
    outputs = np.zeros((n, netlist.output_width), dtype=np.int64)
    out_cycles = np.full(n, -1, dtype=np.int64)
    if depth == 0:
        return SimTrace(strategy, 0, [], stream, stream.copy(), np.arange(n), n)
    trace = []
    for cycle in range(n + depth):
        # one clock edge: every register samples its stage's current input
        new_regs = list(regs)
        new_valid = list(valid)
        for s in range(depth - 1, -1, -1):
            if s == 0:
                src, item = (stream[cycle:cycle + 1], cycle) if cycle < n else (None, -1)
            else:
                src, item = regs[s - 1], valid[s - 1]
            if src is None or item < 0:
                new_regs[s], new_valid[s] = None, -1
            else:
                new_regs[s], new_valid[s] = stages[s][1](src), item
        regs, valid = new_regs, new_valid
        if record:
            trace.append([None if r is None else r[0].copy() for r in regs])
        if valid[-1] >= 0:
            # visible on the output port during the following cycle
            outputs[valid[-1]] = regs[-1][0]
            out_cycles[valid[-1]] = cycle + 1
    return SimTrace(strategy, depth, [name for name, _ in stages], stream, outputs, out_cycles,
                    n + depth, trace)


def latency_report(netlist: Netlist, strategy, clock_period_ns: float) -> dict:
    if not clock_period_ns > 0:
        raise ValueError("clock period must be positive")
    probe = np.zeros((1, netlist.input_width), dtype=np.int64)
    cycles = simulate_pipeline(netlist, strategy, probe).latency
    return {
        "strategy": PipelineStrategy.parse(strategy).value,
        "cycles": cycles,
        "clock_period_ns": clock_period_ns,
        "latency_ns": cycles * clock_period_ns,
    }


# ---------------------------------------------------------------------------
# equivalence checking

@dataclass
class EquivalenceReport:
    passed: bool
    n_samples: int
    exhaustive: bool
    reference_mismatches: list[dict] = field(default_factory=list)
    unit_mismatches: list[dict] = field(default_factory=list)
    rtl_table_mismatches: list[dict] = field(default_factory=list)
    rtl_mismatches: list[dict] = field(default_factory=list)
    pipeline_mismatches: list[dict] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "verdict": "PASS" if self.passed else "FAIL",
            "n_samples": self.n_samples,
            "exhaustive": self.exhaustive,
            "checks": self.checks,
            "reference_mismatches": self.reference_mismatches,
            "unit_mismatches": self.unit_mismatches,
            "rtl_table_mismatches": self.rtl_table_mismatches,
            "rtl_mismatches": self.rtl_mismatches,
            "pipeline_mismatches": self.pipeline_mismatches,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def sample_inputs(netlist: Netlist, exhaustive_bits: int = DEFAULT_EXHAUSTIVE_BITS,
                  n_random: int = DEFAULT_RANDOM_SAMPLES, seed: int = 0) -> tuple[np.ndarray, bool]:
    """Every input when the packed input is at most ``exhaustive_bits`` wide, else seeded random codes."""
    bits = netlist.input_width * netlist.input_bits
    if bits <= exhaustive_bits:
        from .tablegen import unpack_words

        return unpack_words(np.arange(1 << bits), netlist.input_width, netlist.input_bits), True
    rng = np.random.default_rng([seed, 3])
    return rng.integers(0, 1 << netlist.input_bits, size=(n_random, netlist.input_width)), False


def _row_mismatches(inputs, expected, actual, limit, labels=("expected", "actual")) -> list[dict]:
    bad = np.nonzero(np.any(expected != actual, axis=1))[0]
    return [
        {"row": int(i), "input": inputs[i].tolist(), labels[0]: expected[i].tolist(), labels[1]: actual[i].tolist()}
        for i in bad[:limit]
    ]


def _compare_tables(ref: Netlist, other: Netlist, limit: int) -> list[dict]:
    out = []
    if len(ref.layers) != len(other.layers):
        return [{"unit": "*", "reason": f"layer count {len(ref.layers)} != {len(other.layers)}"}]
    for la, lb in zip(ref.layers, other.layers):
        if la.header() != lb.header():
            out.append({"unit": f"layer{la.index}", "reason": "layer geometry differs"})
            continue
        if not np.array_equal(la.connectivity, lb.connectivity):
            out.append({"unit": f"layer{la.index}", "reason": "connectivity differs"})
        for ta, tb in zip(la.units(), lb.units()):
            if ta.entries.shape != tb.entries.shape:
                out.append({"unit": ta.name, "reason": "table size differs"})
            else:
                diff = np.nonzero(ta.entries != tb.entries)[0]
                if len(diff):
                    a = int(diff[0])
                    out.append({"unit": ta.name, "address": a, "expected": int(ta.entries[a]), "actual": int(tb.entries[a])})
            if len(out) >= limit:
                return out
    return out


def check_equivalence(
    net: TrainedNetwork,
    netlist: Netlist,
    rtl_text: str | None = None,
    samples=None,
    *,
    exhaustive_bits: int = DEFAULT_EXHAUSTIVE_BITS,
    n_random: int = DEFAULT_RANDOM_SAMPLES,
    seed: int = 0,
    pipeline_items: int = 512,
    strategies=tuple(PipelineStrategy),
    check_units: bool = True,
    cap: int = DEFAULT_CAP,
    limit: int = 20,
) -> EquivalenceReport:
    """Cross-check reference model, netlist, parsed-back RTL and the pipeline simulator.

    Every check compares exact integer codes.  Counterexamples carry the
    offending input codes (or unit and address for table checks).
    """
    if samples is None:
        inputs, exhaustive = sample_inputs(netlist, exhaustive_bits, n_random, seed)
    else:
        inputs, exhaustive = np.atleast_2d(np.asarray(samples, dtype=np.int64)), False
    report = EquivalenceReport(True, len(inputs), exhaustive)

    expected = forward_codes(net, inputs)
    got = eval_netlist(netlist, inputs)
    report.reference_mismatches = _row_mismatches(inputs, expected, got, limit, ("reference", "netlist"))
    report.checks["reference_vs_netlist"] = not report.reference_mismatches

    if check_units:
        report.unit_mismatches = _compare_tables(compile_network(net, cap=cap), netlist, limit)
        report.checks["tables_vs_arithmetic"] = not report.unit_mismatches

    if rtl_text is not None:
        from .rtl import parse_back

        parsed = parse_back(rtl_text)
        report.rtl_table_mismatches = _compare_tables(netlist, parsed, limit)
        report.checks["rtl_tables"] = not report.rtl_table_mismatches
        report.rtl_mismatches = _row_mismatches(inputs, got, eval_netlist(parsed, inputs), limit, ("netlist", "rtl"))
        report.checks["netlist_vs_rtl"] = not report.rtl_mismatches

    stream = inputs[:pipeline_items]
    for strategy in strategies:
        trace = simulate_pipeline(netlist, strategy, stream)
        lag = trace.output_cycles - np.arange(len(stream))
        bad = _row_mismatches(stream, got[: len(stream)], trace.outputs, limit, ("netlist", "pipeline"))
        if np.any(lag != trace.latency):
            bad.append({"strategy": trace.strategy.value, "reason": "output emerged at wrong cycle"})
        for b in bad:
            b["strategy"] = trace.strategy.value
        report.pipeline_mismatches.extend(bad)
        report.checks[f"pipeline_{trace.strategy.value}"] = not bad

    report.passed = all(report.checks.values())
    return report
