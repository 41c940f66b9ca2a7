"""Verilog-2001 emission of table netlists, a self-checking testbench, and parse-back.

Every truth table becomes a function with a full ``case`` over its address,
one arm per entry and no ``default``.  ``parse_back`` reads only this
dialect and rebuilds the netlist from the case arms and input concatenations.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .config import PipelineStrategy
from .netsim import pipeline_latency
from .tablegen import NetLayer, Netlist, TruthTable, UnitKind

SIGNATURE = "// polylut-rtl v1"
FILE_MARK = "// ==== file: "
TOP = "polylut_top"


class RtlParseError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


def layer_module(index: int) -> str:
    return f"polylut_layer{index}"


def _bus(width_bits: int) -> str:
    return f"[{width_bits - 1}:0]"


def _slice(bus: str, word: int, bits: int) -> str:
    return f"{bus}[{(word + 1) * bits - 1}:{word * bits}]"


def _concat(parts: list[str]) -> str:
    # Verilog concatenation lists the most significant part first
    return "{" + ", ".join(reversed(parts)) + "}"


def _binary_codes(bits: int) -> list[str]:
    return [format(v, f"0{bits}b") for v in range(1 << bits)]


def _function(table: TruthTable, indent: str = "  ") -> list[str]:
    name, ib, ob = table.name, table.input_bits, table.output_bits
    codes = _binary_codes(ob)
    raw = (table.entries & ((1 << ob) - 1)).tolist()
    lines = [
        f"{indent}function {_bus(ob)} {name};",
        f"{indent}  input {_bus(ib)} x;",
        f"{indent}  begin",
        f"{indent}    case (x)",
    ]
    arm = f"{indent}      {ib}'d"
    lines.extend(f"{arm}{addr}: {name} = {ob}'b{codes[v]};" for addr, v in enumerate(raw))
    lines += [f"{indent}    endcase", f"{indent}  end", f"{indent}endfunction"]
    return lines


def _layer_header(layer: NetLayer) -> str:
    return (
        f"// @layer index={layer.index} in_width={layer.in_width} width={layer.width} "
        f"in_bits={layer.in_bits} out_bits={layer.out_bits} out_signed={int(layer.out_signed)} "
        f"fanin={layer.fanin} adder={layer.adder} sub_bits={layer.sub_bits or 0}"
    )


def _emit_layer(layer: NetLayer, strategy: PipelineStrategy) -> list[str]:
    in_w = layer.in_width * layer.in_bits
    out_w = layer.width * layer.out_bits
    split = strategy == PipelineStrategy.PER_LAYER and layer.has_adder
    lines = [
        _layer_header(layer),
        f"// registers: {2 if split else 1}",
        f"module {layer_module(layer.index)} (",
        "  input  wire clk,",
        "  input  wire rst,",
        f"  input  wire {_bus(in_w)} in_data,",
        f"  output wire {_bus(out_w)} out_data",
        ");",
    ]
    for table in layer.units():
        lines.extend(_function(table))
    lines.append("")
    results = []
    sub_outs = []
    for n in range(layer.width):
        for g, table in enumerate(layer.poly[n]):
            src = [_slice("in_data", int(s), layer.in_bits) for s in layer.connectivity[n, g]]
            lines.append(f"  wire {_bus(table.input_bits)} {table.name}_in = {_concat(src)};")
            lines.append(f"  wire {_bus(table.output_bits)} {table.name}_out = {table.name}({table.name}_in);")
            sub_outs.append(f"{table.name}_out")
        if not layer.has_adder:
            results.append(f"{layer.poly[n][0].name}_out")
    if layer.has_adder:
        sb = layer.sub_bits
        if split:
            poly_w = layer.width * layer.adder * sb
            lines += [
                f"  reg {_bus(poly_w)} poly_q;",
                "  always @(posedge clk) begin",
                f"    if (rst) poly_q <= {poly_w}'d0;",
                f"    else poly_q <= {_concat(sub_outs)};",
                "  end",
            ]
        for n, table in enumerate(layer.adders):
            if split:
                parts = [_slice("poly_q", n * layer.adder + g, sb) for g in range(layer.adder)]
            else:
                parts = [f"{t.name}_out" for t in layer.poly[n]]
            lines.append(f"  wire {_bus(table.input_bits)} {table.name}_in = {_concat(parts)};")
            lines.append(f"  wire {_bus(table.output_bits)} {table.name}_out = {table.name}({table.name}_in);")
            results.append(f"{table.name}_out")
    lines += [
        f"  reg {_bus(out_w)} out_q;",
        "  always @(posedge clk) begin",
        f"    if (rst) out_q <= {out_w}'d0;",
        f"    else out_q <= {_concat(results)};",
        "  end",
        "  assign out_data = out_q;",
        "endmodule",
        "",
    ]
    return lines


def _emit_top(netlist: Netlist, strategy: PipelineStrategy) -> list[str]:
    in_w = netlist.input_width * netlist.input_bits
    out_w = netlist.output_width * netlist.output_bits
    lines = [
        f"module {TOP} (",
        "  input  wire clk,",
        "  input  wire rst,",
        f"  input  wire {_bus(in_w)} in_data,",
        f"  output wire {_bus(out_w)} out_data",
        ");",
    ]
    prev = "in_data"
    for layer in netlist.layers:
        wire = f"l{layer.index}_out"
        lines.append(f"  wire {_bus(layer.width * layer.out_bits)} {wire};")
        lines.append(
            f"  {layer_module(layer.index)} u_layer{layer.index} "
            f"(.clk(clk), .rst(rst), .in_data({prev}), .out_data({wire}));"
        )
        prev = wire
    lines += [f"  assign out_data = {prev};", "endmodule", ""]
    return lines


def file_names(netlist: Netlist) -> list[str]:
    return [f"{TOP}.v"] + [f"{layer_module(l.index)}.v" for l in netlist.layers]


def emit_rtl(netlist: Netlist, strategy=None) -> str:
    """Complete design as one text; ``split_files`` recovers the per-file layout.

    Files: ``polylut_top.v`` (header and top module) and ``polylut_layer<i>.v``.
    """
    strategy = PipelineStrategy.parse(strategy or netlist.strategy)
    latency = pipeline_latency(netlist, strategy)
    out_signed = "signed" if netlist.output_signed else "unsigned"
    lines = [
        f"{FILE_MARK}{TOP}.v ====",
        SIGNATURE,
        "// Generated LUT network. Single clock, synchronous active-high reset, no stalls.",
        f"// strategy: {strategy.value}",
        f"// latency_cycles: {latency}",
        f"// input: {netlist.input_width} words x {netlist.input_bits} bits unsigned; "
        f"word i is in_data[i*{netlist.input_bits} +: {netlist.input_bits}]",
        f"// output: {netlist.output_width} words x {netlist.output_bits} bits {out_signed}; "
        f"word i is out_data[i*{netlist.output_bits} +: {netlist.output_bits}]",
        "// table address: input words concatenated with word 0 least significant",
        f"// @network input_width={netlist.input_width} input_bits={netlist.input_bits} "
        f"layers={len(netlist.layers)}",
    ]
    lines += _emit_top(netlist, strategy)
    for layer in netlist.layers:
        lines.append(f"{FILE_MARK}{layer_module(layer.index)}.v ====")
        lines += _emit_layer(layer, strategy)
    return "\n".join(lines) + "\n"


def split_files(rtl: str) -> dict[str, str]:
    files: dict[str, list[str]] = {}
    current = None
    for line in rtl.splitlines(keepends=True):
        if line.startswith(FILE_MARK):
            current = line[len(FILE_MARK):].split(" ====")[0].strip()
            files[current] = []
            continue
        if current is not None:
            files[current].append(line)
    return {name: "".join(body) for name, body in files.items()}


def write_rtl(netlist: Netlist, out_dir: str | Path, strategy=None, vectors=None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, body in split_files(emit_rtl(netlist, strategy)).items():
        path = out_dir / name
        path.write_text(body)
        written.append(path)
    if vectors:
        path = out_dir / f"{TOP}_tb.v"
        path.write_text(emit_testbench(netlist, vectors, strategy))
        written.append(path)
    return written


def read_rtl_dir(rtl_dir: str | Path) -> str:
    """Reassemble files written by :func:`write_rtl` into the text ``parse_back`` expects."""
    rtl_dir = Path(rtl_dir)
    top = rtl_dir / f"{TOP}.v"
    if not top.exists():
        raise FileNotFoundError(f"{top}: missing top-level file")
    parts = [f"{FILE_MARK}{TOP}.v ====\n", top.read_text()]
    for path in sorted(rtl_dir.glob("polylut_layer*.v"), key=lambda p: int(re.sub(r"\D", "", p.stem))):
        parts += [f"{FILE_MARK}{path.name} ====\n", path.read_text()]
    return "".join(parts)


# ---------------------------------------------------------------------------
# testbench

def _hex(words, bits: int) -> str:
    total = len(words) * bits
    value = 0
    for i, w in enumerate(words):
        value |= (int(w) & ((1 << bits) - 1)) << (i * bits)
    return f"{total}'h{value:0{(total + 3) // 4}x}"


def emit_testbench(netlist: Netlist, vectors, strategy=None) -> str:
    """Self-checking bench: one ``!==`` assertion per vector, checked ``latency`` cycles after issue."""
    vectors = list(vectors)
    if not vectors:
        raise ValueError("testbench needs at least one vector")
    strategy = PipelineStrategy.parse(strategy or netlist.strategy)
    latency = pipeline_latency(netlist, strategy)
    in_w = netlist.input_width * netlist.input_bits
    out_w = netlist.output_width * netlist.output_bits
    lines = [
        "`timescale 1ns/1ps",
        f"// strategy: {strategy.value}",
        f"module {TOP}_tb;",
        f"  localparam LATENCY = {latency};",
        f"  localparam N_VECTORS = {len(vectors)};",
        "  reg clk = 1'b0;",
        "  reg rst = 1'b1;",
        f"  reg {_bus(in_w)} in_data = {in_w}'d0;",
        f"  wire {_bus(out_w)} out_data;",
        "  integer errors = 0;",
        f"  {TOP} dut (.clk(clk), .rst(rst), .in_data(in_data), .out_data(out_data));",
        "  always #5 clk = ~clk;",
        "  initial begin",
        "    @(posedge clk); #1;",
        "    @(posedge clk); #1;",
        "    rst = 1'b0;",
    ]
    n = len(vectors)
    for cycle in range(n + latency):
        if cycle < n:
            lines.append(f"    in_data = {_hex(vectors[cycle][0], netlist.input_bits)};")
        lines.append("    @(posedge clk); #1;")
        item = cycle - latency + 1
        if 0 <= item < n:
            expect = _hex(vectors[item][1], netlist.output_bits)
            lines.append(
                f"    if (out_data !== {expect}) begin "
                f"$display(\"MISMATCH vector {item}: got %h expected %h\", out_data, {expect}); "
                "errors = errors + 1; end"
            )
    lines += [
        "    if (errors == 0) $display(\"PASS %0d vectors\", N_VECTORS);",
        "    else $display(\"FAIL %0d errors\", errors);",
        "    $finish;",
        "  end",
        "endmodule",
        "",
    ]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# parse-back

_RE_NETWORK = re.compile(r"// @network input_width=(\d+) input_bits=(\d+) layers=(\d+)$")
_RE_STRATEGY = re.compile(r"// strategy: ([\w-]+)$")
_RE_LAYER = re.compile(r"// @layer (.*)$")
_RE_FUNC = re.compile(r"\s*function \[(\d+):0\] (l(\d+)_n(\d+)_(?:s(\d+)|add));$")
_RE_INPUT = re.compile(r"\s*input \[(\d+):0\] x;$")
_RE_ARM = re.compile(r"\s*(\d+)'d(\d+): (\w+) = (\d+)'b([01]+);$")
_RE_WIRE_IN = re.compile(r"\s*wire \[(\d+):0\] (l\d+_n\d+_(?:s\d+|add))_in = \{(.*)\};$")
_RE_SLICE = re.compile(r"(\w+)\[(\d+):(\d+)\]")


def parse_back(rtl: str) -> Netlist:
    """Rebuild a :class:`Netlist` from text produced by :func:`emit_rtl`."""
    lines = rtl.splitlines()
    if not any(line.strip() == SIGNATURE for line in lines[:3]):
        raise RtlParseError(1, f"not generated by this tool (missing {SIGNATURE!r})")
    network = None
    strategy = PipelineStrategy.COMBINED
    layers: list[dict] = []
    cur = None  # open function: [name, out_bits, in_bits, entries, start_line, kind info]
    for lineno, line in enumerate(lines, start=1):
        if cur is not None:
            m = _RE_ARM.match(line)
            if m:
                ib, addr, name, ob, bits = m.groups()
                if name != cur["name"] or int(ib) != cur["in_bits"] or int(ob) != cur["out_bits"] or len(bits) != cur["out_bits"]:
                    raise RtlParseError(lineno, f"case arm does not belong to function {cur['name']}")
                addr = int(addr)
                if addr >= len(cur["entries"]) or cur["seen"][addr]:
                    raise RtlParseError(lineno, f"address {addr} repeated or out of range in {cur['name']}")
                cur["entries"][addr] = int(bits, 2)
                cur["seen"][addr] = True
                continue
            if cur["in_bits"] is None:
                m = _RE_INPUT.match(line)
                if m:
                    cur["in_bits"] = int(m.group(1)) + 1
                    cur["entries"] = np.zeros(1 << cur["in_bits"], dtype=np.int64)
                    cur["seen"] = np.zeros(1 << cur["in_bits"], dtype=bool)
                    continue
            if line.strip() == "endfunction":
                if cur["in_bits"] is None or not cur["seen"].all():
                    raise RtlParseError(lineno, f"function {cur['name']} has an incomplete case statement")
                _finish_function(cur, layers, lineno)
                cur = None
            continue
        m = _RE_FUNC.match(line)
        if m:
            if not layers:
                raise RtlParseError(lineno, "function outside a layer module")
            hi, name, li, n, g = m.groups()
            cur = {
                "name": name,
                "out_bits": int(hi) + 1,
                "in_bits": None,
                "layer": int(li),
                "neuron": int(n),
                "group": -1 if g is None else int(g),
                "line": lineno,
            }
            continue
        m = _RE_WIRE_IN.match(line)
        if m:
            _record_sources(m, layers, lineno)
            continue
        m = _RE_LAYER.match(line)
        if m:
            fields = {}
            for item in m.group(1).split():
                key, _, value = item.partition("=")
                if not value.isdigit():
                    raise RtlParseError(lineno, f"bad layer attribute {item!r}")
                fields[key] = int(value)
            required = ("index", "in_width", "width", "in_bits", "out_bits", "out_signed", "fanin", "adder", "sub_bits")
            missing = [k for k in required if k not in fields]
            if missing:
                raise RtlParseError(lineno, f"layer header missing {', '.join(missing)}")
            if fields["index"] != len(layers):
                raise RtlParseError(lineno, f"layer {fields['index']} out of order")
            fields["tables"] = {}
            fields["sources"] = {}
            layers.append(fields)
            continue
        m = _RE_NETWORK.match(line)
        if m:
            network = tuple(int(v) for v in m.groups())
            continue
        m = _RE_STRATEGY.match(line)
        if m:
            try:
                strategy = PipelineStrategy.parse(m.group(1))
            except ValueError as exc:
                raise RtlParseError(lineno, str(exc)) from None
    if cur is not None:
        raise RtlParseError(len(lines), f"unterminated function {cur['name']}")
    if network is None:
        raise RtlParseError(1, "missing @network header")
    if network[2] != len(layers):
        raise RtlParseError(len(lines), f"header announces {network[2]} layers, found {len(layers)}")
    return Netlist(network[0], network[1], [_build_layer(d, len(lines)) for d in layers], strategy)


def _finish_function(cur: dict, layers: list[dict], lineno: int) -> None:
    layer = layers[-1]
    if cur["layer"] != layer["index"]:
        raise RtlParseError(lineno, f"function {cur['name']} inside module of layer {layer['index']}")
    key = (cur["neuron"], cur["group"])
    if key in layer["tables"]:
        raise RtlParseError(lineno, f"duplicate function {cur['name']}")
    entries = cur["entries"]
    is_adder = cur["group"] < 0
    fused = layer["adder"] == 1 or layer["sub_bits"] == 0
    signed = bool(layer["out_signed"]) if (is_adder or fused) else True
    ob = cur["out_bits"]
    if signed:
        entries = entries - ((entries >> (ob - 1)) & 1) * (1 << ob)
    kind = UnitKind.ADDER if is_adder else UnitKind.POLY
    layer["tables"][key] = TruthTable(cur["in_bits"], ob, signed, entries, cur["layer"], cur["neuron"], kind, cur["group"])


def _record_sources(m: re.Match, layers: list[dict], lineno: int) -> None:
    name = m.group(2)
    if name.endswith("_add"):
        return
    if not layers:
        raise RtlParseError(lineno, "wire outside a layer module")
    layer = layers[-1]
    parts = [p.strip() for p in m.group(3).split(",")]
    words = []
    for p in reversed(parts):
        s = _RE_SLICE.fullmatch(p)
        if not s or s.group(1) != "in_data":
            raise RtlParseError(lineno, f"unexpected operand {p!r} in input concatenation")
        hi, lo = int(s.group(2)), int(s.group(3))
        bits = layer["in_bits"]
        if hi - lo + 1 != bits or lo % bits:
            raise RtlParseError(lineno, f"slice {p} is not aligned to {bits}-bit words")
        words.append(lo // bits)
    mm = re.fullmatch(r"l(\d+)_n(\d+)_s(\d+)", name)
    layer["sources"][(int(mm.group(2)), int(mm.group(3)))] = words


def _build_layer(d: dict, lineno: int) -> NetLayer:
    k, a, f = d["width"], d["adder"], d["fanin"]
    has_adder = d["sub_bits"] > 0
    conn = np.zeros((k, a, f), dtype=np.int64)
    poly = []
    for n in range(k):
        row = []
        for g in range(a if has_adder else 1):
            if (n, g) not in d["tables"] or (n, g) not in d["sources"]:
                raise RtlParseError(lineno, f"layer {d['index']}: neuron {n} group {g} missing")
            if len(d["sources"][(n, g)]) != f:
                raise RtlParseError(lineno, f"layer {d['index']}: neuron {n} group {g} has wrong fan-in")
            conn[n, g] = d["sources"][(n, g)]
            row.append(d["tables"][(n, g)])
        poly.append(row)
    adders = None
    if has_adder:
        adders = []
        for n in range(k):
            if (n, -1) not in d["tables"]:
                raise RtlParseError(lineno, f"layer {d['index']}: adder of neuron {n} missing")
            adders.append(d["tables"][(n, -1)])
    return NetLayer(
        index=d["index"],
        in_width=d["in_width"],
        width=k,
        in_bits=d["in_bits"],
        out_bits=d["out_bits"],
        out_signed=bool(d["out_signed"]),
        fanin=f,
        adder=a,
        sub_bits=d["sub_bits"] or None,
        connectivity=conn,
        poly=poly,
        adders=adders,
    )
