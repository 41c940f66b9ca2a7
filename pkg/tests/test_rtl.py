import re

import pytest

from helpers import random_network, small_config
from polylut.netsim import eval_netlist, pipeline_latency, sample_inputs
from polylut.rtl import (
    FILE_MARK,
    SIGNATURE,
    RtlParseError,
    emit_rtl,
    emit_testbench,
    parse_back,
    read_rtl_dir,
    split_files,
    write_rtl,
)
from polylut.tablegen import compile_network


@pytest.fixture(scope="module")
def netlist():
    return compile_network(random_network(small_config(), seed=9))


@pytest.mark.parametrize("strategy", ["combined", "per-layer"])
def test_parse_back_recovers_netlist(netlist, strategy):
    assert parse_back(emit_rtl(netlist, strategy)) == netlist


def test_parse_back_recovers_netlist_without_adders():
    nl = compile_network(random_network(small_config(adder=1, degree=1), seed=2))
    assert parse_back(emit_rtl(nl)) == nl


def test_emission_is_deterministic(netlist):
    assert emit_rtl(netlist, "per-layer") == emit_rtl(netlist, "per-layer")


def test_register_count_follows_strategy(netlist):
    combined = split_files(emit_rtl(netlist, "combined"))
    per_layer = split_files(emit_rtl(netlist, "per-layer"))
    assert "poly_q" not in combined["polylut_layer0.v"]
    assert per_layer["polylut_layer0.v"].count("always @(posedge clk)") == 2
    assert combined["polylut_layer0.v"].count("always @(posedge clk)") == 1
    assert "// latency_cycles: 6" in per_layer["polylut_top.v"]


def test_every_case_statement_is_complete(netlist):
    text = emit_rtl(netlist)
    assert "default" not in text
    for unit in netlist.units():
        arms = re.findall(rf"^\s+\d+'d\d+: {unit.name} = ", text, flags=re.M)
        assert len(arms) == 1 << unit.input_bits


def test_input_concatenation_puts_word_zero_last(netlist):
    text = split_files(emit_rtl(netlist))["polylut_layer0.v"]
    src = netlist.layers[0].connectivity[0, 0]
    m = re.search(r"wire \[3:0\] l0_n0_s0_in = \{(.*)\};", text)
    parts = [p.strip() for p in m.group(1).split(",")]
    assert parts[-1] == f"in_data[{2 * src[0] + 1}:{2 * src[0]}]"


def test_file_layout_roundtrip(netlist, tmp_path):
    X, _ = sample_inputs(netlist, exhaustive_bits=0, n_random=5, seed=0)
    vectors = list(zip(X.tolist(), eval_netlist(netlist, X).tolist()))
    paths = write_rtl(netlist, tmp_path, "per-layer", vectors)
    names = sorted(p.name for p in paths)
    assert names == ["polylut_layer0.v", "polylut_layer1.v", "polylut_layer2.v", "polylut_top.v", "polylut_top_tb.v"]
    assert parse_back(read_rtl_dir(tmp_path)) == netlist


def test_testbench_checks_each_vector_after_latency(netlist):
    X, _ = sample_inputs(netlist, exhaustive_bits=0, n_random=7, seed=0)
    vectors = list(zip(X.tolist(), eval_netlist(netlist, X).tolist()))
    tb = emit_testbench(netlist, vectors, "per-layer")
    assert tb.count("!==") == 7
    assert f"localparam LATENCY = {pipeline_latency(netlist, 'per-layer')};" in tb
    with pytest.raises(ValueError):
        emit_testbench(netlist, [])


def _corrupt(text, old, new, count=1):
    assert old in text
    return text.replace(old, new, count)


def _drop(text, pattern):
    out, n = re.subn(pattern, "", text, count=1)
    assert n == 1
    return out


@pytest.mark.parametrize(
    "edit, message",
    [
        (lambda t: _corrupt(t, SIGNATURE, "// something else"), "not generated"),
        (lambda t: _drop(t, r"\n\s+4'd15: l0_n0_s0 = \d+'b[01]+;"), "incomplete case"),
        (lambda t: _corrupt(t, "// @network", "// @netwrk"), "@network"),
        (lambda t: _corrupt(t, "in_data[1:0]", "in_data[2:1]"), "aligned"),
    ],
)
def test_parse_errors_carry_line_numbers(netlist, edit, message):
    with pytest.raises(RtlParseError, match=message) as exc:
        parse_back(edit(emit_rtl(netlist)))
    assert exc.value.line >= 1


def test_edited_table_entry_is_recovered_as_edited(netlist):
    text = emit_rtl(netlist)
    line = re.search(r"^\s+4'd0: l0_n0_s0 = 3'b([01]+);$", text, flags=re.M)
    flipped = "".join("1" if c == "0" else "0" for c in line.group(1))
    parsed = parse_back(text.replace(line.group(0), line.group(0).replace(line.group(1), flipped)))
    assert parsed != netlist
    word = int(flipped, 2)
    assert parsed.layers[0].poly[0][0].entries[0] == (word - 8 if word >= 4 else word)


def test_missing_top_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_rtl_dir(tmp_path)


def test_split_files_names(netlist):
    text = emit_rtl(netlist)
    assert text.startswith(FILE_MARK)
    assert list(split_files(text)) == ["polylut_top.v", "polylut_layer0.v", "polylut_layer1.v", "polylut_layer2.v"]
    assert SIGNATURE in split_files(text)["polylut_top.v"]
