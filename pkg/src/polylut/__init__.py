"""Compile quantized sparse polynomial networks into lookup-table netlists and Verilog."""

from .config import (
    ConfigError,
    NetworkConfig,
    PipelineStrategy,
    generate_connectivity,
    get_preset,
    validate_config,
)
from .datasets import Dataset, load_dataset
from .netsim import check_equivalence, eval_netlist, latency_report, simulate_pipeline
from .network import TrainedNetwork, forward, forward_codes, load_network, save_network
from .polymath import MonomialFeatures, enumerate_monomials
from .rtl import emit_rtl, emit_testbench, parse_back
from .tablegen import EntryMode, Netlist, compile_network, entry_count, load_netlist, save_netlist
from .train import PolyLUTClassifier, TrainHyper, ablation_grid, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Dataset",
    "EntryMode",
    "MonomialFeatures",
    "NetworkConfig",
    "Netlist",
    "PipelineStrategy",
    "PolyLUTClassifier",
    "TrainHyper",
    "TrainedNetwork",
    "ablation_grid",
    "check_equivalence",
    "compile_network",
    "emit_rtl",
    "emit_testbench",
    "entry_count",
    "enumerate_monomials",
    "eval_netlist",
    "forward",
    "forward_codes",
    "generate_connectivity",
    "get_preset",
    "latency_report",
    "load_dataset",
    "load_netlist",
    "load_network",
    "parse_back",
    "save_netlist",
    "save_network",
    "simulate_pipeline",
    "train",
    "validate_config",
]
