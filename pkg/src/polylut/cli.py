"""Command-line front end: train, compile, emit, simulate, verify, report and run.

Every command writes its artifacts plus a ``manifest-<command>.json`` listing
each file with its sha256.  ``run --manifest`` replays the whole flow from a
train or run manifest.  Failures print a single ``error: CODE: message`` line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__
from .config import (
    PRESET_BATCH_SIZE,
    ConfigError,
    NetworkConfig,
    PipelineStrategy,
    get_preset,
    load_config,
    save_config,
    validate_config,
)
from .datasets import DatasetError, load_dataset
from .netsim import DEFAULT_EXHAUSTIVE_BITS, check_equivalence, eval_netlist, sample_inputs, simulate_pipeline
from .network import ArtifactError, load_network, save_network
from .rtl import RtlParseError, read_rtl_dir, write_rtl
from .tablegen import (
    DEFAULT_CAP,
    EntryMode,
    EnumerationCapError,
    Netlist,
    compile_network,
    config_resource_report,
    entry_count,
    load_netlist,
    save_netlist,
)
from .train import TrainHyper, TrainingError, train

MANIFEST_FORMAT = "polylut.manifest"
MANIFEST_VERSION = 1


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


_ERROR_CODES = [
    (ConfigError, "CONFIG"),
    (ArtifactError, "ARTIFACT"),
    (EnumerationCapError, "ENUMERATION_CAP"),
    (DatasetError, "DATASET"),
    (TrainingError, "TRAINING"),
    (RtlParseError, "RTL_PARSE"),
    (FileNotFoundError, "NOT_FOUND"),
    (OSError, "IO"),
    (OverflowError, "OVERFLOW"),
    (ValueError, "INVALID"),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("USAGE", message)


# ---------------------------------------------------------------------------
# manifests

def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, inputs: dict, artifacts: list[Path], timing: dict) -> Path:
    doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "tool_version": __version__,
        "command": command,
        "inputs": inputs,
        "artifacts": {
            str(p.relative_to(out_dir)): sha256_file(p) for p in sorted(artifacts)
        },
        "timing_s": {k: round(v, 4) for k, v in timing.items()},
    }
    path = out_dir / f"manifest-{command}.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def read_manifest(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if doc.get("format") != MANIFEST_FORMAT:
        raise ArtifactError(f"{path}: not a manifest (format={doc.get('format')!r})")
    if doc.get("version") != MANIFEST_VERSION:
        raise ArtifactError(f"{path}: unsupported manifest version {doc.get('version')!r}")
    return doc


# ---------------------------------------------------------------------------
# argument helpers

def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", help="named network preset, e.g. jsc-m-lite or hdr-add2")
    p.add_argument("--config", help="JSON config document")
    p.add_argument("--seed", type=int, help="connectivity seed (also the training seed)")
    p.add_argument("--A", dest="adder", type=int, help="sub-neurons per neuron")
    p.add_argument("--D", dest="degree", type=int, help="polynomial degree")
    p.add_argument("--F", dest="fanin", type=int, help="fan-in per sub-neuron")
    p.add_argument("--beta", type=int, help="activation bits")


def _config_from_args(args) -> NetworkConfig:
    if bool(args.preset) == bool(args.config):
        raise CliError("USAGE", "give exactly one of --preset or --config")
    overrides = {"adder": args.adder, "degree": args.degree, "fanin": args.fanin, "beta": args.beta, "seed": args.seed}
    if args.preset:
        return validate_config(get_preset(args.preset, **overrides))
    cfg = load_config(args.config)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return validate_config(cfg.replace(**overrides) if overrides else cfg)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(path: str | None, flag: str) -> Path:
    if not path:
        raise CliError("USAGE", f"{flag} is required")
    p = Path(path)
    if not p.exists():
        raise CliError("NOT_FOUND", f"{p}: no such file or directory")
    return p


# ---------------------------------------------------------------------------
# pipeline steps shared by the individual commands and ``run``

def _train_step(cfg: NetworkConfig, data_source: str, data_format: str | None, hyper: TrainHyper, out: Path):
    data = load_dataset(data_source, data_format, n_features=cfg.input_width,
                        n_classes=max(cfg.layer_widths[-1], 2), seed=hyper.seed)
    net = train(cfg, data, hyper)
    cfg_path, model_path = out / "config.json", out / "model.json"
    save_config(cfg, cfg_path)
    save_network(net, model_path)
    return net, [cfg_path, model_path]


def _emit_step(netlist: Netlist, strategy: PipelineStrategy, out: Path, n_vectors: int, seed: int) -> list[Path]:
    vectors = []
    if n_vectors > 0:
        inputs, _ = sample_inputs(netlist, 0, n_vectors, seed)
        outputs = eval_netlist(netlist, inputs)
        vectors = list(zip(inputs.tolist(), outputs.tolist()))
    return write_rtl(netlist, out / "rtl", strategy, vectors)


def _verify_step(net, netlist, rtl_dir: Path | None, args_bound: int, n_samples: int, seed: int, out: Path):
    rtl_text = read_rtl_dir(rtl_dir) if rtl_dir is not None else None
    report = check_equivalence(net, netlist, rtl_text, exhaustive_bits=args_bound, n_random=n_samples, seed=seed)
    path = out / "verify.json"
    path.write_text(report.to_json() + "\n")
    return report, path


def _hyper_from_args(args, preset: str | None, seed: int) -> TrainHyper:
    batch = args.batch_size or PRESET_BATCH_SIZE.get(preset or "", 128)
    return TrainHyper(epochs=args.epochs, batch_size=batch, learning_rate=args.lr,
                      weight_decay=args.weight_decay, seed=seed)


def _hyper_to_dict(h: TrainHyper) -> dict:
    return {"epochs": h.epochs, "batch_size": h.batch_size, "learning_rate": h.learning_rate,
            "weight_decay": h.weight_decay, "seed": h.seed}


# ---------------------------------------------------------------------------
# commands

def cmd_train(args) -> int:
    if not args.data:
        raise CliError("USAGE", "--data is required (file path or synthetic spec such as blobs:n=2000)")
    cfg = _config_from_args(args)
    hyper = _hyper_from_args(args, args.preset, cfg.seed)
    out = _out_dir(args)
    t0 = time.perf_counter()
    net, files = _train_step(cfg, args.data, args.format, hyper, out)
    inputs = {"config": cfg.to_dict(), "data": args.data, "data_format": args.format, "hyper": _hyper_to_dict(hyper)}
    write_manifest(out, "train", inputs, files, {"train": time.perf_counter() - t0})
    print(f"trained {len(net.layers)} layers: train accuracy {net.metadata['train_accuracy']:.4f}, "
          f"test accuracy {net.metadata['test_accuracy']:.4f} -> {out / 'model.json'}")
    return 0


def cmd_compile(args) -> int:
    net = load_network(_require(args.model, "--model"))
    out = _out_dir(args)
    t0 = time.perf_counter()
    netlist = compile_network(net, cap=args.cap)
    path = out / "netlist.json"
    save_netlist(netlist, path)
    write_manifest(out, "compile", {"model": args.model}, [path], {"compile": time.perf_counter() - t0})
    print(f"compiled {sum(1 for _ in netlist.units())} tables -> {path}")
    return 0


def cmd_emit(args) -> int:
    netlist = load_netlist(_require(args.netlist, "--netlist"))
    strategy = PipelineStrategy.parse(args.strategy)
    out = _out_dir(args)
    t0 = time.perf_counter()
    files = _emit_step(netlist, strategy, out, args.vectors, args.seed or 0)
    write_manifest(out, "emit", {"netlist": args.netlist, "strategy": strategy.value}, files,
                   {"emit": time.perf_counter() - t0})
    print(f"wrote {len(files)} Verilog files ({strategy.value}) -> {out / 'rtl'}")
    return 0


def cmd_simulate(args) -> int:
    netlist = load_netlist(_require(args.netlist, "--netlist"))
    strategy = PipelineStrategy.parse(args.strategy)
    out = _out_dir(args)
    stream, _ = sample_inputs(netlist, 0, args.items, args.seed or 0)
    t0 = time.perf_counter()
    trace = simulate_pipeline(netlist, strategy, stream)
    doc = trace.to_dict()
    doc["clock_period_ns"] = args.clock_ns
    doc["latency_ns"] = trace.latency_ns(args.clock_ns)
    path = out / f"trace-{strategy.value}.json"
    path.write_text(json.dumps(doc) + "\n")
    write_manifest(out, "simulate", {"netlist": args.netlist, "strategy": strategy.value, "items": args.items},
                   [path], {"simulate": time.perf_counter() - t0})
    print(f"{strategy.value}: latency {trace.latency} cycles ({doc['latency_ns']:g} ns at {args.clock_ns:g} ns), "
          f"{len(stream)} items in {trace.cycles} cycles")
    return 0


def cmd_verify(args) -> int:
    net = load_network(_require(args.model, "--model"))
    netlist = load_netlist(_require(args.netlist, "--netlist"))
    rtl_dir = _require(args.rtl_dir, "--rtl-dir") if args.rtl_dir else None
    out = _out_dir(args)
    t0 = time.perf_counter()
    report, path = _verify_step(net, netlist, rtl_dir, args.exhaustive_bound, args.samples, args.seed or 0, out)
    write_manifest(out, "verify", {"model": args.model, "netlist": args.netlist, "rtl_dir": args.rtl_dir},
                   [path], {"verify": time.perf_counter() - t0})
    mode = "exhaustive" if report.exhaustive else "sampled"
    for name, ok in report.checks.items():
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    if not report.passed:
        failed = ", ".join(k for k, ok in report.checks.items() if not ok)
        raise CliError("VERIFY_FAILED", f"{failed} ({report.n_samples} {mode} inputs, details in {path})")
    print(f"PASS on {report.n_samples} {mode} inputs")
    return 0


def _report_lines(cfg: NetworkConfig) -> list[str]:
    rep = config_resource_report(cfg)
    lines = [f"{'layer':>5} {'width':>6} {'bits':>4} {'F':>3} {'A':>3} {'per neuron':>14}  {'formula':<18} "
             f"{'PolyLUT':>10} {'single table':>14}"]
    for i, g in enumerate(rep.layers):
        polylut = entry_count(g.in_bits, g.fanin, 1, 1, EntryMode.POLYLUT)
        lines.append(
            f"{i:>5} {g.width:>6} {g.in_bits:>4} {g.fanin:>3} {g.adder:>3} {g.entries_per_neuron:>14}  "
            f"{g.formula:<18} {polylut:>10} {g.single_table_per_neuron:>14}"
        )
    lines.append(f"total entries: {rep.total_entries} (one table per neuron would need {rep.total_single_table})")
    lat = rep.latency_cycles
    lines.append(f"latency: combined {lat[PipelineStrategy.COMBINED]} cycles, "
                 f"per-layer {lat[PipelineStrategy.PER_LAYER]} cycles")
    return lines


def cmd_report(args) -> int:
    if args.netlist:
        netlist = load_netlist(_require(args.netlist, "--netlist"))
        rep = netlist.resource_report()
        if args.json:
            print(json.dumps(rep.to_dict(), indent=2))
            return 0
        for g in rep.layers:
            print(f"width {g.width}: {g.formula} = {g.entries_per_neuron} entries per neuron")
        lat = rep.latency_cycles
        print(f"latency: combined {lat[PipelineStrategy.COMBINED]} cycles, "
              f"per-layer {lat[PipelineStrategy.PER_LAYER]} cycles")
        return 0
    cfg = _config_from_args(args)
    if args.json:
        print(json.dumps(config_resource_report(cfg).to_dict(), indent=2))
    else:
        print("\n".join(_report_lines(cfg)))
    return 0


def cmd_run(args) -> int:
    """Replay train, compile, emit and verify from a manifest."""
    doc = read_manifest(_require(args.manifest, "--manifest"))
    inputs = doc.get("inputs", {})
    try:
        cfg = validate_config(NetworkConfig.from_dict(inputs["config"]))
        h = inputs["hyper"]
        hyper = TrainHyper(epochs=int(h["epochs"]), batch_size=int(h["batch_size"]),
                           learning_rate=float(h["learning_rate"]), weight_decay=float(h["weight_decay"]),
                           seed=int(h["seed"]))
        data = inputs["data"]
    except (KeyError, TypeError) as exc:
        raise ArtifactError(f"{args.manifest}: manifest inputs lack {exc}") from None
    strategy = PipelineStrategy.parse(args.strategy or inputs.get("strategy") or cfg.pipeline_strategy)
    out = _out_dir(args)
    timing = {}
    t0 = time.perf_counter()
    net, files = _train_step(cfg, data, inputs.get("data_format"), hyper, out)
    timing["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    netlist = compile_network(net, cap=args.cap)
    save_netlist(netlist, out / "netlist.json")
    files.append(out / "netlist.json")
    timing["compile"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    files += _emit_step(netlist, strategy, out, args.vectors, hyper.seed)
    timing["emit"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    report, path = _verify_step(net, netlist, out / "rtl", args.exhaustive_bound, args.samples, hyper.seed, out)
    files.append(path)
    timing["verify"] = time.perf_counter() - t0

    run_inputs = dict(inputs, strategy=strategy.value)
    write_manifest(out, "run", run_inputs, files, timing)
    if not report.passed:
        raise CliError("VERIFY_FAILED", f"equivalence failed, details in {path}")
    print(f"run complete: {len(files)} artifacts -> {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polylut", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"polylut {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="quantization-aware training")
    _add_config_args(p)
    p.add_argument("--data", help="dataset path or synthetic spec (blobs:n=..,dims=..,classes=..,seed=..)")
    p.add_argument("--format", choices=["idx-images", "csv-tabular", "synthetic"])
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--weight-decay", type=float, default=1e-2)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compile", help="enumerate truth tables")
    p.add_argument("--model", help="trained network file")
    p.add_argument("--cap", type=int, default=DEFAULT_CAP, help="largest table allowed, in entries")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("emit", help="write Verilog for a netlist")
    p.add_argument("--netlist")
    p.add_argument("--strategy", default="combined", choices=[s.value for s in PipelineStrategy])
    p.add_argument("--vectors", type=int, default=16, help="testbench vectors (0 for none)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_emit)

    p = sub.add_parser("simulate", help="cycle-accurate pipeline simulation")
    p.add_argument("--netlist")
    p.add_argument("--strategy", default="combined", choices=[s.value for s in PipelineStrategy])
    p.add_argument("--items", type=int, default=64)
    p.add_argument("--clock-ns", type=float, default=1.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="check model, netlist, RTL and pipeline agree")
    p.add_argument("--model")
    p.add_argument("--netlist")
    p.add_argument("--rtl-dir")
    p.add_argument("--exhaustive-bound", type=int, default=DEFAULT_EXHAUSTIVE_BITS,
                   help="enumerate every input when the packed input has at most this many bits")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="table entries and latency")
    _add_config_args(p)
    p.add_argument("--netlist")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="train, compile, emit and verify from a manifest")
    p.add_argument("--manifest")
    p.add_argument("--strategy", choices=[s.value for s in PipelineStrategy])
    p.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p.add_argument("--vectors", type=int, default=16)
    p.add_argument("--exhaustive-bound", type=int, default=DEFAULT_EXHAUSTIVE_BITS)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_run)
    return parser


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except ConfigError as exc:
        code, msg = "CONFIG", "; ".join(exc.errors)
    except Exception as exc:  # noqa: BLE001 - mapped to an error code below
        code = next((c for t, c in _ERROR_CODES if isinstance(exc, t)), "INTERNAL")
        msg = str(exc)
    print(f"error: {code}: {_one_line(msg)}", file=sys.stderr)
    return 2 if code == "USAGE" else 1


if __name__ == "__main__":
    sys.exit(main())
