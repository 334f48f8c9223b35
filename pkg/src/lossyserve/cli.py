"""``lossyserve`` command-line entry point.

Exit codes: 0 success, 1 bad input (one ``error: ...`` line on stderr),
2 internal failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .confidence import CalibrationTable, ModelTrace, calibrate
from .errors import LossyServeError
from .jpeg import parse_jpeg, plan_mcu_blocks, scan_mcu_boundaries
from .lossmodel import MODELS, LossSpec
from .protocol import DEFAULT_MTU_PAYLOAD, MAGIC, VERSION, build_packets, decode_packet
from .recovery import ReassemblyState, finalize
from . import servsim

MANIFEST_NAME = "manifest.json"


class InputError(LossyServeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage problems are input errors, not internal failures
        raise InputError(message)


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _write(path, text: str) -> None:
    p = Path(path)
    if p.parent and not p.parent.exists():
        p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8")


def _plan(data: bytes, target: int, max_scan: int):
    img = parse_jpeg(data)
    mmap = scan_mcu_boundaries(img)
    return img, plan_mcu_blocks(img, mmap, max_scan=max_scan, target_block_bytes=target)


# ---------------------------------------------------------------- subcommands


def cmd_scan(args) -> int:
    data = Path(args.file).read_bytes()
    img, plan = _plan(data, args.target_block_bytes, args.max_scan)
    doc = {
        "file": Path(args.file).name,
        "width": img.width,
        "height": img.height,
        "components": len(img.components),
        "restart_interval": img.restart_interval,
        "mcu_count": img.mcu_count_expected,
        "block_count": len(plan.blocks),
        "recoverable": plan.recoverable,
        "blocks": [{"start_mcu": b.start_mcu, "end_mcu": b.end_mcu, "bytes": b.size}
                   for b in plan.blocks],
    }
    if args.json:
        sys.stdout.write(_dump(doc))
    else:
        print(f"{doc['file']}: {img.width}x{img.height}, {doc['components']} component(s), "
              f"{doc['mcu_count']} MCUs, {doc['block_count']} block(s), "
              f"recoverable={str(plan.recoverable).lower()}")
        for i, b in enumerate(doc["blocks"], start=1):
            print(f"  block {i}: MCUs {b['start_mcu']}-{b['end_mcu']}, {b['bytes']} bytes")
    return 0


def cmd_pack(args) -> int:
    src = Path(args.file)
    data = src.read_bytes()
    img, plan = _plan(data, args.target_block_bytes, args.max_scan)
    dset = build_packets(img, plan, args.request_id, args.mtu)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    packets = []
    for seq, ((h, payload), dg) in enumerate(zip(dset.packets, dset.datagrams())):
        name = f"pkt_{seq:05d}.bin"
        (out / name).write_bytes(dg)
        packets.append({"file": name, "block_num": h.block_num, "partition_idx": h.partition_idx,
                        "partition_num": h.partition_num, "start_mcu": h.start_mcu,
                        "end_mcu": h.end_mcu, "flags": int(h.flags), "payload_len": h.payload_len})
    manifest = {
        "request_id": args.request_id,
        "source": src.name,
        "source_bytes": len(data),
        "source_sha256": hashlib.sha256(data).hexdigest(),
        "mtu": args.mtu,
        "target_block_bytes": args.target_block_bytes,
        "width": img.width,
        "height": img.height,
        "mcu_count": img.mcu_count_expected,
        "block_count": len(plan.blocks),
        "recoverable": plan.recoverable,
        "wire_version": VERSION,
        "packets": packets,
    }
    _write(out / MANIFEST_NAME, _dump(manifest))
    print(f"wrote {len(packets)} datagrams to {out}")
    return 0


def _manifest(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not a manifest ({exc.msg})") from None


def cmd_lossgen(args) -> int:
    d = Path(args.in_dir)
    mpath = Path(args.manifest) if args.manifest else d / MANIFEST_NAME
    manifest = _manifest(mpath)
    files = [p["file"] for p in manifest["packets"]]
    model = args.model or ("gilbert-elliott" if args.burst > 1 else "bernoulli")
    spec = LossSpec(model, args.rate, args.burst)
    mask = spec.mask(len(files), np.random.default_rng(args.seed))
    dropped = []
    for f, lost, p in zip(files, mask, manifest["packets"]):
        if not lost:
            continue
        if args.spare_header and p["block_num"] == 0:
            continue
        path = d / f
        if path.exists():
            path.unlink()
        dropped.append(f)
    doc = {"model": model, "rate": args.rate, "burst": args.burst, "seed": args.seed,
           "packets": len(files), "dropped": dropped}
    if args.log:
        _write(args.log, _dump(doc))
    print(f"dropped {len(dropped)} of {len(files)} datagrams")
    return 0


def cmd_recover(args) -> int:
    d = Path(args.in_dir)
    mpath = Path(args.manifest) if args.manifest else d / MANIFEST_NAME
    manifest = _manifest(mpath)
    state = ReassemblyState(int(manifest["request_id"]))
    for p in manifest["packets"]:
        path = d / p["file"]
        if path.exists():
            h, payload = decode_packet(path.read_bytes())
            state.ingest(h, payload, now=0.0)
    rec = finalize(state, mode=args.mode, placement=args.placement)
    if rec.bytes:
        Path(args.out).write_bytes(rec.bytes)
    report = rec.report()
    report["mode"] = args.mode
    report["placement"] = args.placement
    report_path = args.report or str(Path(args.out).with_suffix(".json"))
    _write(report_path, _dump(report))
    sys.stdout.write(_dump(report))
    return 0


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"{what} must be comma-separated numbers") from None


def cmd_calibrate(args) -> int:
    trace = ModelTrace.from_csv(args.trace)
    reqs = _floats(args.requirements, "--requirements")
    levels = _floats(args.loss_levels, "--loss-levels") if args.loss_levels else None
    try:
        table = calibrate(trace, reqs, levels)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _write(args.out, table.to_json())
    bad = [e for e in table.entries if not e.satisfiable]
    print(f"wrote {len(table.entries)} entries to {args.out}"
          + (f" ({len(bad)} unsatisfiable)" if bad else ""))
    return 0


def cmd_simulate(args) -> int:
    cfg = servsim.SimConfig.load(args.config, seed=args.seed)
    table = CalibrationTable.from_json(Path(args.table))
    trace = ModelTrace.from_csv(args.trace)
    report = servsim.run(cfg, table, trace)
    _write(args.out, servsim.dumps_report(report))
    for name, p in sorted(report["policies"].items()):
        lat = p["latency_ms"]
        print(f"{name}: mean {lat['mean']:.3f} ms, P99 {lat['p99']:.3f} ms, "
              f"frontend {p['frontend_handled_fraction']:.4f}, swaps {p['swap_count']}")
    return 0


def cmd_report(args) -> int:
    try:
        report = json.loads(Path(args.in_file).read_text(encoding="utf-8"))
        table, curves = servsim.report_csv(report)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"{args.in_file}: not a simulation report ({exc})") from None
    sys.stdout.write(table)
    if args.csv:
        _write(args.csv, curves)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lossyserve", description="Loss-tolerant JPEG transport and serving simulation.")
    ap.add_argument("--version", action="version",
                    version=f"lossyserve {__version__} (wire magic 0x{MAGIC:04X}, version {VERSION})")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def blocking(p):
        p.add_argument("--target-block-bytes", type=int, default=1024)
        p.add_argument("--max-scan", type=int, default=64,
                       help="MCUs to search past the target for a block end")

    p = sub.add_parser("scan", help="print the MCU map and block plan of a JPEG")
    p.add_argument("file")
    p.add_argument("--json", action="store_true")
    blocking(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("pack", help="split a JPEG into datagram files plus a manifest")
    p.add_argument("file")
    p.add_argument("--request-id", type=int, required=True)
    p.add_argument("--mtu", type=int, default=DEFAULT_MTU_PAYLOAD, help="max payload bytes per datagram")
    p.add_argument("--out", required=True)
    blocking(p)
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("lossgen", help="delete datagram files according to a seeded loss model")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--manifest")
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--burst", type=float, default=1.0, help="mean burst length (Gilbert-Elliott)")
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--spare-header", action="store_true", help="never drop JPEG-header datagrams")
    p.add_argument("--log", help="write the list of dropped files here")
    p.set_defaults(func=cmd_lossgen)

    p = sub.add_parser("recover", help="rebuild a decodable JPEG from surviving datagrams")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--manifest")
    p.add_argument("--mode", choices=("block", "bit"), default="block")
    p.add_argument("--placement", choices=("tail", "inplace"), default="tail")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="loss report path (default: <out>.json)")
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("calibrate", help="build a requirement -> threshold table from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--requirements", required=True, help="comma-separated accuracy requirements")
    p.add_argument("--loss-levels", help="comma-separated loss buckets (default: those in the trace)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="run the serving simulator")
    p.add_argument("--config", required=True, help="TOML or JSON config")
    p.add_argument("--table", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="percentile table and latency curves from a report")
    p.add_argument("--in", dest="in_file", required=True)
    p.add_argument("--csv", help="write per-requirement curves here")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except LossyServeError as exc:
        print(f"error: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc.strerror or exc}: {exc.filename or ''}".rstrip(),
              file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
