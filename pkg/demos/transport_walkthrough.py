"""Send one JPEG through the lossy transport and repair it.

    python demos/transport_walkthrough.py [image.jpg] [--rate 0.05] [--seed 7]

Prints the block plan, which datagrams were lost, and what each repair
strategy produced.  Repaired files land next to this script in out/.
"""

import argparse
from pathlib import Path

import numpy as np

from lossyserve.jpeg import parse_jpeg, plan_mcu_blocks, scan_mcu_boundaries
from lossyserve.lossmodel import LossSpec
from lossyserve.protocol import build_packets, encode_packet
from lossyserve.recovery import recover_datagrams

HERE = Path(__file__).resolve().parent
DEFAULT_IMAGE = HERE.parent / "tests" / "fixtures" / "corpus" / "img1000_cv2_422_q36.jpg"

ap = argparse.ArgumentParser()
ap.add_argument("image", nargs="?", default=str(DEFAULT_IMAGE))
ap.add_argument("--rate", type=float, default=0.05)
ap.add_argument("--seed", type=int, default=7)
ap.add_argument("--target-block-bytes", type=int, default=256)
ap.add_argument("--mtu", type=int, default=200)
args = ap.parse_args()

data = Path(args.image).read_bytes()
img = parse_jpeg(data)
mcus = scan_mcu_boundaries(img)
plan = plan_mcu_blocks(img, mcus, target_block_bytes=args.target_block_bytes)
print(f"{Path(args.image).name}: {img.width}x{img.height}, {img.mcu_count_expected} MCUs, "
      f"restart interval {img.restart_interval}")
print(f"{len(plan.blocks)} MCU blocks, recoverable={plan.recoverable}")
for i, b in enumerate(plan.blocks[:8], start=1):
    print(f"  block {i}: MCUs {b.start_mcu}..{b.end_mcu} ({b.size} bytes)")
if len(plan.blocks) > 8:
    print(f"  ... {len(plan.blocks) - 8} more")

dset = build_packets(img, plan, request_id=1, mtu_payload=args.mtu)
mask = LossSpec("bernoulli", args.rate).mask(len(dset.packets), np.random.default_rng(args.seed))
kept = []
for (h, payload), lost in zip(dset.packets, mask):
    if lost and not h.is_jpeg_header:
        print(f"  lost datagram: block {h.block_num} part {h.partition_idx + 1}/{h.partition_num}")
    else:
        kept.append(encode_packet(h, payload))
print(f"{len(kept)} of {len(dset.packets)} datagrams arrived")

out = HERE / "out"
out.mkdir(exist_ok=True)
for mode, placement in (("block", "tail"), ("block", "inplace"), ("bit", "tail")):
    rec = recover_datagrams(kept, mode=mode, placement=placement)
    name = out / f"repaired_{mode}_{placement}.jpg"
    if rec.bytes:
        name.write_bytes(rec.bytes)
    print(f"{mode:5s} {placement:7s}: {rec.outcome.value}, lost {rec.lost_mcu_total} MCUs "
          f"({rec.loss_fraction:.1%}), salvaged {rec.salvaged_mcus}, wrote {name.name}")
