"""Top-N accuracy of tail vs in-place repair after dropping the first packets.

Bring your own classifier and labelled images:

    python demos/placement_accuracy.py IMAGE_DIR LABELS.csv mypkg.models:top5 \
        [--drop 10] [--mtu 1200]

LABELS.csv has ``name,label`` rows (name = file name in IMAGE_DIR).  The
classifier is ``module:function``; the function takes JPEG bytes and returns
a list of predicted integer labels (top-N, best first).  Images a decoder
rejects count as misses.  Without a classifier the script still reports how
each repair came out.
"""

import argparse
import csv
import importlib
import json
from collections import Counter
from pathlib import Path

from lossyserve.recovery import compare_placements

ap = argparse.ArgumentParser()
ap.add_argument("images")
ap.add_argument("labels", nargs="?")
ap.add_argument("classifier", nargs="?", help="module:function")
ap.add_argument("--drop", type=int, default=10)
ap.add_argument("--mtu", type=int, default=1200)
ap.add_argument("--target-block-bytes", type=int, default=1024)
args = ap.parse_args()

paths = sorted(p for p in Path(args.images).iterdir() if p.suffix.lower() in (".jpg", ".jpeg"))
images = [(p.name, p.read_bytes()) for p in paths]

classify = labels = None
if args.classifier and args.labels:
    mod, fn = args.classifier.split(":")
    model = getattr(importlib.import_module(mod), fn)

    def classify(data):
        try:
            return list(model(data))
        except Exception:  # an undecodable image is simply a miss
            return []

    with open(args.labels, newline="") as fh:
        labels = {row[0]: int(row[1]) for row in csv.reader(fh) if row and row[0] != "name"}
    images = [(n, d) for n, d in images if n in labels]

rep = compare_placements(images, args.drop, target_block_bytes=args.target_block_bytes,
                         mtu_payload=args.mtu, classify=classify, labels=labels)
print(json.dumps(rep["summary"], indent=2, sort_keys=True))
print("outcomes:", dict(Counter(r["tail_outcome"] for r in rep["rows"])))
