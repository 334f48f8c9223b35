"""Regenerate tests/fixtures/corpus: 20 JPEGs plus a manifest from libjpeg.

Run from the repo root: ``python3 tests/make_fixtures.py``.  The manifest
values (dimensions, MCU count) come from the system libjpeg, never from
lossyserve itself.
"""

import json
import sys
from pathlib import Path

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE))

import corpus  # noqa: E402
import refscan  # noqa: E402
import stockdecoder  # noqa: E402

OUT = HERE / "fixtures" / "corpus"
SEEDS = range(1000, 1020)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for old in OUT.glob("*.jpg"):
        old.unlink()
    manifest = {}
    for seed in SEEDS:
        name, data, recipe = corpus.make_image(seed, min_side=16, max_side=360)
        p = stockdecoder.probe(data)
        if not p.clean:
            raise SystemExit(f"{name}: reference decoder rejected the image: {p.message}")
        if refscan.check_scan(data) != p.mcu_count:
            raise SystemExit(f"{name}: reference counters disagree")
        (OUT / f"{name}.jpg").write_bytes(data)
        manifest[f"{name}.jpg"] = {"width": p.width, "height": p.height, "mcu_count": p.mcu_count,
                                   "bytes": len(data), "recipe": recipe}
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(manifest)} images to {OUT}")


if __name__ == "__main__":
    main()
