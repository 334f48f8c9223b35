"""Prediction dumps in, model traces out.

A prediction dump is a CSV with one row per (image, loss level)::

    image_id,loss_level,label,p1,l1,p2,l2,...,pk,lk

where ``label`` is the ground truth and ``(p_i, l_i)`` are the model's top-k
(probability, class) pairs in descending probability order.  Two dumps (a
light frontend model and a heavy backend model) join into a
:class:`~lossyserve.confidence.ModelTrace`.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .confidence import DEFAULT_LOSS_BUCKETS, ModelTrace
from .errors import IdMismatch, ShortVector, TraceError


@dataclass(frozen=True)
class Prediction:
    image_id: str
    loss_level: float
    label: int
    probs: tuple
    classes: tuple

    @classmethod
    def from_vector(cls, image_id, loss_level, label, vector) -> "Prediction":
        """Build from a full probability vector; class ids are vector indices."""
        v = np.asarray(vector, dtype=float)
        order = np.argsort(-v, kind="stable")
        return cls(str(image_id), float(loss_level), int(label),
                   tuple(float(x) for x in v[order]), tuple(int(i) for i in order))

    def top(self, n: int) -> tuple:
        if len(self.probs) < n:
            raise ShortVector(f"image {self.image_id}: {len(self.probs)} predictions, need top-{n}")
        return self.classes[:n]


PredictionDump = dict  # (image_id, loss_level) -> Prediction


def read_dump(source) -> PredictionDump:
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return _read_dump(fh)
    return _read_dump(source)


def _read_dump(fh) -> PredictionDump:
    reader = csv.reader(fh)
    head = next(reader, None)
    if not head or head[:3] != ["image_id", "loss_level", "label"]:
        raise TraceError("dump header must start with image_id,loss_level,label")
    out = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        rest = row[3:]
        if len(rest) % 2:
            raise TraceError(f"line {lineno}: probability/label columns must come in pairs")
        try:
            probs = tuple(float(x) for x in rest[0::2] if x != "")
            classes = tuple(int(x) for x in rest[1::2] if x != "")
            p = Prediction(row[0], float(row[1]), int(row[2]), probs, classes)
        except ValueError as exc:
            raise TraceError(f"line {lineno}: {exc}") from None
        if len(probs) != len(classes):
            raise TraceError(f"line {lineno}: ragged probability/label pairs")
        if any(a < b for a, b in zip(probs, probs[1:])):
            raise TraceError(f"line {lineno}: probabilities must be in descending order")
        out[(p.image_id, round(p.loss_level, 12))] = p
    return out


def write_dump(dump: PredictionDump, path=None) -> str:
    rows = sorted(dump.values(), key=lambda p: (p.loss_level, _id_key(p.image_id)))
    k = max((len(p.probs) for p in rows), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["image_id", "loss_level", "label"]
    for i in range(1, k + 1):
        head += [f"p{i}", f"l{i}"]
    w.writerow(head)
    for p in rows:
        row = [p.image_id, repr(p.loss_level), p.label]
        for prob, cls in zip(p.probs, p.classes):
            row += [f"{prob:.6f}", cls]
        w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _id_key(image_id: str):
    return (0, int(image_id), "") if image_id.isdigit() else (1, 0, image_id)


def build_trace(front: PredictionDump, back: PredictionDump, labels: dict | None = None,
                n: int = 1) -> ModelTrace:
    """Join two dumps into a trace using the n-th largest probability as confidence.

    The backend travels over a reliable path, so its loss-level-0 row is
    used whenever it has no row at a given loss level.  ``labels`` (image id
    -> class), when given, must cover exactly the dumped images and agree
    with the ground truth in the dumps.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    front_ids = {k[0] for k in front}
    back_ids = {k[0] for k in back}
    if front_ids != back_ids:
        diff = sorted(front_ids ^ back_ids)[:5]
        raise IdMismatch(f"frontend and backend dumps cover different images, e.g. {diff}")
    if labels is not None:
        labels = {str(k): int(v) for k, v in labels.items()}
        if set(labels) != front_ids:
            diff = sorted(set(labels) ^ front_ids)[:5]
            raise IdMismatch(f"labels and dumps cover different images, e.g. {diff}")
    rows = []
    for key in sorted(front, key=lambda k: (k[1], _id_key(k[0]))):
        fp = front[key]
        bp = back.get(key) or back.get((key[0], 0.0))
        if bp is None:
            raise IdMismatch(f"backend dump has no row for image {key[0]}")
        truth = fp.label if labels is None else labels[fp.image_id]
        if labels is not None and (fp.label != truth or bp.label != truth):
            raise IdMismatch(f"image {fp.image_id}: dump label disagrees with ground truth")
        conf = fp.probs[n - 1] if len(fp.probs) >= n else None
        if conf is None:
            raise ShortVector(f"image {fp.image_id}: {len(fp.probs)} predictions, need top-{n}")
        rows.append([fp.image_id, fp.loss_level, conf,
                     int(truth in fp.top(n)), int(truth in bp.top(n))])
    return ModelTrace.from_rows(rows)


def validate_trace(trace: ModelTrace) -> dict:
    """Check trace invariants; problems are returned as data, never raised."""
    violations = []

    def add(kind, image_id=None, loss_level=None, detail=""):
        violations.append({"kind": kind, "image_id": None if image_id is None else str(image_id),
                           "loss_level": loss_level, "detail": detail})

    conf = trace.front_confidence
    for k in np.nonzero(~((conf >= 0.0) & (conf <= 1.0)))[0]:
        add("confidence_range", trace.image_id[k], float(trace.loss_level[k]), f"confidence {conf[k]}")
    for name in ("front_correct", "back_correct"):
        col = getattr(trace, name)
        for k in np.nonzero((col != 0) & (col != 1))[0]:
            add("correctness_value", trace.image_id[k], float(trace.loss_level[k]), f"{name}={col[k]}")
    for k in np.nonzero(trace.loss_level < 0)[0]:
        add("loss_level_range", trace.image_id[k], float(trace.loss_level[k]))

    keys = Counter(zip(map(str, trace.image_id), np.round(trace.loss_level, 12).tolist()))
    for (iid, lv), c in sorted(keys.items()):
        if c > 1:
            add("duplicate_row", iid, lv, f"{c} rows")
    levels = sorted({lv for _, lv in keys})
    by_image: dict[str, set] = {}
    for iid, lv in keys:
        by_image.setdefault(iid, set()).add(lv)
    for iid in sorted(by_image, key=_id_key):
        have = by_image[iid]
        if 0.0 not in have:
            add("missing_lossless_row", iid, 0.0)
        for lv in levels:
            if lv != 0.0 and lv not in have:
                add("missing_loss_bucket", iid, lv)

    return {"ok": not violations, "rows": len(trace), "images": len(by_image),
            "loss_levels": levels, "violations": violations, "separation": separation(trace)}


def separation(trace: ModelTrace) -> dict:
    """Mean frontend confidence of correct vs incorrect rows, per loss level."""
    out = {}
    for lv in trace.levels():
        sub = trace.at_level(lv)
        ok = sub.front_correct == 1
        out[repr(lv)] = {
            "mean_conf_correct": float(sub.front_confidence[ok].mean()) if ok.any() else None,
            "mean_conf_incorrect": float(sub.front_confidence[~ok].mean()) if (~ok).any() else None,
        }
    return out


# ---------------------------------------------------------------- synthetic fixture

@dataclass(frozen=True)
class SyntheticModels:
    """Knobs of the synthetic two-model generator."""

    images: int = 1000
    classes: int = 1000
    top_k: int = 5
    loss_levels: tuple = DEFAULT_LOSS_BUCKETS
    front_accuracy: float = 0.745
    front_accuracy_drop_per_pct: float = 0.08  # absolute accuracy lost per 1% MCU loss
    back_given_front_right: float = 0.95
    back_given_front_wrong: float = 0.60
    right_beta: tuple = (7.0, 1.6)
    wrong_beta: tuple = (2.2, 3.0)
    confidence_shrink_per_pct: float = 0.22  # multiplicative confidence shrink per 1% loss


def synthetic_dumps(seed: int = 0, spec: SyntheticModels = SyntheticModels()):
    """Two correlated synthetic prediction dumps plus ground truth.

    Returns ``(front_dump, back_dump, labels)``.  Correct frontend guesses
    draw their top probability from a right-skewed beta, wrong ones from a
    left-skewed beta, so correct answers are more confident on average.
    MCU loss lowers frontend accuracy and confidence; the backend dump has
    only lossless rows.
    """
    rng = np.random.default_rng(seed)
    n = spec.images
    labels = {str(i): int(x) for i, x in enumerate(rng.integers(0, spec.classes, n))}
    u_right = rng.random(n)
    u_back = rng.random(n)
    front: PredictionDump = {}
    back: PredictionDump = {}
    for lv in spec.loss_levels:
        acc = spec.front_accuracy - spec.front_accuracy_drop_per_pct * lv * 100
        shrink = max(0.0, 1.0 - spec.confidence_shrink_per_pct * lv * 100)
        right = u_right < acc
        conf_r = rng.beta(*spec.right_beta, n)
        conf_w = rng.beta(*spec.wrong_beta, n)
        tail_u = rng.random((n, spec.top_k - 1))
        decoys = rng.integers(1, spec.classes, (n, spec.top_k))
        for i in range(n):
            iid = str(i)
            p1 = (conf_r[i] if right[i] else conf_w[i]) * shrink
            front[(iid, round(float(lv), 12))] = _prediction(
                iid, lv, labels[iid], p1, bool(right[i]), tail_u[i], decoys[i], spec.classes)
    front_right0 = u_right < spec.front_accuracy
    back_right = np.where(front_right0, u_back < spec.back_given_front_right,
                          u_back < spec.back_given_front_wrong)
    conf_b = rng.beta(8.0, 1.5, n)
    tail_b = rng.random((n, spec.top_k - 1))
    decoys_b = rng.integers(1, spec.classes, (n, spec.top_k))
    for i in range(n):
        iid = str(i)
        back[(iid, 0.0)] = _prediction(iid, 0.0, labels[iid], conf_b[i], bool(back_right[i]),
                                       tail_b[i], decoys_b[i], spec.classes)
    return front, back, labels


def _prediction(iid, lv, truth, p1, right, tail_u, decoys, n_classes) -> Prediction:
    p1 = float(np.clip(p1, 1e-6, 1.0))
    probs = [round(p1, 6)]
    left = 1.0 - p1
    for u in tail_u:
        nxt = min(probs[-1], left * (0.3 + 0.5 * u))
        nxt = round(nxt, 6)
        probs.append(nxt)
        left -= nxt
    top1 = truth if right else (truth + int(decoys[0])) % n_classes
    classes = [top1]
    used = {top1, truth}
    for d in decoys[1:]:
        c = (truth + int(d)) % n_classes
        while c in used:
            c = (c + 1) % n_classes
        used.add(c)
        classes.append(c)
    return Prediction(iid, float(lv), truth, tuple(probs), tuple(classes))


def _top1_accuracy(dump: PredictionDump, level: float) -> float:
    rows = [p for (_, lv), p in dump.items() if lv == round(float(level), 12)]
    return sum(p.classes[0] == p.label for p in rows) / len(rows)


def _data_path(name: str) -> Path:
    return Path(str(resources.files("lossyserve") / "data" / name))


FIXTURE_FILES = {
    "front": "fixture_front_dump.csv",
    "back": "fixture_back_dump.csv",
    "trace": "fixture_trace.csv",
    "meta": "fixture_meta.json",
}


def fixture_path(kind: str = "trace") -> Path:
    return _data_path(FIXTURE_FILES[kind])


def load_fixture_trace() -> ModelTrace:
    return ModelTrace.from_csv(fixture_path("trace"))


def write_fixture(directory, seed: int = 2, spec: SyntheticModels = SyntheticModels()) -> dict:
    """Regenerate the committed fixture dumps, trace and meta file."""
    d = Path(directory)
    front, back, labels = synthetic_dumps(seed, spec)
    write_dump(front, d / FIXTURE_FILES["front"])
    write_dump(back, d / FIXTURE_FILES["back"])
    # Reload so the trace reflects the dumps' rounded probabilities exactly.
    trace = build_trace(read_dump(d / FIXTURE_FILES["front"]), read_dump(d / FIXTURE_FILES["back"]), n=1)
    trace.to_csv(d / FIXTURE_FILES["trace"])
    meta = {
        "seed": seed,
        "images": spec.images,
        "top_n": 1,
        "loss_levels": list(spec.loss_levels),
        "front_top1_accuracy": {repr(float(lv)): _top1_accuracy(front, lv) for lv in spec.loss_levels},
        "back_top1_accuracy": _top1_accuracy(back, 0.0),
        "trace_sha256": trace.digest(),
    }
    (d / FIXTURE_FILES["meta"]).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    return meta
