"""Confidence scaling: accuracy requirement -> frontend confidence threshold.

The frontend answers a request itself when its confidence is at or above the
threshold for the request's accuracy requirement; everything else is left
to the backend.  Thresholds are chosen by exhaustive search over the
calibration trace, separately for each loss bucket.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyTrace, TraceError, UnsatisfiableRequirement

ABOVE_ALL = 1.0 + 1e-9
"""Threshold no confidence can reach: every request goes to the backend."""

DEFAULT_LOSS_BUCKETS = (0.0, 0.001, 0.005, 0.01)

TRACE_COLUMNS = ["image_id", "loss_level", "front_confidence", "front_correct", "back_correct"]
LATENCY_COLUMNS = ["front_latency_ms", "back_latency_ms"]


@dataclass
class ModelTrace:
    """Columnar per-(image, loss level) record of both models' behaviour."""

    image_id: np.ndarray
    loss_level: np.ndarray
    front_confidence: np.ndarray
    front_correct: np.ndarray
    back_correct: np.ndarray
    front_latency_ms: np.ndarray | None = None
    back_latency_ms: np.ndarray | None = None
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.image_id = np.asarray(self.image_id, dtype=object)
        self.loss_level = np.asarray(self.loss_level, dtype=float)
        self.front_confidence = np.asarray(self.front_confidence, dtype=float)
        self.front_correct = np.asarray(self.front_correct, dtype=np.int8)
        self.back_correct = np.asarray(self.back_correct, dtype=np.int8)
        n = len(self.image_id)
        for name in ("loss_level", "front_confidence", "front_correct", "back_correct"):
            if len(getattr(self, name)) != n:
                raise TraceError(f"column {name} has {len(getattr(self, name))} rows, expected {n}")
        for name in LATENCY_COLUMNS:
            col = getattr(self, name)
            if col is not None:
                setattr(self, name, np.asarray(col, dtype=float))

    @classmethod
    def from_rows(cls, rows) -> "ModelTrace":
        rows = list(rows)
        cols = list(zip(*rows)) if rows else [[]] * 5
        lat = [None, None]
        if rows and len(rows[0]) >= 7:
            lat = [cols[5], cols[6]]
        return cls(cols[0], cols[1], cols[2], cols[3], cols[4], *lat)

    def __len__(self) -> int:
        return len(self.image_id)

    def levels(self) -> list[float]:
        return sorted(set(self.loss_level.tolist()))

    def at_level(self, level: float) -> "ModelTrace":
        mask = np.isclose(self.loss_level, level, rtol=0, atol=1e-12)
        return ModelTrace(
            self.image_id[mask], self.loss_level[mask], self.front_confidence[mask],
            self.front_correct[mask], self.back_correct[mask],
            None if self.front_latency_ms is None else self.front_latency_ms[mask],
            None if self.back_latency_ms is None else self.back_latency_ms[mask],
        )

    def lookup(self, image_id, level: float) -> int | None:
        """Row index for (image, loss level), or None."""
        if self._index is None:
            self._index = {(str(i), round(float(lv), 12)): k
                           for k, (i, lv) in enumerate(zip(self.image_id, self.loss_level))}
        return self._index.get((str(image_id), round(float(level), 12)))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        with_lat = self.front_latency_ms is not None and self.back_latency_ms is not None
        w.writerow(TRACE_COLUMNS + (LATENCY_COLUMNS if with_lat else []))
        for k in range(len(self)):
            row = [self.image_id[k], _fmt(self.loss_level[k]), _fmt(self.front_confidence[k]),
                   int(self.front_correct[k]), int(self.back_correct[k])]
            if with_lat:
                row += [_fmt(self.front_latency_ms[k]), _fmt(self.back_latency_ms[k])]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, source) -> "ModelTrace":
        """Load from a path or an open text stream."""
        if isinstance(source, (str, Path)):
            with open(source, newline="", encoding="utf-8") as fh:
                return cls._read(fh)
        return cls._read(source)

    @classmethod
    def _read(cls, fh) -> "ModelTrace":
        reader = csv.DictReader(fh)
        missing = [c for c in TRACE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise TraceError(f"trace is missing columns {missing}")
        with_lat = all(c in reader.fieldnames for c in LATENCY_COLUMNS)
        rows = []
        for lineno, r in enumerate(reader, start=2):
            try:
                row = [r["image_id"], float(r["loss_level"]), float(r["front_confidence"]),
                       int(r["front_correct"]), int(r["back_correct"])]
                if with_lat:
                    row += [_float_or_nan(r["front_latency_ms"]), _float_or_nan(r["back_latency_ms"])]
            except (TypeError, ValueError) as exc:
                raise TraceError(f"line {lineno}: {exc}") from None
            rows.append(row)
        return cls.from_rows(rows)

    def digest(self) -> str:
        return hashlib.sha256(self.to_csv().encode()).hexdigest()


def _fmt(x: float) -> str:
    return repr(float(x))


def _float_or_nan(s: str) -> float:
    return float(s) if s not in ("", None) else math.nan


def combined_accuracy(trace: ModelTrace, t: float, loss_level: float | None = None) -> float:
    """End-to-end accuracy when the frontend answers confidences >= t."""
    if loss_level is not None:
        trace = trace.at_level(loss_level)
    if len(trace) == 0:
        raise EmptyTrace("no rows to evaluate")
    handled = trace.front_confidence >= t
    correct = np.where(handled, trace.front_correct, trace.back_correct)
    return int(correct.sum()) / len(trace)


@dataclass(frozen=True)
class CalibrationEntry:
    loss_level: float
    requirement: float
    threshold: float
    predicted_frontend_fraction: float
    predicted_accuracy: float
    satisfiable: bool = True

    def to_dict(self) -> dict:
        return {
            "loss_level": self.loss_level,
            "requirement": self.requirement,
            "threshold": self.threshold,
            "predicted_frontend_fraction": self.predicted_frontend_fraction,
            "predicted_accuracy": self.predicted_accuracy,
            "satisfiable": self.satisfiable,
        }


@dataclass
class CalibrationTable:
    entries: list[CalibrationEntry]
    provenance: dict = field(default_factory=dict)

    def levels(self) -> list[float]:
        return sorted({e.loss_level for e in self.entries})

    def bucket_for(self, loss_fraction: float) -> float | None:
        """Smallest calibrated loss level covering ``loss_fraction``; None if beyond all."""
        for lv in self.levels():
            if loss_fraction <= lv + 1e-12:
                return lv
        return None

    def entry(self, requirement: float, loss_level: float = 0.0) -> CalibrationEntry:
        """Entry for ``requirement`` or the nearest one above it."""
        rows = [e for e in self.entries if abs(e.loss_level - loss_level) <= 1e-12]
        rows = [e for e in rows if e.requirement >= requirement - 1e-12]
        if not rows:
            raise UnsatisfiableRequirement(
                f"no calibrated requirement >= {requirement} at loss level {loss_level}")
        best = min(rows, key=lambda e: e.requirement)
        if not best.satisfiable:
            raise UnsatisfiableRequirement(
                f"requirement {best.requirement} is out of reach at loss level {loss_level}")
        return best

    def to_json(self, path=None) -> str:
        doc = {"provenance": self.provenance, "entries": [e.to_dict() for e in self.entries]}
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, source) -> "CalibrationTable":
        if isinstance(source, (str, Path)) and not str(source).lstrip().startswith("{"):
            source = Path(source).read_text(encoding="utf-8")
        doc = json.loads(source)
        return cls([CalibrationEntry(**e) for e in doc["entries"]], doc.get("provenance", {}))


def threshold_candidates(confidences) -> np.ndarray:
    """0, every distinct confidence, and a value above all of them (ascending)."""
    vals = np.unique(np.asarray(confidences, dtype=float))
    return np.concatenate(([0.0], vals[vals > 0.0], [ABOVE_ALL]))


def accuracy_curve(trace: ModelTrace) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(candidates, combined accuracy, frontend fraction) over all candidates.

    Sorting once and using prefix sums makes this O(N log N) for all
    candidates together.
    """
    n = len(trace)
    if n == 0:
        raise EmptyTrace("no rows to calibrate on")
    order = np.argsort(-trace.front_confidence, kind="stable")
    conf = trace.front_confidence[order]
    fc = np.concatenate(([0], np.cumsum(trace.front_correct[order], dtype=np.int64)))
    bc = np.concatenate(([0], np.cumsum(trace.back_correct[order], dtype=np.int64)))
    cands = threshold_candidates(conf)
    # handled(t) = #{c >= t}; conf is descending, so search the negated array
    handled = np.searchsorted(-conf, -cands, side="right")
    correct = fc[handled] + (bc[-1] - bc[handled])
    return cands, correct / n, handled / n


def calibrate(trace: ModelTrace, requirements, loss_levels=None) -> CalibrationTable:
    """Pick, for each requirement and loss level, the smallest satisfying threshold.

    Requirements nobody can meet (no candidate reaches them) get an entry
    flagged ``satisfiable=False`` whose threshold sends everything to the
    backend.
    """
    reqs = [float(a) for a in requirements]
    if any(not 0.0 <= a <= 1.0 for a in reqs):
        raise ValueError("requirements must lie in [0, 1]")
    if len(trace) == 0:
        raise EmptyTrace("no rows to calibrate on")
    levels = trace.levels() if loss_levels is None else [float(x) for x in loss_levels]
    entries = []
    for lv in levels:
        sub = trace.at_level(lv)
        if len(sub) == 0:
            raise EmptyTrace(f"no trace rows at loss level {lv}")
        cands, acc, frac = accuracy_curve(sub)
        for a in sorted(reqs):
            ok = np.nonzero(acc >= a)[0]
            if len(ok):
                k = int(ok[0])
                entries.append(CalibrationEntry(lv, a, float(cands[k]), float(frac[k]), float(acc[k])))
            else:
                k = len(cands) - 1
                entries.append(CalibrationEntry(lv, a, float(cands[k]), float(frac[k]),
                                                float(acc[k]), satisfiable=False))
    provenance = {"trace_sha256": trace.digest(), "rows": len(trace), "loss_levels": levels,
                  "requirements": sorted(reqs)}
    return CalibrationTable(entries, provenance)


class Decision(str, enum.Enum):
    FRONTEND_ANSWER = "FrontendAnswer"
    FALLBACK = "Fallback"


@dataclass(frozen=True)
class ArbiterDecision:
    kind: Decision
    threshold_used: float | None
    labels: tuple = ()
    confidence: float | None = None

    @property
    def frontend(self) -> bool:
        return self.kind is Decision.FRONTEND_ANSWER


def arbitrate(front_confidence: float, requirement: float, table: CalibrationTable,
              loss_level: float = 0.0, labels=()) -> ArbiterDecision:
    """Answer from the frontend iff its confidence clears the threshold."""
    t = table.entry(requirement, loss_level).threshold
    if front_confidence >= t:
        return ArbiterDecision(Decision.FRONTEND_ANSWER, t, tuple(labels), front_confidence)
    return ArbiterDecision(Decision.FALLBACK, t)


def requirement_grid(lo: float = 0.70, hi: float = 0.85, step: float = 0.01) -> list[float]:
    n = int(round((hi - lo) / step))
    return [round(lo + i * step, 10) for i in range(n + 1)]
