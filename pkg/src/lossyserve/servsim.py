"""Discrete-event simulator of edge/data-center inference serving.

Two policies are compared on the same seeded workload:

``dual``
    Every request is sent both to an edge frontend (small model, lossy
    edge link) and to the data-center backend (large model, reliable link).
    The frontend answers directly when its confidence clears the calibrated
    threshold for the request's accuracy requirement and its loss bucket,
    then cancels the backend job.  Otherwise the backend's answer is used.

``baseline``
    Every request goes to the data center, which runs the cheapest model of
    the app that meets the requirement.  Models not resident in GPU memory
    are loaded first (LRU eviction), costing ``swap_ratio`` times the
    model's inference time.

Time is kept in integer microseconds and ties between simultaneous events
are broken by (kind rank, request id, insertion order), so a given config
and seed always yields the same report.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import csv
import io
import json
import math
from collections import OrderedDict, deque
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .confidence import CalibrationTable, ModelTrace, arbitrate
from .errors import ConfigInvalid, TraceMiss, UnsatisfiableRequirement
from .lossmodel import LossSpec

POLICIES = ("dual", "baseline")
REQUIREMENT_ORDERS = ("iid", "ascending", "fixed")

DEFAULT_ACCURACIES = (0.70, 0.74, 0.78, 0.82, 0.86)
DEFAULT_SERVICE_MS = (2.0, 3.5, 5.0, 7.0, 9.0)


@dataclass(frozen=True)
class ModelSpec:
    accuracy: float
    service_ms: float


@dataclass(frozen=True)
class App:
    app_id: str
    models: tuple

    def cheapest_meeting(self, requirement: float) -> int:
        """Index of the fastest model with accuracy >= requirement (else the most accurate)."""
        ok = [i for i, m in enumerate(self.models) if m.accuracy >= requirement - 1e-12]
        if not ok:
            return self.most_accurate()
        return min(ok, key=lambda i: (self.models[i].service_ms, i))

    def most_accurate(self) -> int:
        return max(range(len(self.models)),
                   key=lambda i: (self.models[i].accuracy, -self.models[i].service_ms, -i))


def default_apps(n_apps: int = 25) -> tuple:
    models = tuple(ModelSpec(a, s) for a, s in zip(DEFAULT_ACCURACIES, DEFAULT_SERVICE_MS))
    return tuple(App(f"app{i:02d}", models) for i in range(n_apps))


@dataclass
class SimConfig:
    seed: int
    edge_delay_ms: float = 3.0
    internet_delay_ms: float = 10.0
    loss: LossSpec = field(default_factory=LossSpec)
    packets_per_image: int = 108
    timeout_ms: float = 20.0
    recovery_delay_ms: float = 0.2
    frontend_service_ms: float = 2.0
    service_from_trace: bool = False
    gpus: int = 4
    gpu_memory_slots: int | None = 8
    swap_ratio: float = 3.0
    abort_cost_ms: float = 0.0
    cancel: bool = True
    apps: tuple = field(default_factory=default_apps)
    requests: int = 4000
    arrival_rate_per_s: float = 50.0
    requirement_order: str = "iid"
    requirement_low: float = 0.70
    requirement_high: float = 0.85
    requirement_fixed: float | None = None
    policies: tuple = POLICIES
    frontend_watts: float = 31.74
    backend_watts: float = 106.0
    loss_sweep: tuple = ()
    curve_step: float = 0.01

    def __post_init__(self):
        self.apps = tuple(self.apps)
        self.policies = tuple(self.policies)
        self.loss_sweep = tuple(float(x) for x in self.loss_sweep)
        self.validate()

    def validate(self) -> None:
        def bad(msg):
            raise ConfigInvalid(msg)

        if not isinstance(self.seed, (int, np.integer)) or isinstance(self.seed, bool) or self.seed < 0:
            bad("seed must be a non-negative integer")
        for name in ("edge_delay_ms", "internet_delay_ms", "timeout_ms", "recovery_delay_ms",
                     "frontend_service_ms", "abort_cost_ms", "frontend_watts", "backend_watts"):
            if not getattr(self, name) >= 0:
                bad(f"{name} must be >= 0")
        if not self.swap_ratio >= 0:
            bad("swap_ratio must be >= 0")
        if self.gpu_memory_slots is not None and self.gpu_memory_slots < 1:
            bad("gpu_memory_slots must be >= 1 (or unlimited)")
        if self.gpus < 1:
            bad("gpus must be >= 1")
        if self.packets_per_image < 1:
            bad("packets_per_image must be >= 1")
        if self.requests < 1:
            bad("request count must be >= 1")
        if not self.arrival_rate_per_s > 0:
            bad("arrival_rate_per_s must be > 0")
        if self.requirement_order not in REQUIREMENT_ORDERS:
            bad(f"requirement order must be one of {REQUIREMENT_ORDERS}")
        if not 0.0 <= self.requirement_low <= self.requirement_high <= 1.0:
            bad("requirements need 0 <= low <= high <= 1")
        if self.requirement_order == "fixed" and (
                self.requirement_fixed is None or not 0.0 <= self.requirement_fixed <= 1.0):
            bad("fixed requirement order needs requirement_fixed in [0, 1]")
        if not self.policies or any(p not in POLICIES for p in self.policies):
            bad(f"policies must be drawn from {POLICIES}")
        if not self.apps or any(not a.models for a in self.apps):
            bad("every app needs at least one model")
        for a in self.apps:
            for m in a.models:
                if not 0.0 <= m.accuracy <= 1.0 or not m.service_ms >= 0:
                    bad(f"{a.app_id}: model accuracy in [0, 1] and service_ms >= 0")
        if any(not 0.0 <= r < 1.0 for r in self.loss_sweep):
            bad("loss_sweep rates must lie in [0, 1)")
        if not self.curve_step > 0:
            bad("curve_step must be > 0")

    # -- serialisation -------------------------------------------------------

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["loss"] = asdict(self.loss)
        d["apps"] = [{"app_id": a.app_id, "models": [asdict(m) for m in a.models]} for a in self.apps]
        d["policies"] = list(self.policies)
        d["loss_sweep"] = list(self.loss_sweep)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_mapping(cls, doc: dict, seed: int | None = None) -> "SimConfig":
        """Build from the nested config layout (see README); ``seed`` overrides the file's."""
        kw = {}
        doc = dict(doc)
        for section, keys in _SECTIONS.items():
            if section is None:
                continue
            sub = doc.pop(section, None)
            if sub is None:
                continue
            if not isinstance(sub, dict):
                raise ConfigInvalid(f"[{section}] must be a table")
            for k, v in sub.items():
                if k not in keys:
                    raise ConfigInvalid(f"unknown key {section}.{k}")
                kw[keys[k]] = v
        apps = doc.pop("apps", None)
        for k, v in doc.items():
            if k not in _SECTIONS[None]:
                raise ConfigInvalid(f"unknown top-level key {k!r}")
            kw[_SECTIONS[None][k]] = v
        if seed is not None:
            kw["seed"] = seed
        if "seed" not in kw:
            raise ConfigInvalid("config needs a seed")
        loss = {k: kw.pop(k) for k in ("loss_model", "loss_rate", "loss_burst") if k in kw}
        try:
            kw["loss"] = LossSpec(loss.get("loss_model", "bernoulli"), float(loss.get("loss_rate", 0.0)),
                                  float(loss.get("loss_burst", 1.0)))
            if apps is not None:
                kw["apps"] = tuple(App(str(a["app_id"]), tuple(ModelSpec(float(m["accuracy"]),
                                                                         float(m["service_ms"]))
                                                               for m in a["models"]))
                                   for a in apps)
            if kw.get("gpu_memory_slots") in ("inf", "unlimited", 0):
                kw["gpu_memory_slots"] = None
            return cls(**kw)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid(f"bad config value: {exc}") from None

    @classmethod
    def load(cls, path, seed: int | None = None) -> "SimConfig":
        p = Path(path)
        text = p.read_text(encoding="utf-8")
        if p.suffix.lower() == ".json":
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigInvalid(f"{p}: {exc}") from None
        else:
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            try:
                doc = tomllib.loads(text)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigInvalid(f"{p}: {exc}") from None
        return cls.from_mapping(doc, seed)


_SECTIONS = {
    None: {"seed": "seed", "policies": "policies", "loss_sweep": "loss_sweep", "curve_step": "curve_step"},
    "network": {"edge_delay_ms": "edge_delay_ms", "internet_delay_ms": "internet_delay_ms"},
    "edge_loss": {"model": "loss_model", "rate": "loss_rate", "burst": "loss_burst"},
    "frontend": {"service_ms": "frontend_service_ms", "recovery_delay_ms": "recovery_delay_ms",
                 "timeout_ms": "timeout_ms", "packets_per_image": "packets_per_image",
                 "service_from_trace": "service_from_trace"},
    "backend": {"gpus": "gpus", "gpu_memory_slots": "gpu_memory_slots", "swap_ratio": "swap_ratio",
                "abort_cost_ms": "abort_cost_ms", "cancel": "cancel"},
    "workload": {"count": "requests", "rate_per_s": "arrival_rate_per_s", "order": "requirement_order",
                 "low": "requirement_low", "high": "requirement_high", "fixed": "requirement_fixed"},
    "energy": {"frontend_watts": "frontend_watts", "backend_watts": "backend_watts"},
}


# ------------------------------------------------------------------ workload


@dataclass(frozen=True)
class Request:
    request_id: int
    arrival_us: int
    app: int
    image: int
    requirement: float


def gen_workload(cfg: SimConfig, n_images: int = 1) -> list[Request]:
    """Open-loop Poisson arrivals with seeded app, image and requirement draws."""
    ss = np.random.SeedSequence(cfg.seed)
    r_arr, r_app, r_img, r_req = (np.random.default_rng(s) for s in ss.spawn(4))
    n = cfg.requests
    gaps = r_arr.exponential(1e6 / cfg.arrival_rate_per_s, n)
    arrivals = np.floor(np.cumsum(gaps)).astype(np.int64)
    apps = r_app.integers(0, len(cfg.apps), n)
    images = r_img.integers(0, n_images, n)
    if cfg.requirement_order == "fixed":
        reqs = np.full(n, float(cfg.requirement_fixed))
    else:
        reqs = r_req.uniform(cfg.requirement_low, cfg.requirement_high, n)
        if cfg.requirement_order == "ascending":
            reqs = np.sort(reqs)
    return [Request(i, int(arrivals[i]), int(apps[i]), int(images[i]), float(reqs[i])) for i in range(n)]


def percentiles(samples) -> tuple[float, float, float, float]:
    """(mean, P90, P99, P100) with nearest-rank percentiles."""
    s = sorted(samples)
    n = len(s)
    if n == 0:
        raise ValueError("percentiles of an empty sample")

    def rank(k: int) -> float:
        return s[max(1, -(-k * n // 100)) - 1]

    return math.fsum(s) / n, rank(90), rank(99), rank(100)


# ------------------------------------------------------------------ engine


class Kind(enum.IntEnum):
    """Event kinds; the value is the tie-break rank at equal timestamps."""

    BACKEND_DONE = 0
    GPU_FREE = 1
    FRONTEND_DONE = 2
    CANCEL_DELIVERED = 3
    CLIENT_REPLY = 4
    TIMEOUT = 5
    PACKETS_IN = 6
    BACKEND_ARRIVE = 7
    ARRIVAL = 8


def _us(ms: float) -> int:
    return int(round(ms * 1000))


class _Gpu:
    def __init__(self, slots: int | None):
        self.slots = slots
        self.resident: OrderedDict = OrderedDict()
        self.job = None
        self.token = 0
        self.started = 0
        self.busy_until = 0

    def has(self, model) -> bool:
        return model in self.resident

    def load(self, model) -> bool:
        """Touch ``model`` in LRU order; True if it had to be loaded."""
        if model in self.resident:
            self.resident.move_to_end(model)
            return False
        if self.slots is not None and len(self.resident) >= self.slots:
            self.resident.popitem(last=False)
        self.resident[model] = True
        return True


@dataclass
class _Job:
    request_id: int
    model: tuple
    service_us: int
    queued: bool = True
    cancelled: bool = False
    gpu: int | None = None


@dataclass
class _ReqState:
    req: Request
    done: bool = False
    latency_us: int = 0
    source: str = ""
    correct: float = 0.0
    loss_fraction: float = 0.0
    decision: str = ""


class _Sim:
    def __init__(self, cfg: SimConfig, policy: str, table, trace, workload, loss_masks):
        self.cfg = cfg
        self.policy = policy
        self.table = table
        self.trace = trace
        self.workload = workload
        self.loss_masks = loss_masks
        self.heap: list = []
        self.seq = 0
        self.now = 0
        self.states = {r.request_id: _ReqState(r) for r in workload}
        self.gpus = [_Gpu(cfg.gpu_memory_slots) for _ in range(cfg.gpus)]
        self.queue: deque = deque()
        self.jobs: dict[int, _Job] = {}
        self.front_busy_until = None
        self.stats = dict(swaps=0, backend_busy_us=0, frontend_busy_us=0, cancelled_queued=0,
                          aborted_running=0, backend_completed=0, stale_backend_results=0,
                          header_lost=0, timeouts=0)
        self._prewarm()
        self._images = None

    # --- plumbing

    def push(self, t: int, kind: Kind, rid: int, payload=None) -> None:
        if t < self.now:
            raise AssertionError("event scheduled in the past")
        heapq.heappush(self.heap, (t, int(kind), rid, self.seq, payload))
        self.seq += 1

    def run(self):
        for r in self.workload:
            self.push(r.arrival_us, Kind.ARRIVAL, r.request_id)
        handlers = {
            Kind.ARRIVAL: self.on_arrival,
            Kind.PACKETS_IN: self.on_packets_in,
            Kind.TIMEOUT: self.on_packets_in,
            Kind.FRONTEND_DONE: self.on_frontend_done,
            Kind.BACKEND_ARRIVE: self.on_backend_arrive,
            Kind.BACKEND_DONE: self.on_backend_done,
            Kind.CANCEL_DELIVERED: self.on_cancel,
            Kind.GPU_FREE: self.on_gpu_free,
            Kind.CLIENT_REPLY: self.on_client_reply,
        }
        while self.heap:
            t, kind, rid, _, payload = heapq.heappop(self.heap)
            self.now = t
            handlers[Kind(kind)](rid, payload)
        return self

    def _prewarm(self) -> None:
        """Fill GPU memory deterministically with the models this policy uses."""
        apps = self.cfg.apps
        if self.policy == "dual":
            order = [(a, apps[a].most_accurate()) for a in range(len(apps))]
        else:
            width = max(len(a.models) for a in apps)
            order = [(a, m) for m in range(width - 1, -1, -1) for a in range(len(apps))
                     if m < len(apps[a].models)]
        slots = self.cfg.gpu_memory_slots
        if slots is None or slots >= len(order):
            for g in self.gpus:
                g.resident.update((m, True) for m in order)
            return
        for k, model in enumerate(order):
            g = self.gpus[k % len(self.gpus)]
            if len(g.resident) < slots:
                g.resident[model] = True

    # --- request handling

    def on_arrival(self, rid, _):
        req = self.states[rid].req
        cfg = self.cfg
        if self.policy == "dual":
            self.push(self.now + _us(cfg.edge_delay_ms), Kind.PACKETS_IN, rid)
            model = (req.app, cfg.apps[req.app].most_accurate())
        else:
            model = (req.app, cfg.apps[req.app].cheapest_meeting(req.requirement))
        self.push(self.now + _us(cfg.internet_delay_ms), Kind.BACKEND_ARRIVE, rid, model)

    def on_packets_in(self, rid, payload):
        st = self.states[rid]
        cfg = self.cfg
        mask = self.loss_masks[rid]
        if payload is None:
            if mask is not None and mask[0]:
                # JPEG header lost: nothing for the frontend to work on
                self.stats["header_lost"] += 1
                st.decision = "header_lost"
                return
            lost = 0 if mask is None else int(mask[1:].sum())
            st.loss_fraction = lost / cfg.packets_per_image
            if mask is not None and mask[-1]:
                self.stats["timeouts"] += 1
                self.push(self.now + _us(cfg.timeout_ms), Kind.TIMEOUT, rid, "ready")
                return
        delay = _us(cfg.recovery_delay_ms) if st.loss_fraction > 0 else 0
        self._frontend_enqueue(rid, self.now + delay)

    def _frontend_enqueue(self, rid, t_ready):
        # single FIFO edge device; t_ready >= now so ordering is by readiness
        start = t_ready if self.front_busy_until is None else max(t_ready, self.front_busy_until)
        st = self.states[rid]
        svc = _us(self._front_service(st.req))
        self.front_busy_until = start + svc
        self.stats["frontend_busy_us"] += svc
        self.push(start + svc, Kind.FRONTEND_DONE, rid)

    def _front_service(self, req: Request) -> float:
        if self.cfg.service_from_trace and self.trace.front_latency_ms is not None:
            k = self._row(req.image, 0.0)
            v = self.trace.front_latency_ms[k]
            if not math.isnan(v):
                return float(v)
        return self.cfg.frontend_service_ms

    def _row(self, image: int, level: float) -> int:
        if self._images is None:
            self._images = _image_ids(self.trace)
        iid = self._images[image]
        k = self.trace.lookup(iid, level)
        if k is None:
            raise TraceMiss(f"trace has no row for image {iid} at loss level {level}")
        return k

    def on_frontend_done(self, rid, _):
        st = self.states[rid]
        req = st.req
        bucket = self.table.bucket_for(st.loss_fraction)
        if bucket is None:
            st.decision = "loss_beyond_table"
            return
        k = self._row(req.image, bucket)
        conf = float(self.trace.front_confidence[k])
        try:
            decision = arbitrate(conf, req.requirement, self.table, bucket)
        except UnsatisfiableRequirement:
            st.decision = "unsatisfiable"
            return
        if not decision.frontend:
            st.decision = "fallback"
            return
        st.decision = "frontend"
        self.push(self.now + _us(self.cfg.edge_delay_ms), Kind.CLIENT_REPLY, rid,
                  ("frontend", float(self.trace.front_correct[k])))
        if self.cfg.cancel:
            self.push(self.now + _us(self.cfg.internet_delay_ms), Kind.CANCEL_DELIVERED, rid)

    def on_backend_arrive(self, rid, model):
        app = self.cfg.apps[model[0]]
        svc = app.models[model[1]].service_ms
        if self.cfg.service_from_trace and self.trace.back_latency_ms is not None and self.policy == "dual":
            v = self.trace.back_latency_ms[self._row(self.states[rid].req.image, 0.0)]
            if not math.isnan(v):
                svc = float(v)
        job = _Job(rid, model, _us(svc))
        self.jobs[rid] = job
        self.queue.append(job)
        self._dispatch()

    def _dispatch(self):
        """Start queued jobs on free GPUs, oldest first.

        A job whose model sits on a busy GPU that frees up sooner than a
        swap would take waits for that GPU instead of swapping elsewhere.
        """
        while self.queue:
            free = [i for i, g in enumerate(self.gpus) if g.job is None]
            if not free:
                return
            pick = None
            for job in list(self.queue):
                if job.cancelled:
                    self.queue.remove(job)
                    continue
                warm = [i for i in free if self.gpus[i].has(job.model)]
                if warm:
                    pick = (job, warm[0])
                    break
                swap = self.cfg.swap_ratio * job.service_us
                if any(g.job is not None and g.has(job.model) and g.busy_until - self.now <= swap
                       for g in self.gpus):
                    continue
                pick = (job, free[0])
                break
            if pick is None:
                return
            job, gi = pick
            self.queue.remove(job)
            g = self.gpus[gi]
            cost = job.service_us
            if g.load(job.model):
                self.stats["swaps"] += 1
                cost += int(round(self.cfg.swap_ratio * job.service_us))
            job.queued = False
            job.gpu = gi
            g.job = job
            g.token += 1
            g.started = self.now
            g.busy_until = self.now + cost
            self.push(self.now + cost, Kind.BACKEND_DONE, job.request_id, (gi, g.token))

    def on_backend_done(self, rid, payload):
        gi, token = payload
        g = self.gpus[gi]
        if g.token != token or not isinstance(g.job, _Job) or g.job.request_id != rid:
            return  # aborted by a cancel
        self.stats["backend_busy_us"] += self.now - g.started
        self.stats["backend_completed"] += 1
        g.job = None
        job = self.jobs.pop(rid)
        st = self.states[rid]
        if self.policy == "dual":
            correct = float(self.trace.back_correct[self._row(st.req.image, 0.0)])
        else:
            app = self.cfg.apps[job.model[0]]
            correct = app.models[job.model[1]].accuracy
        self.push(self.now + _us(self.cfg.internet_delay_ms), Kind.CLIENT_REPLY, rid, ("backend", correct))
        self._dispatch()

    def on_cancel(self, rid, _):
        job = self.jobs.pop(rid, None)
        if job is None:
            return  # backend already finished
        job.cancelled = True
        if job.queued:
            self.stats["cancelled_queued"] += 1
            return
        g = self.gpus[job.gpu]
        g.token += 1
        self.stats["aborted_running"] += 1
        abort = _us(self.cfg.abort_cost_ms)
        self.stats["backend_busy_us"] += self.now - g.started + abort
        if abort:
            g.job = "aborting"
            g.busy_until = self.now + abort
            self.push(self.now + abort, Kind.GPU_FREE, rid, (job.gpu, g.token))
            return
        g.job = None
        self._dispatch()

    def on_gpu_free(self, rid, payload):
        gi, token = payload
        g = self.gpus[gi]
        if g.token == token:
            g.job = None
            self._dispatch()

    def on_client_reply(self, rid, payload):
        st = self.states[rid]
        if st.done:
            self.stats["stale_backend_results"] += 1
            return
        st.done = True
        st.latency_us = self.now - st.req.arrival_us
        st.source, st.correct = payload


def _image_ids(trace: ModelTrace) -> list:
    """Distinct image ids in first-seen order (the sampling universe)."""
    seen = {}
    for iid in trace.image_id:
        seen.setdefault(str(iid), None)
    return list(seen)


# ------------------------------------------------------------------ reporting


def _r(x: float, nd: int = 6) -> float:
    return float(round(float(x), nd))


def _loss_masks(cfg: SimConfig, workload: list[Request], loss: LossSpec) -> dict:
    if loss.rate == 0.0:
        return {r.request_id: None for r in workload}
    per = 1 + cfg.packets_per_image
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(5)[4])
    flat = loss.mask(per * len(workload), rng)
    return {r.request_id: flat[i * per:(i + 1) * per] for i, r in enumerate(workload)}


def _summarise(sim: _Sim, details: bool = False) -> dict:
    cfg = sim.cfg
    states = [sim.states[r.request_id] for r in sim.workload]
    if any(not s.done for s in states):
        raise AssertionError("request without a terminal reply")
    lat_ms = [s.latency_us / 1000.0 for s in states]
    mean, p90, p99, p100 = percentiles(lat_ms)
    n = len(states)
    front = sum(s.source == "frontend" for s in states)
    st = sim.stats
    energy = (cfg.frontend_watts * st["frontend_busy_us"] + cfg.backend_watts * st["backend_busy_us"]) / 1e6
    out = {
        "requests": n,
        "latency_ms": {"mean": _r(mean), "p90": _r(p90), "p99": _r(p99), "p100": _r(p100)},
        "frontend_handled_fraction": _r(front / n),
        "fallback_fraction": _r(1 - front / n),
        "achieved_accuracy": _r(math.fsum(s.correct for s in states) / n),
        "swap_count": st["swaps"],
        "total_energy_j": _r(energy),
        "frontend_busy_ms": _r(st["frontend_busy_us"] / 1000),
        "backend_busy_ms": _r(st["backend_busy_us"] / 1000),
        "backend_jobs_completed": st["backend_completed"],
        "cancelled_queued": st["cancelled_queued"],
        "aborted_running": st["aborted_running"],
        "late_results_discarded": st["stale_backend_results"],
    }
    if sim.policy == "dual":
        out["header_lost"] = st["header_lost"]
        out["reassembly_timeouts"] = st["timeouts"]
        out["mean_loss_fraction"] = _r(np.mean([s.loss_fraction for s in states]))
    out["per_requirement"] = _curve(states, cfg)
    if details:
        out["requests_detail"] = [
            {"request_id": s.req.request_id, "arrival_ms": s.req.arrival_us / 1000,
             "latency_ms": s.latency_us / 1000, "source": s.source, "decision": s.decision,
             "requirement": s.req.requirement, "loss_fraction": s.loss_fraction}
            for s in states]
    return out


def _curve(states, cfg: SimConfig) -> list[dict]:
    step = cfg.curve_step
    bins: dict[int, list] = {}
    for s in states:
        bins.setdefault(int(math.floor(s.req.requirement / step + 1e-9)), []).append(s)
    rows = []
    for b in sorted(bins):
        group = bins[b]
        mean, p90, p99, p100 = percentiles([s.latency_us / 1000.0 for s in group])
        rows.append({
            "requirement_lo": _r(b * step),
            "count": len(group),
            "mean_ms": _r(mean), "p90_ms": _r(p90), "p99_ms": _r(p99), "p100_ms": _r(p100),
            "frontend_fraction": _r(sum(s.source == "frontend" for s in group) / len(group)),
            "accuracy": _r(math.fsum(s.correct for s in group) / len(group)),
        })
    return rows


def simulate_policy(cfg: SimConfig, policy: str, table: CalibrationTable, trace: ModelTrace,
                    workload=None, loss: LossSpec | None = None, details: bool = False) -> dict:
    """Run one policy and return its summary dict (plus per-request rows if ``details``)."""
    if len(trace) == 0:
        raise TraceMiss("empty trace")
    if workload is None:
        workload = gen_workload(cfg, len(_image_ids(trace)))
    loss = cfg.loss if loss is None else loss
    masks = _loss_masks(cfg, workload, loss) if policy == "dual" else {r.request_id: None for r in workload}
    sim = _Sim(cfg, policy, table, trace, workload, masks).run()
    return _summarise(sim, details)


def run(cfg: SimConfig, table: CalibrationTable, trace: ModelTrace) -> dict:
    """Simulate every configured policy (plus the optional loss sweep)."""
    workload = gen_workload(cfg, len(_image_ids(trace)))
    policies = {p: simulate_policy(cfg, p, table, trace, workload) for p in cfg.policies}
    report = {
        "provenance": {
            "seed": int(cfg.seed),
            "config_sha256": cfg.digest(),
            "trace_sha256": trace.digest(),
            "table_trace_sha256": table.provenance.get("trace_sha256"),
            "arrival_process": "open-loop Poisson",
            "requests": cfg.requests,
        },
        "config": cfg.to_dict(),
        "policies": policies,
    }
    if cfg.loss_sweep:
        sweep = []
        for rate in cfg.loss_sweep:
            spec = replace(cfg.loss, rate=rate)
            s = simulate_policy(cfg, "dual", table, trace, workload, spec)
            sweep.append({"loss_rate": _r(rate), "mean_ms": s["latency_ms"]["mean"],
                          "p90_ms": s["latency_ms"]["p90"], "p99_ms": s["latency_ms"]["p99"],
                          "p100_ms": s["latency_ms"]["p100"],
                          "frontend_handled_fraction": s["frontend_handled_fraction"],
                          "fallback_fraction": s["fallback_fraction"],
                          "achieved_accuracy": s["achieved_accuracy"],
                          "mean_loss_fraction": s["mean_loss_fraction"]})
        report["loss_sweep"] = sweep
    return report


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def report_csv(report: dict) -> tuple[str, str]:
    """(percentile table, per-requirement curves) as CSV text."""
    a = io.StringIO()
    w = csv.writer(a, lineterminator="\n")
    w.writerow(["policy", "requests", "mean_ms", "p90_ms", "p99_ms", "p100_ms",
                "frontend_handled_fraction", "swap_count", "total_energy_j", "achieved_accuracy"])
    for name in sorted(report["policies"]):
        p = report["policies"][name]
        lat = p["latency_ms"]
        w.writerow([name, p["requests"], lat["mean"], lat["p90"], lat["p99"], lat["p100"],
                    p["frontend_handled_fraction"], p["swap_count"], p["total_energy_j"],
                    p["achieved_accuracy"]])
    for row in report.get("loss_sweep", []):
        w.writerow([f"dual@loss={row['loss_rate']}", "", row["mean_ms"], row["p90_ms"], row["p99_ms"],
                    row["p100_ms"], row["frontend_handled_fraction"], "", "", row["achieved_accuracy"]])
    b = io.StringIO()
    w = csv.writer(b, lineterminator="\n")
    w.writerow(["policy", "requirement_lo", "count", "mean_ms", "p90_ms", "p99_ms", "p100_ms",
                "frontend_fraction", "accuracy"])
    for name in sorted(report["policies"]):
        for row in report["policies"][name]["per_requirement"]:
            w.writerow([name, row["requirement_lo"], row["count"], row["mean_ms"], row["p90_ms"],
                        row["p99_ms"], row["p100_ms"], row["frontend_fraction"], row["accuracy"]])
    return a.getvalue(), b.getvalue()
