"""Discrete-event simulation of gated egress ports driven by drifting local clocks.

Clock model: every device runs at rate 1 + rho*1e-6 against true (global)
time. At each sync instant all local clocks are set to the grandmaster's
local time. Gate windows, frame releases and the fit check are all evaluated
on the transmitting device's local clock.
"""

from __future__ import annotations

import bisect
import csv
import heapq
import io
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

from .constraints import hop_times
from .gcl import PortGcl
from .model import Network, StreamSpec, transmission_time

# event priorities for equal timestamps
SYNC, GATE, ARRIVAL, RELEASE, TX_START, TX_END = range(6)


class SimulationError(AssertionError):
    pass


# ---------------------------------------------------------------------------
# exact reference clock

@dataclass
class SimClock:
    device: str
    drift_ppm: Fraction
    last_sync_global: Fraction = Fraction(0)
    sync_base: Fraction = Fraction(0)

    @property
    def rate(self) -> Fraction:
        return 1 + Fraction(self.drift_ppm) / 1_000_000

    def local(self, t) -> Fraction:
        return self.sync_base + (Fraction(t) - self.last_sync_global) * self.rate


def sync_tick(clocks: dict, global_time, grandmaster: str) -> dict:
    """Set every clock to the grandmaster's local time at ``global_time``."""
    gm_now = clocks[grandmaster].local(global_time)
    return {k: SimClock(c.device, c.drift_ppm, Fraction(global_time), gm_now) for k, c in clocks.items()}


def sync_instants(sync_period: int, phase: int, until: int) -> list[int]:
    """{0} and phase + k*Ts up to ``until`` (ps)."""
    out = [0]
    t = phase if phase > 0 else sync_period
    while t <= until:
        out.append(t)
        t += sync_period
    return out


class ClockSet:
    """Integer form of the clock model: local ps scaled by ``N`` so rates are integers."""

    def __init__(self, drifts: dict, grandmaster: str, syncs: list[int]):
        den = 1
        for r in drifts.values():
            den = math.lcm(den, Fraction(r).denominator)
        self.N = 1_000_000 * den
        self.rate = {k: self.N + int(Fraction(r) * den) for k, r in drifts.items()}
        self.gm_rate = self.rate[grandmaster]
        self.syncs = syncs

    def _segment(self, t):
        i = bisect.bisect_right(self.syncs, t) - 1
        base = self.syncs[i]
        nxt = self.syncs[i + 1] if i + 1 < len(self.syncs) else None
        return base, nxt

    def local(self, dev, t) -> int:
        """Scaled local time of ``dev`` at global ps ``t``."""
        base, _ = self._segment(t)
        return base * self.gm_rate + (t - base) * self.rate[dev]

    def reach(self, dev, target, t) -> int:
        """First global ps >= t at which local(dev) >= target."""
        while True:
            base, nxt = self._segment(t)
            cur = base * self.gm_rate + (t - base) * self.rate[dev]
            if cur >= target:
                return t
            tr = base + -(-(target - base * self.gm_rate) // self.rate[dev])
            if nxt is None or tr < nxt:
                return tr
            t = nxt


# ---------------------------------------------------------------------------
# engine

@dataclass
class _Frame:
    stream: str
    rep: int
    hop: int = 0
    release: int = 0
    source_start: int = 0
    queued_at: int = 0
    queued_local: int = 0
    hops: list = field(default_factory=list)  # (enqueue, start) per hop


@dataclass
class _Port:
    key: tuple
    dev: str
    starts: list  # scaled window starts within one cycle
    ends: list
    cycle: int  # scaled
    queue: deque = field(default_factory=deque)
    busy: bool = False
    pending: bool = False


@dataclass
class StreamStats:
    samples: int = 0
    min_latency: int | None = None
    max_latency: int | None = None
    total: int = 0
    deadline_violations: int = 0
    drops: int = 0

    def add(self, lat, deadline):
        self.samples += 1
        self.total += lat
        self.min_latency = lat if self.min_latency is None else min(self.min_latency, lat)
        self.max_latency = lat if self.max_latency is None else max(self.max_latency, lat)
        if lat > deadline:
            self.deadline_violations += 1

    def merge(self, o: "StreamStats"):
        for lat in (o.min_latency, o.max_latency):
            if lat is not None:
                self.min_latency = lat if self.min_latency is None else min(self.min_latency, lat)
                self.max_latency = lat if self.max_latency is None else max(self.max_latency, lat)
        self.samples += o.samples
        self.total += o.total
        self.deadline_violations += o.deadline_violations
        self.drops += o.drops

    @property
    def jitter(self):
        return None if self.min_latency is None else self.max_latency - self.min_latency

    def to_dict(self):
        return {"samples": self.samples, "min_latency_ps": self.min_latency, "max_latency_ps": self.max_latency,
                "mean_latency_ps": None if not self.samples else round(self.total / self.samples, 3),
                "jitter_ps": self.jitter, "deadline_violations": self.deadline_violations, "drops": self.drops}


@dataclass
class PortStats:
    frames: int = 0
    max_residence: int = 0  # ps, enqueue -> transmission start
    outside_window: int = 0
    window_overruns: int = 0

    def merge(self, o: "PortStats"):
        self.frames += o.frames
        self.max_residence = max(self.max_residence, o.max_residence)
        self.outside_window += o.outside_window
        self.window_overruns += o.window_overruns

    def to_dict(self):
        return {"frames": self.frames, "max_residence_ps": self.max_residence,
                "outside_window": self.outside_window, "window_overruns": self.window_overruns}


@dataclass
class SimReport:
    streams: dict  # id -> StreamStats
    ports: dict  # "a->b" -> PortStats
    duration: int
    phases: list = field(default_factory=list)  # sync phases (ps) covered
    max_latency_by_phase: list = field(default_factory=list)  # [{stream: ps}]
    trace: list | None = field(default=None, repr=False)

    @property
    def drops(self) -> int:
        return sum(s.drops for s in self.streams.values())

    @property
    def outside_window(self) -> int:
        return sum(p.outside_window for p in self.ports.values())

    def max_latency(self) -> dict:
        return {k: s.max_latency for k, s in self.streams.items()}

    def merge(self, o: "SimReport"):
        for k, s in o.streams.items():
            self.streams.setdefault(k, StreamStats()).merge(s)
        for k, p in o.ports.items():
            self.ports.setdefault(k, PortStats()).merge(p)
        self.phases.extend(o.phases)
        self.max_latency_by_phase.extend(o.max_latency_by_phase)

    def to_dict(self) -> dict:
        return {"duration_ps": self.duration, "phases_ps": self.phases,
                "streams": {k: v.to_dict() for k, v in sorted(self.streams.items())},
                "ports": {k: v.to_dict() for k, v in sorted(self.ports.items())},
                "drops": self.drops, "outside_window": self.outside_window,
                "max_latency_by_phase_ps": self.max_latency_by_phase}

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stream", "repetition", "release_ps", "hop", "enqueue_ps", "dequeue_ps", "arrival_ps"])
        for f, arrival in self.trace or []:
            for k, (enq, start) in enumerate(f.hops):
                w.writerow([f.stream, f.rep, f.release, k, enq, start, arrival if k == len(f.hops) - 1 else ""])
        return buf.getvalue()


class Simulation:
    def __init__(self, network: Network, streams, gcls, *, duration: int, sync_phase: int = 0,
                 trace: bool = False):
        self.net = network
        self.streams = {s.id: s for s in streams}
        self.duration = duration
        mt = network.timebase.mt_ps
        drifts = {k: d.drift_ppm for k, d in network.devices.items()}
        ts = network.sync.sync_period
        horizon = duration + 4 * ts + 10 * max((s.period for s in streams), default=0)
        self.clock = ClockSet(drifts, network.grandmaster, sync_instants(ts, sync_phase, horizon))
        N = self.clock.N
        self.ports: dict[tuple, _Port] = {}
        for g in gcls:
            wins = sorted(g.windows)
            self.ports[g.link] = _Port(g.link, g.link[0], [w.start * mt * N for w in wins],
                                       [w.end * mt * N for w in wins], g.cycle * mt * N)
        for s in streams:
            for key in s.route:
                if key not in self.ports:
                    raise SimulationError(f"no gate control list for port {key[0]}->{key[1]}")
        self.hops = {s.id: hop_times(s, network) for s in streams}
        self.tx = {}
        self.post = {}  # ps from tx start to enqueue at the next device (t + d + p)
        for s in streams:
            for key in s.route:
                link = network.link(key)
                t = transmission_time(s, link)
                self.tx[(s.id, key)] = t
                self.post[(s.id, key)] = t + link.propagation_delay + network.devices[key[1]].processing_delay
        self.mt = mt
        self.events: list = []
        self.seq = 0
        self.sstats = {s.id: StreamStats() for s in streams}
        self.pstats = {k: PortStats() for k in self.ports}
        self.trace = [] if trace else None

    def _push(self, t, prio, dev, kind, data):
        self.seq += 1
        heapq.heappush(self.events, (t, prio, dev, self.seq, kind, data))

    # -- gate ----------------------------------------------------------------
    def _window_at(self, port: _Port, L):
        """Absolute window (S, E) containing local L, else (None, next window start > L)."""
        c = port.cycle
        base = L - L % c
        pos = L - base
        i = bisect.bisect_right(port.starts, pos) - 1
        if i >= 0 and pos < port.ends[i]:
            return base + port.starts[i], base + port.ends[i]
        if port.starts and port.ends[-1] > c and pos < port.ends[-1] - c:
            return base - c + port.starts[-1], base - c + port.ends[-1]
        if i + 1 < len(port.starts):
            return None, base + port.starts[i + 1]
        return None, base + c + port.starts[0]

    def _next_start(self, port: _Port, f: _Frame, t: int):
        """Earliest admissible start for frame ``f`` at or after ``t``; None means dropped."""
        if not port.starts:
            return None, False
        dev = port.dev
        rate = self.clock.rate[dev]
        tx_local = self.tx[(f.stream, port.key)] * rate
        for _ in range(4 * len(port.starts) + 64):
            L = self.clock.local(dev, t)
            if L - f.queued_local > port.cycle + tx_local:
                return None, False
            S, E = self._window_at(port, L)
            if S is None:
                target = E  # next window start
            else:
                fits = L + tx_local <= E
                if fits or f.queued_local <= S:
                    return t, not fits
                S2, nxt = self._window_at(port, E)
                target = S2 if S2 is not None else nxt
            t = self.clock.reach(dev, target, t)
        raise SimulationError(f"gate search did not converge on {port.key}")

    def _kick(self, port: _Port, now: int):
        while not port.busy and not port.pending and port.queue:
            f = port.queue[0]
            t, _ = self._next_start(port, f, now)
            if t is None:
                port.queue.popleft()
                self.sstats[f.stream].drops += 1
                continue
            port.pending = True
            self._push(t, TX_START, port.dev, "tx", port.key)

    # -- events --------------------------------------------------------------
    def _enqueue(self, key, f: _Frame, now: int, queued_local: int):
        port = self.ports.get(key)
        if port is None:
            raise SimulationError(f"no gate control list for port {key[0]}->{key[1]}")
        f.queued_at, f.queued_local = now, queued_local
        port.queue.append(f)
        self._kick(port, now)

    def _release(self, sid: str, rep: int, S_scaled: int, now: int):
        s = self.streams[sid]
        f = _Frame(sid, rep, release=now)
        self._enqueue(s.route[0], f, now, S_scaled)
        self._schedule_release(sid, rep + 1, now)

    def _schedule_release(self, sid, rep, after):
        s = self.streams[sid]
        key = s.route[0]
        port = self.ports[key]
        phi = self.offsets[(sid, key)]
        T = s.period // self.mt
        S = (phi + rep * T) * self.mt * self.clock.N
        t = self.clock.reach(port.dev, S, after)
        if t < self.duration:
            self._push(t, RELEASE, port.dev, "release", (sid, rep, S))

    def _tx_start(self, key, now):
        port = self.ports[key]
        port.pending = False
        f = port.queue.popleft()
        s = self.streams[f.stream]
        L = self.clock.local(port.dev, now)
        S, E = self._window_at(port, L)
        ps = self.pstats[key]
        if S is None:
            ps.outside_window += 1
            raise SimulationError(f"{f.stream}#{f.rep} starts outside any window on {key[0]}->{key[1]}")
        if L + self.tx[(f.stream, key)] * self.clock.rate[port.dev] > E:
            ps.window_overruns += 1
        ps.frames += 1
        ps.max_residence = max(ps.max_residence, now - f.queued_at)
        if f.hop == 0:
            f.source_start = now
        if self.trace is not None:
            f.hops.append((f.queued_at, now))
        port.busy = True
        self._push(now + self.tx[(f.stream, key)], TX_END, port.dev, "txend", key)
        if f.hop == len(s.route) - 1:
            link = self.net.link(key)
            arrival = now + self.tx[(f.stream, key)] + link.propagation_delay
            self.sstats[f.stream].add(arrival - f.source_start, s.deadline)
            if self.trace is not None:
                self.trace.append((f, arrival))
        else:
            nxt = s.route[f.hop + 1]
            self._push(now + self.post[(f.stream, key)], ARRIVAL, nxt[0], "arrive", f)

    def run(self, offsets: dict) -> SimReport:
        self.offsets = offsets
        for sid in sorted(self.streams):
            self._schedule_release(sid, 0, 0)
        while self.events:
            now, _, _, _, kind, data = heapq.heappop(self.events)
            if kind == "release":
                self._release(data[0], data[1], data[2], now)
            elif kind == "arrive":
                f = data
                f.hop += 1
                key = self.streams[f.stream].route[f.hop]
                self._enqueue(key, f, now, self.clock.local(key[0], now))
            elif kind == "tx":
                self._tx_start(data, now)
            elif kind == "txend":
                port = self.ports[data]
                port.busy = False
                self._kick(port, now)
        for port in self.ports.values():
            self._drop_leftover(port)
        return SimReport(self.sstats, {f"{a}->{b}": p for (a, b), p in self.pstats.items()}, self.duration,
                         trace=self.trace)

    def _drop_leftover(self, port):
        while port.queue:
            f = port.queue.popleft()
            self.sstats[f.stream].drops += 1


def run(network: Network, streams, gcls, offsets: dict, *, duration: int, sync_phase: int = 0,
        trace: bool = False) -> SimReport:
    """One simulation with the first resync ``sync_phase`` ps after start (0 means at Ts)."""
    rep = Simulation(network, streams, gcls, duration=duration, sync_phase=sync_phase, trace=trace).run(offsets)
    rep.phases = [sync_phase]
    rep.max_latency_by_phase = [rep.max_latency()]
    return rep


def phase_sweep(network: Network, streams, gcls, offsets: dict, *, duration: int, steps: int = 16,
                shift: int = 0, trace: bool = False) -> SimReport:
    """Merge runs whose first resync is at shift + k*Ts/steps, k = 0..steps-1."""
    ts = network.sync.sync_period
    total = None
    for k in range(steps):
        rep = run(network, streams, gcls, offsets, duration=duration, sync_phase=shift + k * ts // steps,
                  trace=trace and k == 0)
        if total is None:
            total = rep
        else:
            total.merge(rep)
    return total
