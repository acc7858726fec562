"""Gate control lists, scheduling durations and the schedule criteria."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .constraints import Clocks, ceil, hop_times, resolve_clocks
from .model import Method, Network, StreamSpec, hyperperiod_of

TS_QUEUE = 7


class GclError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class GateWindow:
    start: int  # mt within the cycle
    duration: int  # mt
    stream: str = ""
    repetition: int = 0

    @property
    def end(self) -> int:
        return self.start + self.duration


@dataclass
class PortGcl:
    link: tuple[str, str]
    cycle: int  # mt
    windows: list[GateWindow] = field(default_factory=list)
    queue: int = TS_QUEUE

    @property
    def open_time(self) -> int:
        return sum(w.duration for w in self.windows)

    def entries(self) -> list[tuple[str, int, int]]:
        """(gate_state, start, duration) covering the whole cycle, closed gaps included."""
        out = []
        # a window wrapping past the cycle end also covers the head of the next cycle
        t = max(0, self.windows[-1].end - self.cycle) if self.windows else 0
        for w in self.windows:
            if w.start > t:
                out.append(("closed", t, w.start - t))
            out.append(("open", w.start, w.duration))
            t = w.end
        if t < self.cycle:
            out.append(("closed", t, self.cycle - t))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# port={self.link[0]}->{self.link[1]} cycle_mt={self.cycle}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["entry_index", "queue", "gate_state", "start_mt", "duration_mt"])
        for i, (state, start, dur) in enumerate(self.entries()):
            w.writerow([i, self.queue, state, start, dur])
        return buf.getvalue()


def scheduling_duration(method: Method | str, stream: StreamSpec, link, network: Network,
                        clocks: Clocks | None = None) -> int:
    """Gate-open length (mt) reserved for one frame of ``stream`` on ``link``."""
    method = Method(method)
    clocks = clocks or resolve_clocks(network)
    hop = next((h for h in hop_times(stream, network) if h.link == tuple(link)), None)
    if hop is None:
        raise GclError(f"link {link[0]}->{link[1]} not on route of {stream.id}")
    if method in (Method.WCD, Method.NCD):
        return ceil(hop.t)
    if method is Method.WCA:
        return ceil(hop.t + 2 * clocks.delta_mt + 1)
    a = link[0]
    return ceil(hop.t + clocks.adjust_max(a, stream.source) - clocks.adjust_min(a, stream.source) + 2)


def route_duration(method, stream, network, clocks=None) -> int:
    clocks = clocks or resolve_clocks(network)
    return sum(scheduling_duration(method, stream, key, network, clocks) for key in stream.route)


def compile_gcls(offsets: dict, network: Network, streams, method, clocks=None) -> list[PortGcl]:
    """Expand offsets ``{(stream, link): mt}`` into per-port windows over one hyperperiod."""
    method = Method(method)
    clocks = clocks or resolve_clocks(network)
    streams = sorted(streams, key=lambda s: s.id)
    if not streams:
        return []
    tb = network.timebase
    hp = hyperperiod_of(streams, tb)
    ports: dict[tuple, PortGcl] = {}
    for s in streams:
        T = tb.to_mt(s.period)
        for key in s.route:
            if (s.id, key) not in offsets:
                raise GclError(f"no offset for {s.id} on {key[0]}->{key[1]}")
            sd = scheduling_duration(method, s, key, network, clocks)
            phi = offsets[(s.id, key)]
            port = ports.setdefault(key, PortGcl(key, hp))
            for k in range(hp // T):
                port.windows.append(GateWindow((phi + k * T) % hp, sd, s.id, k))
    out = []
    for key in sorted(ports):
        port = ports[key]
        port.windows.sort()
        _check_overlap(port)
        out.append(port)
    return out


def _check_overlap(port: PortGcl):
    ws = port.windows
    for a, b in zip(ws, ws[1:]):
        if a.end > b.start:
            raise GclError(f"port {port.link[0]}->{port.link[1]}: windows of {a.stream}#{a.repetition} "
                           f"and {b.stream}#{b.repetition} overlap at {b.start} mt")
    if ws and ws[-1].end > port.cycle + ws[0].start:
        a, b = ws[-1], ws[0]
        raise GclError(f"port {port.link[0]}->{port.link[1]}: window of {a.stream}#{a.repetition} wraps "
                       f"into {b.stream}#{b.repetition}")


def local_gate_state(port: PortGcl, local_mt) -> str:
    """'open' iff ``local_mt`` (any real, in mt) falls inside a window modulo the cycle."""
    x = Fraction(local_mt) % port.cycle
    for w in port.windows:
        if w.start <= x < w.end or w.start <= x + port.cycle < w.end:
            return "open"
    return "closed"


def port_demand(key, streams, network, method, clocks=None) -> int:
    clocks = clocks or resolve_clocks(network)
    users = [s for s in streams if tuple(key) in s.route]
    if not users:
        return 0
    hp = hyperperiod_of(users, network.timebase)
    return sum(hp // network.timebase.to_mt(s.period) * scheduling_duration(method, s, key, network, clocks)
               for s in users)


def check_infeasible(key, streams, network, method, clocks=None, hyperperiod=None) -> bool:
    """True when the windows demanded on ``key`` exceed one hyperperiod."""
    users = [s for s in streams if tuple(key) in s.route]
    if not users:
        return False
    hp = hyperperiod if hyperperiod is not None else hyperperiod_of(streams, network.timebase)
    clocks = clocks or resolve_clocks(network)
    demand = sum(hp // network.timebase.to_mt(s.period) * scheduling_duration(method, s, key, network, clocks)
                 for s in users)
    return demand > hp


def infeasible_ports(streams, network, method, clocks=None) -> list[tuple[str, str]]:
    keys = sorted({k for s in streams for k in s.route})
    return [k for k in keys if check_infeasible(k, streams, network, method, clocks)]


def schedulability_cost(streams, network, method, clocks=None) -> Fraction:
    clocks = clocks or resolve_clocks(network)
    tb = network.timebase
    return sum((Fraction(route_duration(method, s, network, clocks), tb.to_mt(s.period)) for s in streams),
               Fraction(0))


@dataclass
class ScheduleEvaluation:
    deadlines_met: dict  # stream -> bool
    feasible: dict  # port "a->b" -> bool
    schedulability_cost: Fraction

    @property
    def valid(self) -> bool:
        return all(self.deadlines_met.values()) and all(self.feasible.values())

    def to_dict(self) -> dict:
        return {"criteria_1_deadlines": self.deadlines_met, "criteria_2_feasible": self.feasible,
                "criteria_3_sc": str(self.schedulability_cost),
                "criteria_3_sc_float": float(self.schedulability_cost), "valid": self.valid}


def evaluate(streams, network, method, max_latency_ps: dict, clocks=None) -> ScheduleEvaluation:
    """Criteria from measured latencies (ps per stream), port capacity and SC."""
    clocks = clocks or resolve_clocks(network)
    met = {s.id: (s.id in max_latency_ps and max_latency_ps[s.id] is not None
                  and max_latency_ps[s.id] <= s.deadline) for s in sorted(streams, key=lambda s: s.id)}
    keys = sorted({k for s in streams for k in s.route})
    feas = {f"{a}->{b}": not check_infeasible((a, b), streams, network, method, clocks) for a, b in keys}
    return ScheduleEvaluation(met, feas, schedulability_cost(streams, network, method, clocks))


def write_gcls(gcls, out_dir) -> list[str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for g in gcls:
        p = out / f"gcl_{g.link[0]}_{g.link[1]}.csv"
        p.write_text(g.to_csv())
        paths.append(str(p))
    return paths


def read_gcl_csv(text: str) -> PortGcl:
    lines = text.splitlines()
    head = dict(part.split("=", 1) for part in lines[0].lstrip("# ").split())
    a, b = head["port"].split("->")
    port = PortGcl((a, b), int(head["cycle_mt"]))
    for row in csv.DictReader(lines[1:]):
        if row["gate_state"] == "open":
            port.windows.append(GateWindow(int(row["start_mt"]), int(row["duration_mt"])))
    return port
