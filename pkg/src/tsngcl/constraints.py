"""Kappa expressions and construction of the offset constraint system.

Every constraint is normalised to the difference form ``phi[x] - phi[y] <= b``
with integer ``b`` in macroticks. ``None`` as a variable index stands for the
constant zero, which is how variable domains are expressed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Sequence

from .model import (ClockSyncConfig, DeviceKind, Method, ModelError, Network, StreamSpec,
                    frame_hop, hyperperiod_of, min_e2e_latency)

PPM = 1_000_000


class ConfigurationError(ModelError):
    pass


def ceil(x: Fraction) -> int:
    return math.ceil(x)


def floor(x: Fraction) -> int:
    return math.floor(x)


@dataclass(frozen=True)
class Clocks:
    """Resolved clock parameters; all drift terms are returned in macroticks."""

    drifts: dict
    grandmaster: str
    sync_period: int  # ps
    delta: Fraction  # ps
    psi: int
    mt_ps: int

    @property
    def delta_mt(self) -> Fraction:
        return self.delta / self.mt_ps

    def _term(self, ppm: Fraction) -> Fraction:
        return ppm * self.sync_period / PPM / self.mt_ps

    def rel(self, a: str, b: str) -> Fraction:
        """(rho_a - rho_b) * Ts in mt."""
        return self._term(self.drifts[a] - self.drifts[b])

    def synced_rel(self, later: str, earlier: str) -> Fraction:
        """psi * (rho'_later - rho'_earlier) * Ts.

        The later device on the frame's path is taken as already resynchronised
        (GM drift) while the earlier one still runs on its own drift.
        """
        if later == earlier or not self.psi:
            return Fraction(0)
        return self._term(self.drifts[self.grandmaster] - self.drifts[earlier])

    def lateness(self, a: str, x: str) -> Fraction:
        return max(Fraction(0), self.rel(a, x), self.synced_rel(a, x))

    def earliness(self, y: str, a: str) -> Fraction:
        # psi * (rho'_y - rho'_a) with y upstream (own drift) and a downstream (GM)
        sync = Fraction(0) if (y == a or not self.psi) else self._term(
            self.drifts[y] - self.drifts[self.grandmaster])
        return max(Fraction(0), self.rel(y, a), sync)

    def adjust_min(self, v: str, src: str) -> Fraction:
        return min(Fraction(0), self.rel(v, src), self.synced_rel(v, src))

    def adjust_max(self, v: str, src: str) -> Fraction:
        return max(Fraction(0), self.rel(v, src), self.synced_rel(v, src))


def derive_delta(network: Network, sync_period: int | None = None) -> Fraction:
    ts = network.sync.sync_period if sync_period is None else sync_period
    drifts = [d.drift_ppm for d in network.devices.values()]
    return (max(drifts) - min(drifts)) * ts / PPM


def resolve_clocks(network: Network, sync: ClockSyncConfig | None = None) -> Clocks:
    sync = sync or network.sync
    delta = sync.delta if sync.delta is not None else derive_delta(network, sync.sync_period)
    return Clocks({k: d.drift_ppm for k, d in network.devices.items()}, network.grandmaster,
                  sync.sync_period, Fraction(delta), sync.psi, network.timebase.mt_ps)


# ---------------------------------------------------------------------------
# per-hop quantities in macroticks

@dataclass(frozen=True)
class HopTimes:
    link: tuple[str, str]
    t: Fraction  # transmission
    d: Fraction  # propagation
    L: Fraction  # t + d + receiver processing


def hop_times(stream: StreamSpec, network: Network) -> list[HopTimes]:
    mt = network.timebase.mt_ps
    out = []
    for key in stream.route:
        h = frame_hop(stream, key, network)
        d = network.link(key).propagation_delay
        out.append(HopTimes(key, Fraction(h.transmission_time, mt), Fraction(d, mt),
                            Fraction(h.transport_delay, mt)))
    return out


def kappa_consecutive(method: Method, stream: StreamSpec, k: int, network: Network,
                      clocks: Clocks) -> int:
    """Minimum gap phi(hop k) - phi(hop k-1), per method and predecessor kind."""
    if not 1 <= k < len(stream.route):
        raise ModelError(f"hop {k} has no predecessor on {stream.id}")
    hops = hop_times(stream, network)
    L = hops[k - 1].L
    x, a = stream.route[k - 1][0], stream.route[k][0]
    src = stream.source
    if method is Method.WCD:
        return ceil(L + clocks.delta_mt)
    if method is Method.WCA:
        gamma = 1 if network.devices[x].kind is DeviceKind.END_STATION else 0
        return floor(L - gamma * clocks.delta_mt)
    if method is Method.NCD:
        return ceil(L + clocks.lateness(a, x))
    return floor(L + clocks.adjust_min(a, src) - clocks.adjust_min(x, src))


def chain_offsets(method: Method, stream: StreamSpec, network: Network, clocks: Clocks) -> list[int]:
    """Offsets of each hop relative to the first one.

    For the delay methods these are lower bounds built from the hop-local
    kappas. For the adjustment methods they are exact: floors are taken on the
    cumulative exact value so rounding never accumulates along the route.
    """
    n = len(stream.route)
    if not method.adjusts:
        out = [0]
        for k in range(1, n):
            out.append(out[-1] + kappa_consecutive(method, stream, k, network, clocks))
        return out
    hops = hop_times(stream, network)
    src = stream.source
    acc = Fraction(0)
    out = [0]
    for k in range(1, n):
        acc += hops[k - 1].L
        a = stream.route[k][0]
        if method is Method.WCA:
            exact = acc - clocks.delta_mt
        else:
            exact = acc + clocks.adjust_min(a, src)
        out.append(floor(exact))
    return out


def separation(method: Method, stream: StreamSpec, key, network: Network, clocks: Clocks) -> int:
    """Gate window length plus inter-frame slack claimed by ``stream`` on ``key``."""
    hop = next(h for h in hop_times(stream, network) if h.link == tuple(key))
    if method in (Method.WCD, Method.NCD):
        return ceil(hop.t + 1)
    if method is Method.WCA:
        return ceil(hop.t + 2 * clocks.delta_mt + 1)
    a = key[0]
    return ceil(hop.t + clocks.adjust_max(a, stream.source) - clocks.adjust_min(a, stream.source) + 2)


def kappa_sched_duration(method: Method, si: StreamSpec, sj: StreamSpec, key, alpha: int, beta: int,
                         network: Network, clocks: Clocks) -> int:
    """Bound b of ``phi_j - phi_i <= b`` (j's window ends before i's repetition)."""
    mt = network.timebase.mt_ps
    ti, tj = si.period // mt, sj.period // mt
    return (alpha * ti - beta * tj) - separation(method, sj, key, network, clocks)


def kappa_frame_arrival(method: Method, si: StreamSpec, sj: StreamSpec, ingress_j, alpha: int, beta: int,
                        network: Network, clocks: Clocks) -> int:
    """Bound b of ``phi_i(out) - phi_j(in) <= b``."""
    mt = network.timebase.mt_ps
    ti, tj = si.period // mt, sj.period // mt
    hop = next(h for h in hop_times(sj, network) if h.link == tuple(ingress_j))
    y, a = ingress_j
    if method in (Method.WCD, Method.WCA):
        pad = clocks.delta_mt
    else:
        pad = clocks.earliness(y, a)
    return (beta * tj - alpha * ti) + ceil(hop.L + pad)


def latency_constant(method: Method, stream: StreamSpec, network: Network, clocks: Clocks) -> Fraction:
    """c such that lambda = phi_last - phi_first + c (mt)."""
    last = hop_times(stream, network)[-1]
    base = last.t + last.d
    if method is Method.WCA:
        return base + clocks.delta_mt
    if method is Method.NCA:
        return base - clocks.adjust_min(stream.route[-1][0], stream.source)
    return base


# ---------------------------------------------------------------------------
# problem instance

@dataclass(frozen=True)
class OffsetVar:
    stream: str
    link: tuple[str, str]
    upper: int

    @property
    def name(self) -> str:
        return f"phi_{self.stream}_{self.link[0]}_{self.link[1]}"


@dataclass(frozen=True)
class DiffConstraint:
    x: int | None
    y: int | None
    bound: int
    tag: str = ""

    def holds(self, values: Sequence[int]) -> bool:
        vx = 0 if self.x is None else values[self.x]
        vy = 0 if self.y is None else values[self.y]
        return vx - vy <= self.bound


@dataclass(frozen=True)
class Disjunction:
    left: tuple[DiffConstraint, ...]
    right: tuple[DiffConstraint, ...]
    tag: str
    port: tuple[str, str]

    def holds(self, values) -> bool:
        return all(c.holds(values) for c in self.left) or all(c.holds(values) for c in self.right)


@dataclass(frozen=True)
class LatencyDef:
    stream: str
    first: int
    last: int
    constant: Fraction  # mt
    lambda_min: Fraction  # mt
    deadline: Fraction  # mt
    pinned: bool

    def value(self, values) -> Fraction:
        if self.pinned:
            return self.lambda_min
        return values[self.last] - values[self.first] + self.constant


@dataclass
class ProblemInstance:
    method: Method
    hyperperiod: int
    vars: list[OffsetVar]
    hard: list[DiffConstraint]
    disjunctions: list[Disjunction]
    latencies: list[LatencyDef]
    streams: list[StreamSpec] = field(repr=False, default_factory=list)
    infeasible_reason: str | None = None
    mt_ps: int = 100_000

    def index(self, stream: str, link) -> int:
        for i, v in enumerate(self.vars):
            if v.stream == stream and v.link == tuple(link):
                return i
        raise KeyError((stream, link))

    def objective(self, values) -> Fraction:
        return sum((l.value(values) - l.lambda_min for l in self.latencies), Fraction(0))

    def violations(self, values) -> list[str]:
        out = []
        for i, v in enumerate(self.vars):
            if not 0 <= values[i] <= v.upper:
                out.append(f"bound {v.name}={values[i]} not in [0,{v.upper}]")
        for c in self.hard:
            if not c.holds(values):
                out.append(f"{c.tag}: {_fmt(self, c)}")
        for d in self.disjunctions:
            if not d.holds(values):
                out.append(f"{d.tag}: ({_fmt_all(self, d.left)}) or ({_fmt_all(self, d.right)})")
        for l in self.latencies:
            lam = l.value(values)
            if lam > l.deadline:
                out.append(f"deadline {l.stream}: {float(lam):.2f} > {float(l.deadline):.2f} mt")
        return out

    def dump(self) -> str:
        lines = [f"method {self.method.value}", f"hyperperiod {self.hyperperiod}"]
        for v in self.vars:
            lines.append(f"var {v.name} in [0, {v.upper}]")
        for c in self.hard:
            lines.append(f"{c.tag}: {_fmt(self, c)}")
        for d in self.disjunctions:
            lines.append(f"{d.tag} @{d.port[0]}->{d.port[1]}: ({_fmt_all(self, d.left)}) or ({_fmt_all(self, d.right)})")
        for l in self.latencies:
            kind = "==" if l.pinned else "<="
            lines.append(f"latency {l.stream}: {self.vars[l.last].name} - {self.vars[l.first].name} + {l.constant}"
                         f"; min {l.lambda_min} {kind} lambda <= {l.deadline}")
        return "\n".join(lines) + "\n"


def _name(p: ProblemInstance, i):
    return "0" if i is None else p.vars[i].name


def _fmt(p, c: DiffConstraint) -> str:
    return f"{_name(p, c.x)} - {_name(p, c.y)} <= {c.bound}"


def _fmt_all(p, cs) -> str:
    return " and ".join(_fmt(p, c) for c in cs)


def build_problem(network: Network, streams: Sequence[StreamSpec], method: Method | str,
                  clocks: Clocks | None = None) -> ProblemInstance:
    method = Method(method)
    clocks = clocks or resolve_clocks(network)
    tb = network.timebase
    streams = sorted(streams, key=lambda s: s.id)
    for s in streams:
        network.validate_stream(s)
    hp = hyperperiod_of(streams, tb) if streams else 0
    vars_: list[OffsetVar] = []
    idx: dict[tuple[str, tuple], int] = {}
    slack = sum(ceil(h.L + clocks.delta_mt) for s in streams for h in hop_times(s, network))
    for s in streams:
        for k, key in enumerate(s.route):
            idx[(s.id, key)] = len(vars_)
            vars_.append(OffsetVar(s.id, key, hp if k == 0 else hp + slack))
    hard: list[DiffConstraint] = []
    lat: list[LatencyDef] = []
    reason = None
    for s in streams:
        ids = [idx[(s.id, key)] for key in s.route]
        chain = chain_offsets(method, s, network, clocks)
        for k in range(1, len(ids)):
            gap = chain[k] - chain[k - 1]
            hard.append(DiffConstraint(ids[k - 1], ids[k], -gap, f"consecutive {s.id}#{k}"))
            if method.adjusts:
                hard.append(DiffConstraint(ids[k], ids[k - 1], gap, f"pinned {s.id}#{k}"))
        const = latency_constant(method, s, network, clocks)
        lmin = tb.frac_mt(min_e2e_latency(s, network))
        dl = tb.frac_mt(s.deadline)
        if method.adjusts:
            if lmin > dl and reason is None:
                reason = f"stream {s.id}: minimum latency {float(lmin):.2f} mt exceeds deadline {float(dl):.2f} mt"
        else:
            if len(ids) > 1:
                hard.append(DiffConstraint(ids[-1], ids[0], floor(dl - const), f"deadline {s.id}"))
                hard.append(DiffConstraint(ids[0], ids[-1], -ceil(lmin - const), f"min-latency {s.id}"))
            elif const > dl and reason is None:
                reason = f"stream {s.id}: latency exceeds deadline"
        lat.append(LatencyDef(s.id, ids[0], ids[-1], const, lmin, dl, method.adjusts))

    by_link: dict[tuple, list[StreamSpec]] = {}
    for s in streams:
        for key in s.route:
            by_link.setdefault(key, []).append(s)
    disj: list[Disjunction] = []
    for key in sorted(by_link):
        users = by_link[key]
        for si, sj in combinations(users, 2):
            i, j = idx[(si.id, key)], idx[(sj.id, key)]
            hard.append(DiffConstraint(i, j, hp - 1, f"non-overlap {si.id}/{sj.id}@{key[0]}->{key[1]}"))
            hard.append(DiffConstraint(j, i, hp - 1, f"non-overlap {sj.id}/{si.id}@{key[0]}->{key[1]}"))
            disj.extend(_duration_disjunctions(method, si, sj, key, i, j, hp, network, clocks))
        for si, sj in combinations(users, 2):
            ki, kj = si.route.index(key), sj.route.index(key)
            if ki == 0 or kj == 0 or si.route[ki - 1] == sj.route[kj - 1]:
                continue
            disj.extend(_arrival_disjunctions(method, si, sj, key, si.route[ki - 1], sj.route[kj - 1],
                                              idx, network, clocks))
    return ProblemInstance(method, hp, vars_, hard, disj, lat, list(streams), reason, tb.mt_ps)


def _duration_disjunctions(method, si, sj, key, i, j, hp, network, clocks):
    mt = network.timebase.mt_ps
    ti, tj = si.period // mt, sj.period // mt
    lcm = math.lcm(ti, tj)
    sep_i = separation(method, si, key, network, clocks)
    sep_j = separation(method, sj, key, network, clocks)
    reach = hp - 1
    kmax = (hp + lcm + max(sep_i, sep_j)) // lcm + 1
    out = []
    for alpha in range(lcm // ti):
        for beta in range(lcm // tj):
            for k in sorted(range(-kmax, kmax + 1), key=lambda v: (abs(v), v)):
                shift = k * lcm
                b_left = alpha * ti - beta * tj - shift - sep_j  # phi_j - phi_i <= b_left
                b_right = beta * tj + shift - alpha * ti - sep_i  # phi_i - phi_j <= b_right
                if k:
                    if b_left >= reach or b_right >= reach:
                        continue  # one side implied by the non-overlap bound
                tag = "sched-duration" if k == 0 else "sched-duration-wrap"
                out.append(Disjunction(
                    (DiffConstraint(j, i, b_left, tag),),
                    (DiffConstraint(i, j, b_right, tag),),
                    f"{tag} {si.id}/{sj.id} a={alpha} b={beta} k={k}", key))
    return out


def _arrival_disjunctions(method, si, sj, key, in_i, in_j, idx, network, clocks):
    mt = network.timebase.mt_ps
    ti, tj = si.period // mt, sj.period // mt
    lcm = math.lcm(ti, tj)
    oi, oj = idx[(si.id, key)], idx[(sj.id, key)]
    ii, ij = idx[(si.id, in_i)], idx[(sj.id, in_j)]
    out = []
    for alpha in range(lcm // ti):
        for beta in range(lcm // tj):
            left = kappa_frame_arrival(method, si, sj, in_j, alpha, beta, network, clocks)
            right = kappa_frame_arrival(method, sj, si, in_i, beta, alpha, network, clocks)
            out.append(Disjunction(
                (DiffConstraint(oi, ij, left, "frame-arrival"),),
                (DiffConstraint(oj, ii, right, "frame-arrival"),),
                f"frame-arrival {si.id}/{sj.id} a={alpha} b={beta}", key))
    return out
