"""Network, stream and clock model.

All exact times are integer picoseconds. Schedule quantities (offsets,
durations, hyperperiod) are integer macroticks. Clock drift is an exact
``Fraction`` in parts per million.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import reduce
from typing import Iterable, Sequence

PS_PER_NS = 1_000
PS_PER_US = 1_000_000
PS_PER_S = 1_000_000_000_000


class ModelError(ValueError):
    """Inconsistent network or stream description."""


class UnitError(ModelError):
    """A time value is not representable in the configured macrotick."""


class Method(str, Enum):
    WCD = "WCD"
    WCA = "WCA"
    NCD = "NCD"
    NCA = "NCA"

    @property
    def adjusts(self) -> bool:
        """True for the adjustment methods (zero queuing, widened windows)."""
        return self in (Method.WCA, Method.NCA)

    @property
    def uses_drift(self) -> bool:
        return self in (Method.NCD, Method.NCA)


class DeviceKind(str, Enum):
    END_STATION = "end-station"
    SWITCH = "switch"


@dataclass(frozen=True)
class TimeBase:
    macrotick_ns: int = 100

    def __post_init__(self):
        if self.macrotick_ns <= 0:
            raise ModelError("macrotick_ns must be positive")

    @property
    def mt_ps(self) -> int:
        return self.macrotick_ns * PS_PER_NS

    def to_mt(self, ps: int) -> int:
        """Exact conversion; raises if ``ps`` is not a whole number of macroticks."""
        q, r = divmod(ps, self.mt_ps)
        if r:
            raise UnitError(f"{ps} ps is not a multiple of the {self.macrotick_ns} ns macrotick")
        return q

    def frac_mt(self, ps) -> Fraction:
        return Fraction(ps) / self.mt_ps


@dataclass(frozen=True)
class Device:
    id: str
    kind: DeviceKind = DeviceKind.SWITCH
    processing_delay: int = 0  # ps
    drift_ppm: Fraction = Fraction(0)
    is_grandmaster: bool = False

    def __post_init__(self):
        if self.processing_delay < 0:
            raise ModelError(f"device {self.id}: negative processing delay")
        object.__setattr__(self, "drift_ppm", Fraction(self.drift_ppm))


@dataclass(frozen=True)
class Link:
    src: str
    dst: str
    speed_bps: int = 1_000_000_000
    propagation_delay: int = 0  # ps

    def __post_init__(self):
        if self.speed_bps <= 0:
            raise ModelError(f"link {self.src}->{self.dst}: speed must be positive")
        if self.propagation_delay < 0:
            raise ModelError(f"link {self.src}->{self.dst}: negative propagation delay")

    @property
    def key(self) -> tuple[str, str]:
        return (self.src, self.dst)

    def __str__(self) -> str:
        return f"{self.src}->{self.dst}"


@dataclass(frozen=True)
class ClockSyncConfig:
    """Synchronisation parameters.

    ``delta`` is the worst-case inter-device error in ps; ``None`` means
    derive it from the device drifts (max pairwise |rho_a - rho_b| * Ts).
    """

    sync_period: int = 125_000_000_000  # ps, 125 ms
    delta: Fraction | None = None
    psi: int = 1

    def __post_init__(self):
        if self.sync_period <= 0:
            raise ModelError("sync period must be positive")
        if self.psi not in (0, 1):
            raise ModelError("psi must be 0 or 1")
        if self.delta is not None:
            object.__setattr__(self, "delta", Fraction(self.delta))


@dataclass(frozen=True)
class StreamSpec:
    id: str
    route: tuple[tuple[str, str], ...]
    payload_bytes: int
    period: int  # ps
    deadline: int  # ps
    on_wire_bytes: int | None = None
    transmission_time: int | None = None  # ps, overrides size/speed computation

    def __post_init__(self):
        object.__setattr__(self, "route", tuple(tuple(l) for l in self.route))
        if not self.route:
            raise ModelError(f"stream {self.id}: empty route")
        for (_, a), (b, _) in zip(self.route, self.route[1:]):
            if a != b:
                raise ModelError(f"stream {self.id}: route is not contiguous at {a}/{b}")
        if self.period <= 0 or self.deadline <= 0:
            raise ModelError(f"stream {self.id}: period and deadline must be positive")
        if self.on_wire_bytes is not None and self.on_wire_bytes < self.payload_bytes:
            raise ModelError(f"stream {self.id}: on_wire_bytes smaller than payload")

    @property
    def source(self) -> str:
        return self.route[0][0]

    @property
    def destination(self) -> str:
        return self.route[-1][1]

    @property
    def wire_bytes(self) -> int:
        return self.on_wire_bytes if self.on_wire_bytes is not None else self.payload_bytes + 54


@dataclass(frozen=True)
class FrameHop:
    stream: str
    link: tuple[str, str]
    transmission_time: int  # ps
    transport_delay: int  # ps; t + d + processing at the receiver


@dataclass
class Network:
    devices: dict[str, Device]
    links: dict[tuple[str, str], Link]
    timebase: TimeBase = field(default_factory=TimeBase)
    sync: ClockSyncConfig = field(default_factory=ClockSyncConfig)

    def __post_init__(self):
        gms = [d.id for d in self.devices.values() if d.is_grandmaster]
        if len(gms) != 1:
            raise ModelError(f"exactly one grandmaster required, found {len(gms)}")
        for a, b in self.links:
            for dev in (a, b):
                if dev not in self.devices:
                    raise ModelError(f"link {a}->{b} references unknown device {dev}")

    @classmethod
    def build(cls, devices: Iterable[Device], links: Iterable[Link], *, full_duplex=True, **kw):
        devs = {d.id: d for d in devices}
        lk: dict[tuple[str, str], Link] = {}
        for l in links:
            if l.key in lk:
                raise ModelError(f"duplicate link {l}")
            lk[l.key] = l
        if full_duplex:
            for l in list(lk.values()):
                rev = (l.dst, l.src)
                lk.setdefault(rev, Link(l.dst, l.src, l.speed_bps, l.propagation_delay))
        return cls(devs, lk, **kw)

    @property
    def grandmaster(self) -> str:
        return next(d.id for d in self.devices.values() if d.is_grandmaster)

    def link(self, key) -> Link:
        try:
            return self.links[tuple(key)]
        except KeyError:
            raise ModelError(f"unknown link {key[0]}->{key[1]}") from None

    def drift(self, dev: str) -> Fraction:
        return self.devices[dev].drift_ppm

    def with_drifts(self, drifts: dict[str, Fraction]) -> "Network":
        devs = {k: Device(d.id, d.kind, d.processing_delay, Fraction(drifts.get(k, d.drift_ppm)),
                          d.is_grandmaster) for k, d in self.devices.items()}
        return Network(devs, dict(self.links), self.timebase, self.sync)

    def with_sync(self, sync: ClockSyncConfig) -> "Network":
        return Network(dict(self.devices), dict(self.links), self.timebase, sync)

    def validate_stream(self, s: StreamSpec) -> None:
        for key in s.route:
            self.link(key)
        if self.devices[s.source].kind is not DeviceKind.END_STATION:
            raise ModelError(f"stream {s.id}: source {s.source} is not an end-station")
        if self.devices[s.destination].kind is not DeviceKind.END_STATION:
            raise ModelError(f"stream {s.id}: destination {s.destination} is not an end-station")


def compute_hyperperiod(periods: Sequence[int], timebase: TimeBase = TimeBase()) -> int:
    """LCM of ``periods`` (ps) expressed in macroticks."""
    if not periods:
        raise ModelError("hyperperiod of an empty period list")
    mts = [timebase.to_mt(p) for p in periods]
    return reduce(math.lcm, mts)


def frame_repetitions(stream: StreamSpec, hyperperiod_mt: int, timebase: TimeBase = TimeBase()) -> int:
    period = timebase.to_mt(stream.period)
    q, r = divmod(hyperperiod_mt, period)
    if r:
        raise ModelError(f"hyperperiod {hyperperiod_mt} mt not divisible by period of {stream.id}")
    return q


def transmission_time(stream: StreamSpec, link: Link) -> int:
    """Frame transmission time in ps (rounded up to a whole ps)."""
    if stream.transmission_time is not None:
        return stream.transmission_time
    return -(-stream.wire_bytes * 8 * PS_PER_S // link.speed_bps)


def frame_hop(stream: StreamSpec, key, network: Network) -> FrameHop:
    key = tuple(key)
    if key not in stream.route:
        raise ModelError(f"link {key} not on route of {stream.id}")
    link = network.link(key)
    t = transmission_time(stream, link)
    p = network.devices[link.dst].processing_delay
    return FrameHop(stream.id, key, t, t + link.propagation_delay + p)


def transport_delay(stream: StreamSpec, key, network: Network) -> int:
    """t + propagation + processing at the receiving device, in ps."""
    return frame_hop(stream, key, network).transport_delay


def min_e2e_latency(stream: StreamSpec, network: Network) -> int:
    """Latency without queuing: from first transmission start to reception on the last link."""
    total = 0
    for i, key in enumerate(stream.route):
        link = network.link(key)
        total += transmission_time(stream, link) + link.propagation_delay
        if i < len(stream.route) - 1:
            total += network.devices[link.dst].processing_delay
    return total


def hyperperiod_of(streams: Sequence[StreamSpec], timebase: TimeBase) -> int:
    return compute_hyperperiod([s.period for s in streams], timebase)
