"""Grids over sync period and maximum relative drift."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from fractions import Fraction

from .constraints import Clocks, chain_offsets, hop_times, resolve_clocks
from .gcl import infeasible_ports, schedulability_cost
from .model import PS_PER_US, ClockSyncConfig, Method, Network

PS_PER_MS = 1_000_000_000


@dataclass
class SweepSpec:
    ts_min_ms: Fraction = Fraction(10)
    ts_max_ms: Fraction = Fraction(500)
    ts_steps: int = 20
    drift_min_ppm: Fraction = Fraction(10)
    drift_max_ppm: Fraction = Fraction(200)
    drift_steps: int = 20
    methods: tuple = ("WCA", "NCA")
    mode: str = "sc"  # sc | latency

    def __post_init__(self):
        self.ts_min_ms, self.ts_max_ms = Fraction(self.ts_min_ms), Fraction(self.ts_max_ms)
        self.drift_min_ppm, self.drift_max_ppm = Fraction(self.drift_min_ppm), Fraction(self.drift_max_ppm)
        if min(self.ts_min_ms, self.drift_min_ppm) <= 0:
            raise ValueError("sweep ranges must be positive")
        if self.ts_max_ms < self.ts_min_ms or self.drift_max_ppm < self.drift_min_ppm:
            raise ValueError("sweep range upper end below lower end")
        if self.ts_steps < 2 or self.drift_steps < 2:
            raise ValueError("sweep needs at least 2 steps per axis")
        if self.mode not in ("sc", "latency"):
            raise ValueError(f"unknown sweep mode {self.mode}")
        self.methods = tuple(Method(m).value for m in self.methods)

    def ts_axis(self) -> list[int]:
        """Sync periods in ps (rounded to whole ps)."""
        return [round((self.ts_min_ms + (self.ts_max_ms - self.ts_min_ms) * k / (self.ts_steps - 1)) * PS_PER_MS)
                for k in range(self.ts_steps)]

    def drift_axis(self) -> list[Fraction]:
        return [self.drift_min_ppm + (self.drift_max_ppm - self.drift_min_ppm) * k / (self.drift_steps - 1)
                for k in range(self.drift_steps)]


@dataclass(frozen=True)
class Cell:
    sync_period: int  # ps
    drift_ppm: Fraction
    method: str
    value: Fraction | None  # None = infeasible

    def row(self):
        v = "INFEASIBLE" if self.value is None else f"{float(self.value):.6f}"
        return [f"{self.sync_period / PS_PER_MS:g}", f"{float(self.drift_ppm):g}", self.method, v]


def _cell_network(network: Network, ts: int, delta=None) -> Network:
    return network.with_sync(ClockSyncConfig(ts, delta, network.sync.psi))


def extreme_drifts(network: Network, r: Fraction):
    """Every assignment of +-r/2 to the devices (so any pair differs by at most r)."""
    devs = sorted(network.devices)
    half = Fraction(r) / 2
    for signs in itertools.product((-1, 1), repeat=len(devs)):
        yield {d: s * half for d, s in zip(devs, signs)}


def sc_cell(network, streams, method, ts, r) -> Fraction | None:
    method = Method(method)
    if method in (Method.WCD, Method.WCA):
        net = _cell_network(network, ts, Fraction(r) * ts / 1_000_000)
        if infeasible_ports(streams, net, method):
            return None
        return schedulability_cost(streams, net, method)
    worst = Fraction(0)
    for drifts in extreme_drifts(network, r):
        net = _cell_network(network.with_drifts(drifts), ts, Fraction(r) * ts / 1_000_000)
        if infeasible_ports(streams, net, method):
            return None
        worst = max(worst, schedulability_cost(streams, net, method))
    return worst


def scaled_drifts(network: Network, r: Fraction) -> dict:
    """The network's drift pattern scaled so its largest pairwise difference equals ``r``."""
    vals = {k: d.drift_ppm for k, d in network.devices.items()}
    spread = max(vals.values()) - min(vals.values())
    if spread == 0:
        return {k: Fraction(0) for k in vals}
    return {k: v * Fraction(r) / spread for k, v in vals.items()}


def latency_upper_bound(method, stream, network: Network, clocks: Clocks) -> Fraction:
    """Worst-case latency (mt) of the contention-free chain for a delay method."""
    chain = chain_offsets(Method(method), stream, network, clocks)
    last = hop_times(stream, network)[-1]
    return chain[-1] + last.t + last.d


def latency_gap_cell(network, streams, ts, r) -> Fraction:
    """max over streams of UB(WCD) - UB(NCD), in microseconds."""
    net = _cell_network(network.with_drifts(scaled_drifts(network, r)), ts, Fraction(r) * ts / 1_000_000)
    clocks = resolve_clocks(net)
    mt_us = Fraction(net.timebase.mt_ps, PS_PER_US)
    gap = max(latency_upper_bound(Method.WCD, s, net, clocks) - latency_upper_bound(Method.NCD, s, net, clocks)
              for s in streams)
    return gap * mt_us


def run_sweep(spec: SweepSpec, network: Network, streams) -> list[Cell]:
    cells = []
    for ts in spec.ts_axis():
        for r in spec.drift_axis():
            if spec.mode == "latency":
                cells.append(Cell(ts, r, "WCD-NCD", latency_gap_cell(network, streams, ts, r)))
                continue
            for m in spec.methods:
                cells.append(Cell(ts, r, m, sc_cell(network, streams, m, ts, r)))
    cells.sort(key=lambda c: (c.method, c.sync_period, c.drift_ppm))
    return cells


def cells_to_csv(cells) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Ts_ms", "drift_ppm", "method", "value"])
    for c in cells:
        w.writerow(c.row())
    return buf.getvalue()


def grid(cells, method) -> dict:
    return {(c.sync_period, c.drift_ppm): c.value for c in cells if c.method == method}
