"""Scenario files (YAML) and the built-in three-switch case study."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import yaml

from .model import (PS_PER_NS, ClockSyncConfig, Device, DeviceKind, Link, Method, ModelError,
                    Network, StreamSpec, TimeBase)


class ScenarioError(ValueError):
    def __init__(self, msg, line=None, source=None):
        self.line = line
        where = f"{source or '<scenario>'}:{line}: " if line else (f"{source}: " if source else "")
        super().__init__(where + msg)


@dataclass
class SimSettings:
    duration: int = 1_000_000_000_000  # ps
    sync_phase: int = 0  # ps
    sync_phase_steps: int = 16


@dataclass
class Scenario:
    name: str
    network: Network
    streams: list[StreamSpec]
    method: Method | None = None
    sim: SimSettings = field(default_factory=SimSettings)
    drift_bound_ppm: Fraction | None = None
    raw: dict = field(default_factory=dict, repr=False)

    def digest(self) -> str:
        """Hash of the resolved scenario, so equivalent spellings share a digest."""
        blob = json.dumps(scenario_to_dict(self), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_drifts(self, drifts: dict) -> "Scenario":
        raw = json.loads(json.dumps(self.raw, default=str))
        for d in raw.get("devices", []):
            if d["id"] in drifts:
                d["drift_ppm"] = str(Fraction(drifts[d["id"]]))
        return Scenario(self.name, self.network.with_drifts(drifts), list(self.streams), self.method,
                        self.sim, self.drift_bound_ppm, raw)


# ---------------------------------------------------------------------------
# YAML with line numbers

def _plain(node, lines, path=()):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = _plain(k, lines, path + ("<key>",))
            out[key] = _plain(v, lines, path + (key,))
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_plain(v, lines, path + (i,)) for i, v in enumerate(node.value)]
    return _CONSTRUCTOR.construct_object(node, deep=True)


_CONSTRUCTOR = yaml.SafeLoader("")


class _Reader:
    def __init__(self, data, lines, source):
        self.data, self.lines, self.source = data, lines, source

    def line(self, path):
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path)

    def fail(self, path, msg):
        raise ScenarioError(msg, self.line(tuple(path)), self.source)

    def get(self, obj, path, key, kind=None, required=True, default=None):
        if not isinstance(obj, dict):
            self.fail(path, f"expected a mapping at {'.'.join(map(str, path)) or 'top level'}")
        if key not in obj:
            if required:
                self.fail(path, f"missing required field '{key}'")
            return default
        v = obj[key]
        if kind is not None and not _is(v, kind):
            self.fail(path + (key,), f"field '{key}' must be {_kind_name(kind)}, got {v!r}")
        return v


def _is(v, kind):
    if kind == "int":
        return isinstance(v, int) and not isinstance(v, bool)
    if kind == "num":
        if isinstance(v, bool):
            return False
        if isinstance(v, (int, float)):
            return True
        try:
            Fraction(str(v))
            return True
        except ValueError:
            return False
    if kind == "str":
        return isinstance(v, str)
    if kind == "list":
        return isinstance(v, list)
    if kind == "dict":
        return isinstance(v, dict)
    if kind == "bool":
        return isinstance(v, bool)
    raise AssertionError(kind)


def _kind_name(kind):
    return {"int": "an integer", "num": "a number", "str": "a string", "list": "a list",
            "dict": "a mapping", "bool": "true/false"}[kind]


def _frac(v) -> Fraction:
    return Fraction(str(v)) if not isinstance(v, int) else Fraction(v)


def _ps(v, r: _Reader, path) -> int:
    """Nanoseconds (int, float or 'a/b' string) to integer ps."""
    ps = _frac(v) * PS_PER_NS
    if ps.denominator != 1:
        r.fail(path, f"time {v} ns is not a whole number of picoseconds")
    return int(ps)


def parse_scenario(text: str, source: str | None = None) -> Scenario:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                            mark.line + 1 if mark else None, source) from None
    if node is None:
        raise ScenarioError("empty scenario", None, source)
    lines: dict = {}
    data = _plain(node, lines)
    return scenario_from_dict(data, source, lines)


def load_scenario(path) -> Scenario:
    p = Path(path)
    return parse_scenario(p.read_text(), str(p))


def scenario_from_dict(data: dict, source=None, lines=None) -> Scenario:
    r = _Reader(data, lines or {}, source)
    if not isinstance(data, dict):
        r.fail((), "scenario must be a mapping")
    name = str(data.get("name", Path(source).stem if source else "scenario"))
    tbd = r.get(data, (), "timebase", "dict", required=False, default={})
    mt_ns = r.get(tbd, ("timebase",), "macrotick_ns", "int", required=False, default=100)
    try:
        tb = TimeBase(mt_ns)
    except ModelError as exc:
        r.fail(("timebase",), str(exc))

    devices = []
    seen = set()
    for i, d in enumerate(r.get(data, (), "devices", "list")):
        p = ("devices", i)
        did = str(r.get(d, p, "id"))
        if did in seen:
            r.fail(p, f"duplicate device id '{did}'")
        seen.add(did)
        kind = r.get(d, p, "kind", "str", required=False, default="switch")
        try:
            kind = DeviceKind(kind)
        except ValueError:
            r.fail(p + ("kind",), f"device kind must be end-station or switch, got '{kind}'")
        proc = r.get(d, p, "processing_delay_ns", "num", required=False, default=0)
        drift = r.get(d, p, "drift_ppm", "num", required=False, default=0)
        gm = r.get(d, p, "grandmaster", "bool", required=False, default=False)
        try:
            devices.append(Device(did, kind, _ps(proc, r, p + ("processing_delay_ns",)), _frac(drift), gm))
        except ModelError as exc:
            r.fail(p, str(exc))

    links = []
    for i, l in enumerate(r.get(data, (), "links", "list")):
        p = ("links", i)
        a, b = str(r.get(l, p, "from")), str(r.get(l, p, "to"))
        for dev in (a, b):
            if dev not in seen:
                r.fail(p, f"link references unknown device '{dev}'")
        speed = r.get(l, p, "speed_bps", "int", required=False, default=1_000_000_000)
        prop = r.get(l, p, "propagation_ns", "num", required=False, default=0)
        try:
            links.append(Link(a, b, speed, _ps(prop, r, p + ("propagation_ns",))))
        except ModelError as exc:
            r.fail(p, str(exc))

    syd = r.get(data, (), "sync", "dict", required=False, default={})
    period = _ps(r.get(syd, ("sync",), "period_ns", "num", required=False, default=125_000_000), r, ("sync",))
    delta = r.get(syd, ("sync",), "delta_ns", "num", required=False)
    psi = r.get(syd, ("sync",), "psi", "int", required=False, default=1)
    try:
        sync = ClockSyncConfig(period, None if delta is None else _frac(delta) * PS_PER_NS, psi)
        net = Network.build(devices, links, full_duplex=data.get("full_duplex", True), timebase=tb, sync=sync)
    except ModelError as exc:
        r.fail(("sync",) if "psi" in str(exc) or "sync" in str(exc) else (), str(exc))

    bound = data.get("drift_bound_ppm")
    if bound is not None:
        bound = _frac(bound)
        for i, d in enumerate(devices):
            if abs(d.drift_ppm) > bound:
                r.fail(("devices", i, "drift_ppm"), f"device {d.id}: |drift| exceeds drift_bound_ppm {bound}")

    streams = []
    sids = set()
    for i, s in enumerate(r.get(data, (), "streams", "list")):
        p = ("streams", i)
        sid = str(r.get(s, p, "id"))
        if sid in sids:
            r.fail(p, f"duplicate stream id '{sid}'")
        sids.add(sid)
        route = r.get(s, p, "route", "list")
        if len(route) < 2:
            r.fail(p + ("route",), f"stream {sid}: route needs at least two devices")
        hops = tuple((str(a), str(b)) for a, b in zip(route, route[1:]))
        for k, h in enumerate(hops):
            if h not in net.links:
                r.fail(p + ("route", k + 1), f"stream {sid}: no link {h[0]}->{h[1]}")
        tns = r.get(s, p, "t_ns", "num", required=False)
        try:
            spec = StreamSpec(
                sid, hops, r.get(s, p, "payload_bytes", "int"),
                _ps(r.get(s, p, "period_ns", "num"), r, p + ("period_ns",)),
                _ps(r.get(s, p, "deadline_ns", "num"), r, p + ("deadline_ns",)),
                r.get(s, p, "on_wire_bytes", "int", required=False),
                None if tns is None else _ps(tns, r, p + ("t_ns",)))
            tb.to_mt(spec.period)
            net.validate_stream(spec)
        except ModelError as exc:
            r.fail(p, str(exc))
        streams.append(spec)

    method = data.get("method")
    if method is not None:
        try:
            method = Method(str(method).upper())
        except ValueError:
            r.fail(("method",), f"method must be one of WCD, WCA, NCD, NCA, got '{method}'")

    simd = r.get(data, (), "simulation", "dict", required=False, default={})
    sim = SimSettings(
        _ps(r.get(simd, ("simulation",), "duration_ns", "num", required=False, default=1_000_000_000), r,
            ("simulation",)),
        _ps(r.get(simd, ("simulation",), "sync_phase_ns", "num", required=False, default=0), r, ("simulation",)),
        r.get(simd, ("simulation",), "sync_phase_steps", "int", required=False, default=16))
    return Scenario(name, net, streams, method, sim, bound, _canonical(data))


def _canonical(data):
    return json.loads(json.dumps(data, default=str))


def scenario_to_dict(sc: Scenario) -> dict:
    """Fully resolved scenario (all defaults applied), suitable for reports and re-loading."""
    net = sc.network
    tb = net.timebase
    devs = [{"id": d.id, "kind": d.kind.value, "processing_delay_ns": str(Fraction(d.processing_delay, PS_PER_NS)),
             "drift_ppm": str(d.drift_ppm), "grandmaster": d.is_grandmaster} for d in net.devices.values()]
    links = [{"from": l.src, "to": l.dst, "speed_bps": l.speed_bps,
              "propagation_ns": str(Fraction(l.propagation_delay, PS_PER_NS))}
             for l in sorted(net.links.values(), key=lambda l: l.key)]
    streams = []
    for s in sc.streams:
        e = {"id": s.id, "route": [s.route[0][0]] + [b for _, b in s.route], "payload_bytes": s.payload_bytes,
             "on_wire_bytes": s.wire_bytes, "period_ns": str(Fraction(s.period, PS_PER_NS)),
             "deadline_ns": str(Fraction(s.deadline, PS_PER_NS))}
        if s.transmission_time is not None:
            e["t_ns"] = str(Fraction(s.transmission_time, PS_PER_NS))
        streams.append(e)
    sync = {"period_ns": str(Fraction(net.sync.sync_period, PS_PER_NS)), "psi": net.sync.psi}
    if net.sync.delta is not None:
        sync["delta_ns"] = str(Fraction(net.sync.delta, PS_PER_NS))
    out = {"name": sc.name, "timebase": {"macrotick_ns": tb.macrotick_ns}, "devices": devs,
           "links": links, "full_duplex": False, "sync": sync, "streams": streams,
           "simulation": {"duration_ns": str(Fraction(sc.sim.duration, PS_PER_NS)),
                          "sync_phase_ns": str(Fraction(sc.sim.sync_phase, PS_PER_NS)),
                          "sync_phase_steps": sc.sim.sync_phase_steps}}
    if sc.method is not None:
        out["method"] = sc.method.value
    if sc.drift_bound_ppm is not None:
        out["drift_bound_ppm"] = str(sc.drift_bound_ppm)
    return out


# ---------------------------------------------------------------------------
# case study

CASE_STUDY_DRIFTS = {
    1: {"ES1": 0, "ES2": 0, "SW1": 10, "SW2": -10},
    2: {"ES1": 10, "ES2": -10, "SW1": -10, "SW2": 10},
    3: {"ES1": -5, "ES2": 5, "SW1": 5, "SW2": 5},
}


def bundled_scenarios() -> list[str]:
    return sorted(p.name for p in resources.files("tsngcl").joinpath("scenarios").iterdir()
                  if p.name.endswith(".yaml"))


def load_bundled(name: str) -> Scenario:
    f = resources.files("tsngcl").joinpath("scenarios", name)
    return parse_scenario(f.read_text(), name)


def case_study(drift_scenario: int | None = 1, method: Method | str | None = None) -> Scenario:
    """Three-stream, two-switch case study with one of the three drift assignments (None = no drift)."""
    sc = load_bundled("case_study.yaml")
    if method is not None:
        sc.method = Method(method)
    if drift_scenario is None:
        return sc
    if drift_scenario not in CASE_STUDY_DRIFTS:
        raise ValueError(f"unknown drift scenario {drift_scenario}")
    out = sc.with_drifts({k: Fraction(v) for k, v in CASE_STUDY_DRIFTS[drift_scenario].items()})
    out.name = f"{sc.name}-s{drift_scenario}"
    return out
