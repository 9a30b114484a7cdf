"""Topology, deployment and scenario documents.

All three kinds are JSON objects with a closed key set: unknown keys are
schema errors. Parsing checks structure only; cross-document consistency is
checked by :func:`validate`, which collects every finding instead of stopping
at the first.
"""

from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass, field
from typing import Any

from .catalog import VNF_KINDS, FRONTHAUL_BRIDGE, split_option_of
from .netmodel import check_fronthaul
from .slicing import DEFAULT_POOL_RBS


class ManifestError(ValueError):
    def __init__(self, message: str, location: str = "") -> None:
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class DocumentSyntaxError(ManifestError):
    """The text is not well-formed JSON (or not UTF-8)."""


class SchemaError(ManifestError):
    """A field is missing, duplicated, ill-typed or out of its domain."""


# --- documents -------------------------------------------------------------


@dataclass
class Node:
    name: str
    labels: dict[str, str] = field(default_factory=dict)
    role: str = "worker"


@dataclass
class Bridge:
    name: str
    bandwidth: float
    delay: int = 0
    loss: float = 0.0


@dataclass
class Link:
    a: str
    b: str


@dataclass
class IpPools:
    pod_cidr: str
    ue_cidr: str


@dataclass
class TopologyDoc:
    nodes: list[Node]
    bridges: list[Bridge]
    links: list[Link]
    ip_pools: IpPools

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def bridge(self, name: str) -> Bridge:
        for b in self.bridges:
            if b.name == name:
                return b
        raise KeyError(name)


@dataclass
class InitGate:
    target_ip: str
    target_port: int
    retries: int = 100
    interval: int = 10  # seconds


@dataclass
class DeploymentDoc:
    name: str
    vnf_kind: str
    node_selector: dict[str, str] = field(default_factory=dict)
    static_ip: str | None = None
    ports: list[int] = field(default_factory=list)
    env: dict[str, str] = field(default_factory=dict)
    config_map: str | None = None
    init_gates: list[InitGate] = field(default_factory=list)
    command: str | None = None


@dataclass
class BridgeSettings:
    bandwidth: float | None = None
    delay: int | None = None
    loss: float | None = None


@dataclass
class SliceSpec:
    slice_id: int
    rb: int
    ue_names: list[str] = field(default_factory=list)


@dataclass
class Probe:
    kind: str  # "download" | "rtt"
    src: str
    dst: str | None = None
    external_host: str | None = None
    payload_bytes: int | None = None
    expected: dict[str, float] = field(default_factory=dict)
    tolerance: float | None = None

    @property
    def target(self) -> str:
        return self.dst if self.dst is not None else str(self.external_host)


@dataclass
class ScenarioDoc:
    name: str
    deployments: list[DeploymentDoc | str] = field(default_factory=list)
    bridge_overrides: dict[str, BridgeSettings] = field(default_factory=dict)
    slices: list[SliceSpec] | None = None
    probes: list[Probe] = field(default_factory=list)
    calibration_profile: str = "nominal"
    duration: int = 300  # seconds

    def inline_deployments(self) -> list[DeploymentDoc]:
        return [d for d in self.deployments if isinstance(d, DeploymentDoc)]


@dataclass(frozen=True)
class Finding:
    code: str
    message: str
    location: str


@dataclass
class ValidationReport:
    errors: list[Finding] = field(default_factory=list)
    warnings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def error(self, code: str, location: str, message: str) -> None:
        self.errors.append(Finding(code, message, location))

    def warn(self, code: str, location: str, message: str) -> None:
        self.warnings.append(Finding(code, message, location))

    def lines(self) -> list[str]:
        out = [f"ERROR {f.code} {f.location}: {f.message}" for f in self.errors]
        out += [f"WARNING {f.code} {f.location}: {f.message}" for f in self.warnings]
        return out


# --- field helpers ---------------------------------------------------------


def _load(text: bytes | str) -> Any:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DocumentSyntaxError(f"not UTF-8: {exc}") from None
    try:
        return json.loads(text)
    except (json.JSONDecodeError, RecursionError) as exc:
        raise DocumentSyntaxError(str(exc)) from None


def _obj(value: Any, where: str, required: set[str], optional: set[str]) -> dict:
    if not isinstance(value, dict):
        raise SchemaError("expected an object", where)
    unknown = sorted(set(value) - required - optional)
    if unknown:
        raise SchemaError(f"unknown key(s) {', '.join(unknown)}", where)
    missing = sorted(required - set(value))
    if missing:
        raise SchemaError(f"missing key(s) {', '.join(missing)}", where)
    return value


def _str(value: Any, where: str) -> str:
    if not isinstance(value, str) or not value:
        raise SchemaError("expected a non-empty string", where)
    return value


def _opt_str(value: Any, where: str) -> str | None:
    return None if value is None else _str(value, where)


def _int(value: Any, where: str, lo: int | None = None, hi: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError("expected an integer", where)
    if (lo is not None and value < lo) or (hi is not None and value > hi):
        raise SchemaError(f"{value} outside [{lo}, {hi}]", where)
    return value


def _num(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError("expected a number", where)
    if value != value or value in (float("inf"), float("-inf")):
        raise SchemaError("expected a finite number", where)
    return value


def _bandwidth(value: Any, where: str) -> float:
    v = _num(value, where)
    if v <= 0:
        raise SchemaError(f"bandwidth must be > 0, got {v}", where)
    return v


def _delay(value: Any, where: str) -> int:
    return _int(value, where, lo=0)


def _loss(value: Any, where: str) -> float:
    v = _num(value, where)
    if not 0 <= v <= 1:
        raise SchemaError(f"loss must be in [0, 1], got {v}", where)
    return v


def _str_map(value: Any, where: str) -> dict[str, str]:
    if not isinstance(value, dict):
        raise SchemaError("expected an object of strings", where)
    for k, v in value.items():
        if not isinstance(v, str):
            raise SchemaError("expected a string value", f"{where}.{k}")
    return dict(value)


def _list(value: Any, where: str) -> list:
    if not isinstance(value, list):
        raise SchemaError("expected a list", where)
    return value


def _ip(value: Any, where: str) -> str:
    s = _str(value, where)
    try:
        return str(ipaddress.IPv4Address(s))
    except ValueError:
        raise SchemaError(f"not an IPv4 address: {s!r}", where) from None


def _cidr(value: Any, where: str) -> str:
    s = _str(value, where)
    try:
        return str(ipaddress.IPv4Network(s, strict=True))
    except ValueError:
        raise SchemaError(f"not an IPv4 network: {s!r}", where) from None


# --- topology --------------------------------------------------------------


def topology_from_obj(raw: Any, where: str = "topology") -> TopologyDoc:
    raw = _obj(raw, where, {"nodes", "bridges", "ip_pools"}, {"links"})
    nodes: list[Node] = []
    seen: set[str] = set()
    for i, item in enumerate(_list(raw["nodes"], f"{where}.nodes")):
        loc = f"{where}.nodes[{i}]"
        item = _obj(item, loc, {"name"}, {"labels", "role"})
        name = _str(item["name"], f"{loc}.name")
        role = item.get("role", "worker")
        if role not in ("master", "worker"):
            raise SchemaError(f"role must be master or worker, got {role!r}", f"{loc}.role")
        if name in seen:
            raise SchemaError(f"duplicate name {name!r}", f"{loc}.name")
        seen.add(name)
        nodes.append(Node(name, _str_map(item.get("labels", {}), f"{loc}.labels"), role))
    bridges: list[Bridge] = []
    for i, item in enumerate(_list(raw["bridges"], f"{where}.bridges")):
        loc = f"{where}.bridges[{i}]"
        item = _obj(item, loc, {"name", "bandwidth"}, {"delay", "loss"})
        name = _str(item["name"], f"{loc}.name")
        if name in seen:
            raise SchemaError(f"duplicate name {name!r}", f"{loc}.name")
        seen.add(name)
        bridges.append(
            Bridge(
                name,
                _bandwidth(item["bandwidth"], f"{loc}.bandwidth"),
                _delay(item.get("delay", 0), f"{loc}.delay"),
                _loss(item.get("loss", 0.0), f"{loc}.loss"),
            )
        )
    links: list[Link] = []
    for i, item in enumerate(_list(raw.get("links", []), f"{where}.links")):
        loc = f"{where}.links[{i}]"
        item = _obj(item, loc, {"endpoint-a", "endpoint-b"}, set())
        a = _str(item["endpoint-a"], f"{loc}.endpoint-a")
        b = _str(item["endpoint-b"], f"{loc}.endpoint-b")
        for end, key in ((a, "endpoint-a"), (b, "endpoint-b")):
            if end not in seen:
                raise SchemaError(f"unknown endpoint {end!r}", f"{loc}.{key}")
        links.append(Link(a, b))
    pools = _obj(raw["ip_pools"], f"{where}.ip_pools", {"pod_cidr", "ue_cidr"}, set())
    ip_pools = IpPools(
        _cidr(pools["pod_cidr"], f"{where}.ip_pools.pod_cidr"),
        _cidr(pools["ue_cidr"], f"{where}.ip_pools.ue_cidr"),
    )
    return TopologyDoc(nodes, bridges, links, ip_pools)


def parse_topology(text: bytes | str) -> TopologyDoc:
    return topology_from_obj(_load(text))


def topology_to_obj(doc: TopologyDoc) -> dict:
    return {
        "nodes": [{"name": n.name, "labels": dict(n.labels), "role": n.role} for n in doc.nodes],
        "bridges": [
            {"name": b.name, "bandwidth": b.bandwidth, "delay": b.delay, "loss": b.loss}
            for b in doc.bridges
        ],
        "links": [{"endpoint-a": l.a, "endpoint-b": l.b} for l in doc.links],
        "ip_pools": {"pod_cidr": doc.ip_pools.pod_cidr, "ue_cidr": doc.ip_pools.ue_cidr},
    }


# --- deployment ------------------------------------------------------------

_DEPLOYMENT_OPTIONAL = {
    "node_selector", "static_ip", "ports", "env", "config_map", "init_gates", "command",
}


def deployment_from_obj(raw: Any, where: str = "deployment") -> DeploymentDoc:
    raw = _obj(raw, where, {"name", "vnf_kind"}, _DEPLOYMENT_OPTIONAL)
    kind = _str(raw["vnf_kind"], f"{where}.vnf_kind")
    if kind not in VNF_KINDS:
        raise SchemaError(f"unknown vnf_kind {kind!r}", f"{where}.vnf_kind")
    ports: list[int] = []
    for i, p in enumerate(_list(raw.get("ports", []), f"{where}.ports")):
        p = _int(p, f"{where}.ports[{i}]", 1, 65535)
        if p in ports:
            raise SchemaError(f"duplicate port {p}", f"{where}.ports[{i}]")
        ports.append(p)
    gates: list[InitGate] = []
    for i, g in enumerate(_list(raw.get("init_gates", []), f"{where}.init_gates")):
        loc = f"{where}.init_gates[{i}]"
        g = _obj(g, loc, {"target_ip", "target_port"}, {"retries", "interval"})
        gates.append(
            InitGate(
                _ip(g["target_ip"], f"{loc}.target_ip"),
                _int(g["target_port"], f"{loc}.target_port", 1, 65535),
                _int(g.get("retries", 100), f"{loc}.retries", lo=1),
                _int(g.get("interval", 10), f"{loc}.interval", lo=1),
            )
        )
    static_ip = raw.get("static_ip")
    return DeploymentDoc(
        name=_str(raw["name"], f"{where}.name"),
        vnf_kind=kind,
        node_selector=_str_map(raw.get("node_selector", {}), f"{where}.node_selector"),
        static_ip=None if static_ip is None else _ip(static_ip, f"{where}.static_ip"),
        ports=ports,
        env=_str_map(raw.get("env", {}), f"{where}.env"),
        config_map=_opt_str(raw.get("config_map"), f"{where}.config_map"),
        init_gates=gates,
        command=_opt_str(raw.get("command"), f"{where}.command"),
    )


def parse_deployment(text: bytes | str) -> DeploymentDoc:
    return deployment_from_obj(_load(text))


def deployment_to_obj(doc: DeploymentDoc) -> dict:
    out: dict[str, Any] = {
        "name": doc.name,
        "vnf_kind": doc.vnf_kind,
        "node_selector": dict(doc.node_selector),
        "ports": list(doc.ports),
        "env": dict(doc.env),
        "init_gates": [
            {"target_ip": g.target_ip, "target_port": g.target_port,
             "retries": g.retries, "interval": g.interval}
            for g in doc.init_gates
        ],
    }
    for key in ("static_ip", "config_map", "command"):
        if getattr(doc, key) is not None:
            out[key] = getattr(doc, key)
    return out


# --- scenario --------------------------------------------------------------


def _bridge_settings(raw: Any, where: str) -> BridgeSettings:
    raw = _obj(raw, where, set(), {"bandwidth", "delay", "loss"})
    return BridgeSettings(
        bandwidth=None if "bandwidth" not in raw else _bandwidth(raw["bandwidth"], f"{where}.bandwidth"),
        delay=None if "delay" not in raw else _delay(raw["delay"], f"{where}.delay"),
        loss=None if "loss" not in raw else _loss(raw["loss"], f"{where}.loss"),
    )


def _probe(raw: Any, where: str) -> Probe:
    raw = _obj(
        raw, where, {"kind", "src"},
        {"dst", "external_host", "payload_bytes", "expected", "tolerance"},
    )
    kind = raw["kind"]
    if kind not in ("download", "rtt"):
        raise SchemaError(f"kind must be download or rtt, got {kind!r}", f"{where}.kind")
    if ("dst" in raw) == ("external_host" in raw):
        raise SchemaError("exactly one of dst or external_host is required", where)
    payload = raw.get("payload_bytes")
    if payload is not None:
        # zero is accepted here and rejected by the probe itself (InvalidSize)
        payload = _int(payload, f"{where}.payload_bytes", lo=0)
    expected: dict[str, float] = {}
    exp_raw = _obj(raw.get("expected", {}), f"{where}.expected", set(), {"bitrate_mbps", "rtt_ms"})
    for metric, value in exp_raw.items():
        expected[metric] = _num(value, f"{where}.expected.{metric}")
    tol = raw.get("tolerance")
    if tol is not None:
        tol = _num(tol, f"{where}.tolerance")
        if tol < 0:
            raise SchemaError("tolerance must be >= 0", f"{where}.tolerance")
    return Probe(
        kind=kind,
        src=_str(raw["src"], f"{where}.src"),
        dst=_opt_str(raw.get("dst"), f"{where}.dst"),
        external_host=_opt_str(raw.get("external_host"), f"{where}.external_host"),
        payload_bytes=payload,
        expected=expected,
        tolerance=tol,
    )


def scenario_from_obj(raw: Any, where: str = "scenario") -> ScenarioDoc:
    raw = _obj(
        raw, where, {"name"},
        {"deployments", "bridge_overrides", "slices", "probes", "calibration_profile", "duration"},
    )
    deployments: list[DeploymentDoc | str] = []
    for i, d in enumerate(_list(raw.get("deployments", []), f"{where}.deployments")):
        loc = f"{where}.deployments[{i}]"
        deployments.append(_str(d, loc) if isinstance(d, str) else deployment_from_obj(d, loc))
    overrides_raw = raw.get("bridge_overrides", {})
    if not isinstance(overrides_raw, dict):
        raise SchemaError("expected an object", f"{where}.bridge_overrides")
    overrides = {
        name: _bridge_settings(v, f"{where}.bridge_overrides.{name}")
        for name, v in overrides_raw.items()
    }
    slices = None
    if raw.get("slices") is not None:
        slices = []
        ids: set[int] = set()
        for i, s in enumerate(_list(raw["slices"], f"{where}.slices")):
            loc = f"{where}.slices[{i}]"
            s = _obj(s, loc, {"slice_id", "rb"}, {"ue_names"})
            sid = _int(s["slice_id"], f"{loc}.slice_id")
            if sid in ids:
                raise SchemaError(f"duplicate slice_id {sid}", f"{loc}.slice_id")
            ids.add(sid)
            ues = [_str(u, f"{loc}.ue_names[{j}]") for j, u in enumerate(_list(s.get("ue_names", []), f"{loc}.ue_names"))]
            slices.append(SliceSpec(sid, _int(s["rb"], f"{loc}.rb", lo=0), ues))
    probes = [_probe(p, f"{where}.probes[{i}]") for i, p in enumerate(_list(raw.get("probes", []), f"{where}.probes"))]
    return ScenarioDoc(
        name=_str(raw["name"], f"{where}.name"),
        deployments=deployments,
        bridge_overrides=overrides,
        slices=slices,
        probes=probes,
        calibration_profile=_str(raw.get("calibration_profile", "nominal"), f"{where}.calibration_profile"),
        duration=_int(raw.get("duration", 300), f"{where}.duration", lo=1),
    )


def parse_scenario(text: bytes | str) -> ScenarioDoc:
    return scenario_from_obj(_load(text))


def scenario_to_obj(doc: ScenarioDoc) -> dict:
    out: dict[str, Any] = {
        "name": doc.name,
        "deployments": [d if isinstance(d, str) else deployment_to_obj(d) for d in doc.deployments],
        "bridge_overrides": {
            name: {k: v for k, v in vars(s).items() if v is not None}
            for name, s in doc.bridge_overrides.items()
        },
        "probes": [],
        "calibration_profile": doc.calibration_profile,
        "duration": doc.duration,
    }
    if doc.slices is not None:
        out["slices"] = [
            {"slice_id": s.slice_id, "rb": s.rb, "ue_names": list(s.ue_names)} for s in doc.slices
        ]
    for p in doc.probes:
        item: dict[str, Any] = {"kind": p.kind, "src": p.src}
        for key in ("dst", "external_host", "payload_bytes", "tolerance"):
            if getattr(p, key) is not None:
                item[key] = getattr(p, key)
        if p.expected:
            item["expected"] = dict(p.expected)
        out["probes"].append(item)
    return out


def dumps(obj: dict) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def detect_kind(raw: Any) -> str:
    """Guess the document kind of a decoded JSON object from its keys."""
    if isinstance(raw, dict):
        if "nodes" in raw:
            return "topology"
        if "vnf_kind" in raw:
            return "deployment"
        if "name" in raw:
            return "scenario"
    raise SchemaError("cannot tell document kind (topology, deployment or scenario)")


# --- cross-validation ------------------------------------------------------


def validate(
    topology: TopologyDoc,
    deployments: list[DeploymentDoc],
    scenario: ScenarioDoc | None = None,
    profiles: set[str] | None = None,
) -> ValidationReport:
    """Cross-reference and capacity checks over a parsed document set.

    The result does not depend on the order of ``deployments``: findings are
    sorted before returning.
    """
    report = ValidationReport()
    workers = [n for n in topology.nodes if n.role == "worker"]
    pod_net = ipaddress.IPv4Network(topology.ip_pools.pod_cidr)
    bridges = {b.name: b for b in topology.bridges}
    if scenario is not None:
        for name, s in scenario.bridge_overrides.items():
            if name not in bridges:
                report.error("UnknownBridge", f"scenario.bridge_overrides.{name}", f"no bridge named {name!r}")
                continue
            b = bridges[name]
            bridges[name] = Bridge(
                name,
                b.bandwidth if s.bandwidth is None else s.bandwidth,
                b.delay if s.delay is None else s.delay,
                b.loss if s.loss is None else s.loss,
            )

    by_name: dict[str, list[DeploymentDoc]] = {}
    for d in deployments:
        by_name.setdefault(d.name, []).append(d)
    static_owner: dict[str, list[str]] = {}
    for name in sorted(by_name):
        docs = by_name[name]
        loc = f"deployment:{name}"
        if len(docs) > 1:
            report.error("DuplicateDeployment", loc, f"{len(docs)} documents named {name!r}")
        d = docs[0]
        if d.vnf_kind != "UE" and not any(
            all(n.labels.get(k) == v for k, v in d.node_selector.items()) for n in workers
        ):
            sel = ", ".join(f"{k}={v}" for k, v in sorted(d.node_selector.items()))
            report.error("NoMatchingLabel", f"{loc}.node_selector", f"no worker node has labels {{{sel}}}")
        if d.static_ip is not None:
            if ipaddress.IPv4Address(d.static_ip) not in pod_net:
                report.error("StaticIpOutOfRange", f"{loc}.static_ip", f"{d.static_ip} not in {pod_net}")
            static_owner.setdefault(d.static_ip, []).append(name)
        split = split_option_of(d)
        if split is not None:
            fh = bridges.get(FRONTHAUL_BRIDGE)
            if fh is None:
                report.error("MissingFronthaul", loc, f"split {split} needs a bridge named {FRONTHAUL_BRIDGE}")
            else:
                violation = check_fronthaul(split, fh.bandwidth)
                if violation is not None:
                    report.error("FronthaulTooSlow", loc, violation)
    for ip, owners in sorted(static_owner.items()):
        if len(owners) > 1:
            report.error("DuplicateStaticIp", f"deployment:{owners[1]}.static_ip", f"{ip} also requested by {owners[0]}")

    known_ips: dict[str, DeploymentDoc] = {}
    for name in sorted(by_name):
        d = by_name[name][0]
        if d.static_ip:
            known_ips.setdefault(d.static_ip, d)
    for name in sorted(by_name):
        d = by_name[name][0]
        for i, g in enumerate(d.init_gates):
            target = known_ips.get(g.target_ip)
            loc = f"deployment:{name}.init_gates[{i}]"
            if target is None:
                report.warn("UnresolvedGate", loc, f"no deployment has static_ip {g.target_ip}; gate can never open")
            elif g.target_port not in target.ports:
                report.warn("ClosedGatePort", loc, f"{target.name} does not list port {g.target_port}")

    if scenario is not None:
        names = set(by_name)
        ues = {d.name for d in deployments if d.vnf_kind == "UE"}
        for i, p in enumerate(scenario.probes):
            loc = f"scenario:{scenario.name}.probes[{i}]"
            if p.src not in names:
                report.error("UnknownEndpoint", f"{loc}.src", f"{p.src!r} is not a deployed entity or UE")
            elif p.src not in ues:
                report.error("ProbeSourceNotUe", f"{loc}.src", f"{p.src!r} is not a UE")
            if p.dst is not None and p.dst not in names:
                report.error("UnknownEndpoint", f"{loc}.dst", f"{p.dst!r} is not a deployed entity or UE")
        if scenario.slices is not None:
            owner: dict[str, int] = {}
            total = 0
            for s in scenario.slices:
                total += s.rb
                for ue in s.ue_names:
                    loc = f"scenario:{scenario.name}.slices[{s.slice_id}]"
                    if ue in owner:
                        report.error("SliceUeOverlap", loc, f"{ue} already in slice {owner[ue]}")
                    owner[ue] = s.slice_id
                    if ue not in ues:
                        report.error("UnknownUe", loc, f"{ue!r} is not a UE deployment")
            if total > DEFAULT_POOL_RBS:
                report.error(
                    "ExceedsPool", f"scenario:{scenario.name}.slices",
                    f"{total} RBs requested, pool has {DEFAULT_POOL_RBS}",
                )
        if profiles is not None and scenario.calibration_profile not in profiles:
            report.error(
                "UnknownProfile", f"scenario:{scenario.name}.calibration_profile",
                f"no calibration profile named {scenario.calibration_profile!r}",
            )

    report.errors.sort(key=lambda f: (f.location, f.code, f.message))
    report.warnings.sort(key=lambda f: (f.location, f.code, f.message))
    return report
