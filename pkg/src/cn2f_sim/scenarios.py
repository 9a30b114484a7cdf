"""Scenario runner, calibration fitting and result tables."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

from . import netmodel
from .engine import Simulator
from .manifest import (
    Bridge,
    DeploymentDoc,
    ScenarioDoc,
    TopologyDoc,
    parse_deployment,
    parse_scenario,
    parse_topology,
    validate,
)
from .netmodel import Flow, LossEntry, NoBearer, RateParams, Unreachable
from .orchestrator import ClusterState
from .slicing import RbPool, SliceConfig, SliceController, slice_of

log = logging.getLogger(__name__)

PROBE_SETTLE_MS = 10_000
DEFAULT_PAYLOAD_BYTES = 10_000_000
DEFAULT_TOLERANCE = 0.05
TRANSPORT_BRIDGE = "TN"


class InsufficientRows(ValueError):
    pass


class DeploymentStuck(RuntimeError):
    def __init__(self, blocking: list[str], at_ms: int) -> None:
        super().__init__(f"deployment stuck at {at_ms} ms: " + "; ".join(blocking))
        self.blocking = blocking


class ProbeFailed(RuntimeError):
    pass


# --- calibration ---------------------------------------------------------------


@dataclass(frozen=True)
class Table1Row:
    bandwidth: float
    delay: int
    cc_bitrate: float
    cc_rtt: float
    ec_bitrate: float
    ec_rtt: float


@dataclass(frozen=True)
class Table2Row:
    scenario: str
    rb: int
    ue: str
    bitrate: float


@dataclass
class CalibrationProfile:
    name: str
    rate_params: RateParams = field(default_factory=RateParams)
    bridge_loss: list[LossEntry] = field(default_factory=list)
    ue_efficiencies: dict[tuple[str, str], float] = field(default_factory=dict)

    def efficiency(self, ue: str, scenario: str) -> float:
        """Mb/s per RB for ``ue`` in ``scenario``.

        Falls back to the UE's mean over fitted scenarios, then to the access
        cap spread over a full RB pool.
        """
        if (ue, scenario) in self.ue_efficiencies:
            return self.ue_efficiencies[(ue, scenario)]
        known = [v for (u, _), v in sorted(self.ue_efficiencies.items()) if u == ue]
        if known:
            return sum(known) / len(known)
        return self.rate_params.access_cap / RbPool().total

    def to_obj(self) -> dict:
        p = self.rate_params
        return {
            "name": self.name,
            "rate_params": {
                "base_rtt": p.base_rtt, "delay_multiplier": p.delay_multiplier,
                "access_cap": p.access_cap, "mss": p.mss, "mathis_c": p.mathis_c,
                "window": p.window,
            },
            "bridge_loss": [vars(e).copy() for e in self.bridge_loss],
            "ue_efficiencies": [
                {"ue": ue, "scenario": sc, "efficiency": v}
                for (ue, sc), v in sorted(self.ue_efficiencies.items())
            ],
        }

    @classmethod
    def from_obj(cls, raw: dict) -> CalibrationProfile:
        return cls(
            name=raw["name"],
            rate_params=RateParams(**raw.get("rate_params", {})),
            bridge_loss=[LossEntry(**e) for e in raw.get("bridge_loss", [])],
            ue_efficiencies={
                (e["ue"], e["scenario"]): float(e["efficiency"]) for e in raw.get("ue_efficiencies", [])
            },
        )


def _tsv_rows(text: str) -> list[dict[str, str]]:
    reader = csv.DictReader(io.StringIO(text), delimiter="\t")
    return [row for row in reader if any((v or "").strip() for v in row.values())]


def read_table1(text: str) -> list[Table1Row]:
    return [
        Table1Row(
            float(r["bandwidth_mbps"]), int(r["delay_ms"]),
            float(r["cc_bitrate_mbps"]), float(r["cc_rtt_ms"]),
            float(r["ec_bitrate_mbps"]), float(r["ec_rtt_ms"]),
        )
        for r in _tsv_rows(text)
    ]


def read_table2(text: str) -> list[Table2Row]:
    return [
        Table2Row(r["scenario"].strip(), int(r["rb"]), r["ue"].strip(), float(r["bitrate_mbps"]))
        for r in _tsv_rows(text)
    ]


def ue_key(label: str) -> str:
    """'UE 1' -> 'ue1'."""
    return "".join(label.split()).lower()


def scenario_key(label: str) -> str:
    return label if label.startswith("table2-") else f"table2-scenario{label}"


def inverse_mathis(params: RateParams, rtt_ms: float, rate_mbps: float) -> float:
    return (params.mathis_c * params.mss * 8 / (rtt_ms / 1000.0 * rate_mbps * 1e6)) ** 2


def fit_calibration(
    table1_rows: Iterable[Table1Row],
    table2_rows: Iterable[Table2Row] = (),
    name: str = "fitted",
    base: RateParams | None = None,
) -> CalibrationProfile:
    rows = list(table1_rows)
    zero = [r for r in rows if r.delay == 0]
    nonzero = [r for r in rows if r.delay > 0]
    if not zero or not nonzero:
        raise InsufficientRows("need at least one zero-delay and one nonzero-delay placement row")
    base = base or RateParams()
    base_rtt = zero[0].cc_rtt
    k = (nonzero[0].cc_rtt - base_rtt) / nonzero[0].delay
    access_cap = max(max(r.cc_bitrate, r.ec_bitrate) for r in rows)
    params = replace(base, base_rtt=base_rtt, delay_multiplier=k, access_cap=access_cap)
    losses = [
        LossEntry(TRANSPORT_BRIDGE, r.bandwidth, r.delay, inverse_mathis(params, r.cc_rtt, r.cc_bitrate))
        for r in rows
        if r.cc_bitrate < access_cap and r.cc_bitrate < r.bandwidth
    ]
    effs = {
        (ue_key(r.ue), scenario_key(r.scenario)): r.bitrate / r.rb
        for r in table2_rows
        if r.rb > 0
    }
    return CalibrationProfile(name, params, losses, effs)


def _data(*parts: str) -> str:
    return resources.files("cn2f_sim").joinpath("data", *parts).read_text(encoding="utf-8")


def builtin_profiles() -> dict[str, CalibrationProfile]:
    t1, t2 = read_table1(_data("table1.tsv")), read_table2(_data("table2.tsv"))
    fitted = fit_calibration(t1, t2)
    return {
        "nominal": CalibrationProfile("nominal"),
        "table1": replace(fitted, name="table1"),
        "table2": replace(fitted, name="table2"),
    }


def load_profile(name_or_path: str) -> CalibrationProfile:
    profiles = builtin_profiles()
    if name_or_path in profiles:
        return profiles[name_or_path]
    path = Path(name_or_path)
    if path.exists():
        return CalibrationProfile.from_obj(json.loads(path.read_text(encoding="utf-8")))
    raise KeyError(f"no calibration profile {name_or_path!r}")


# --- built-in documents --------------------------------------------------------------


def builtin_topology() -> TopologyDoc:
    return parse_topology(_data("topology.json"))


def builtin_deployment(name: str) -> DeploymentDoc:
    return parse_deployment(_data("deployments", f"{name}.json"))


def builtin_scenario_names() -> list[str]:
    folder = resources.files("cn2f_sim").joinpath("data", "scenarios")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def builtin_scenario(name: str) -> ScenarioDoc:
    return parse_scenario(_data("scenarios", f"{name}.json"))


def resolve_deployments(scenario: ScenarioDoc, base_dir: Path | None = None) -> list[DeploymentDoc]:
    """Inline documents as-is; string references are file paths (relative to
    ``base_dir``) or names of built-in deployment documents."""
    out = []
    for ref in scenario.deployments:
        if isinstance(ref, DeploymentDoc):
            out.append(ref)
            continue
        candidate = Path(ref) if base_dir is None else base_dir / ref
        if candidate.suffix == ".json" and candidate.exists():
            out.append(parse_deployment(candidate.read_bytes()))
        else:
            out.append(builtin_deployment(ref))
    return out


def effective_bridges(topology: TopologyDoc, scenario: ScenarioDoc) -> dict[str, Bridge]:
    bridges = {b.name: Bridge(b.name, b.bandwidth, b.delay, b.loss) for b in topology.bridges}
    for name, s in scenario.bridge_overrides.items():
        b = bridges[name]
        bridges[name] = Bridge(
            name,
            b.bandwidth if s.bandwidth is None else s.bandwidth,
            b.delay if s.delay is None else s.delay,
            b.loss if s.loss is None else s.loss,
        )
    return bridges


# --- running -----------------------------------------------------------------


@dataclass
class ResultRow:
    subject: str
    metric: str
    value: float
    expected: float | None = None
    tolerance: float | None = None

    @property
    def passed(self) -> bool | None:
        if self.expected is None:
            return None
        tol = DEFAULT_TOLERANCE if self.tolerance is None else self.tolerance
        return abs(self.value - self.expected) / abs(self.expected) <= tol


@dataclass
class ScenarioResult:
    scenario_name: str
    rows: list[ResultRow]
    seed: int
    event_log: str = ""
    flow_table: str = ""
    control_responses: list[str] = field(default_factory=list)
    event_log_path: str | None = None

    @property
    def passed(self) -> bool:
        return all(r.passed is not False for r in self.rows)


class ScenarioRun:
    """One simulation instance for a scenario; also the state behind
    :func:`netmodel.run_transfers`."""

    def __init__(
        self,
        scenario: ScenarioDoc,
        topology: TopologyDoc,
        profile: CalibrationProfile,
        seed: int = 0,
        deployments: list[DeploymentDoc] | None = None,
        control: list[tuple[int, str]] | None = None,
    ) -> None:
        self.scenario = scenario
        self.topology = topology
        self.profile = profile
        self.seed = seed
        self.deployments = deployments if deployments is not None else resolve_deployments(scenario)
        self.bridges = effective_bridges(topology, scenario)
        self.cluster = ClusterState(topology, Simulator(seed))
        self.sim = self.cluster.sim
        self.deadline = scenario.duration * 1000
        self.ue_names = {d.name for d in self.deployments if d.vnf_kind == "UE"}
        self.control = sorted(control or [], key=lambda c: c[0])
        self.responses: list[str] = []
        self.flows: dict[str, tuple[str, str]] = {}
        self._flow_seq = 0
        self.controller: SliceController | None = None
        self.flow_table = ""
        self._snapshot_next = False
        if scenario.slices is not None:
            self.controller = SliceController(
                {s.slice_id: SliceConfig(s.slice_id, s.rb, list(s.ue_names)) for s in scenario.slices},
                RbPool(),
                is_ready=lambda: bool(self.cluster.serving("FlexRAN")),
                on_change=lambda msg: None,
            )
        self.sim.on("control", self._on_control)
        self.sim.on("slice-commit", self._on_commit)

    # -- control channel --------------------------------------------------------

    def _on_control(self, ev) -> None:
        line = ev.payload
        if self.controller is None:
            resp = json.dumps({"ok": False, "error": "rejected"}, separators=(",", ":"))
        else:
            resp = self.controller.handle(line)
            if self.controller.staged is not None:
                self.sim.schedule(self.sim.now, "slice-commit")
        self.responses.append(f"{self.sim.now}\t{resp}")

    def _on_commit(self, ev) -> None:
        if self.controller is not None and self.controller.commit():
            flexran = self.cluster.serving("FlexRAN")
            who = flexran[0] if flexran else None
            if who is not None:
                self.cluster.note(who, "SliceConfigApplied")

    # -- transfer state protocol --------------------------------------------------

    @property
    def now(self) -> int:
        return self.sim.now

    def has_bearer(self, ue: str) -> bool:
        return ue in self.cluster.bearers

    def start_flow(self, src: str, dst: str) -> str:
        self._flow_seq += 1
        fid = f"f{self._flow_seq}"
        self.flows[fid] = (src, dst)
        return fid

    def stop_flow(self, fid: str) -> None:
        self.flows.pop(fid, None)

    def next_change(self) -> int | None:
        return self.sim.peek()

    def advance_to(self, t: int) -> None:
        if t >= self.sim.now:
            self.sim.run_until(t)

    def current_flows(self) -> list[Flow]:
        placements = {
            p.deployment_name: p.node
            for p in self.cluster.pods.values()
            if p.live and p.serving and p.node
        }
        out = []
        for fid, (src, dst) in self.flows.items():
            try:
                path = netmodel.compute_path(
                    src, dst, self.topology, self.cluster.bearers, placements, self.ue_names
                )
            except (NoBearer, Unreachable):
                path = None
            sliced = None
            ue = dst if dst in self.ue_names else src if src in self.ue_names else None
            if self.controller is not None and ue is not None:
                s = slice_of(self.controller.config, ue)
                if s is not None:
                    sliced = s.rb * self.profile.efficiency(ue, self.scenario.name)
            out.append(Flow(fid, src, dst, path, sliced_cap=sliced))
        return out

    def rates(self) -> dict[str, float]:
        flows = self.current_flows()
        rates = netmodel.allocate_rates(
            flows, self.bridges, self.profile.rate_params, self.profile.bridge_loss
        )
        if self._snapshot_next:
            # flow table as the measurement transfers begin
            for f in flows:
                f.achieved_rate = rates[f.flow_id]
            self.flow_table = netmodel.flow_table_tsv(flows)
            self._snapshot_next = False
        return rates

    # -- phases -----------------------------------------------------------------

    def deploy(self) -> int:
        """Apply every deployment at t=0 and run until all serve and all UEs
        hold a bearer. Returns the sim time at which that happened."""
        for doc in self.deployments:
            self.cluster.apply(doc)
        while not self._settled():
            nxt = self.sim.peek()
            if nxt is None or nxt > self.deadline:
                blocking = self.cluster.blocking() or [
                    f"{ue}: no bearer" for ue in sorted(self.ue_names - set(self.cluster.bearers))
                ]
                raise DeploymentStuck(blocking, self.sim.now)
            self.sim.run_until(nxt)
        return self.sim.now

    def _settled(self) -> bool:
        return self.cluster.all_serving() and self.ue_names <= set(self.cluster.bearers)

    def measure(self) -> list[ResultRow]:
        start = self.sim.now + PROBE_SETTLE_MS
        for at, line in self.control:
            self.sim.schedule(start + at, "control", line)
        self.sim.run_until(start)
        rows: list[ResultRow] = []
        downloads = [p for p in self.scenario.probes if p.kind == "download"]
        values: dict[int, float] = {}
        if downloads:
            if any(p.dst is None for p in downloads):
                raise ProbeFailed("download probes need a dst deployment")
            requests = [(p.src, p.dst, p.payload_bytes or DEFAULT_PAYLOAD_BYTES) for p in downloads]
            self._snapshot_next = True
            try:
                got = netmodel.run_transfers(requests, self)
            except (TimeoutError, NoBearer) as exc:
                raise ProbeFailed(str(exc)) from None
            values = {id(p): v for p, v in zip(downloads, got)}
        for p in self.scenario.probes:
            if p.kind == "download":
                value, metric = values[id(p)], "bitrate_mbps"
            else:
                value, metric = self._rtt(p), "rtt_ms"
            rows.append(ResultRow(f"{p.src}->{p.target}", metric, value, p.expected.get(metric), p.tolerance))
        return rows

    def _rtt(self, probe) -> float:
        placements = {p.deployment_name: p.node for p in self.cluster.pods.values() if p.live and p.node}
        externals = {probe.external_host} if probe.external_host else set()
        try:
            path = netmodel.compute_path(
                probe.src, probe.target, self.topology, self.cluster.bearers, placements,
                self.ue_names, externals,
            )
        except (NoBearer, Unreachable) as exc:
            raise ProbeFailed(str(exc)) from None
        return netmodel.rtt(path, self.profile.rate_params, self.bridges)


def run_scenario(
    scenario: ScenarioDoc,
    topology: TopologyDoc,
    profile: CalibrationProfile,
    seed: int = 0,
    deployments: list[DeploymentDoc] | None = None,
    control: list[tuple[int, str]] | None = None,
) -> ScenarioResult:
    run = ScenarioRun(scenario, topology, profile, seed, deployments, control)
    report = validate(topology, run.deployments, scenario)
    if not report.ok:
        raise ValueError("scenario does not validate:\n" + "\n".join(report.lines()))
    run.deploy()
    rows = run.measure()
    return ScenarioResult(
        scenario_name=scenario.name,
        rows=rows,
        seed=seed,
        event_log=run.cluster.event_log_tsv(),
        flow_table=run.flow_table,
        control_responses=list(run.responses),
    )


def read_control_script(text: str) -> list[tuple[int, str]]:
    """JSON lines, each an object with ``at_ms`` (relative to the start of
    measurement) plus the control message fields."""
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        if not isinstance(obj, dict) or "at_ms" not in obj:
            raise ValueError(f"control line {n}: expected an object with at_ms")
        at = obj.pop("at_ms")
        if isinstance(at, bool) or not isinstance(at, int) or at < 0:
            raise ValueError(f"control line {n}: at_ms must be a non-negative integer")
        out.append((at, json.dumps(obj, separators=(",", ":"))))
    return out


# --- tables --------------------------------------------------------------------------

HEADER = ("scenario", "subject", "metric", "value", "expected", "pass")


def _cells(result: ScenarioResult) -> list[tuple[str, ...]]:
    out = []
    for r in result.rows:
        exp = "" if r.expected is None else f"{r.expected:.2f}"
        ok = {None: "-", True: "yes", False: "no"}[r.passed]
        out.append((result.scenario_name, r.subject, r.metric, f"{r.value:.2f}", exp, ok))
    return out


def emit_table(result: ScenarioResult | list[ScenarioResult], fmt: str = "tsv") -> str:
    results = result if isinstance(result, list) else [result]
    rows = [HEADER] + [c for res in results for c in _cells(res)]
    if fmt == "tsv":
        return "\n".join("\t".join(r) for r in rows) + "\n"
    if fmt == "pretty":
        widths = [max(len(r[i]) for r in rows) for i in range(len(HEADER))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"
    raise ValueError(f"unknown format {fmt!r}")
