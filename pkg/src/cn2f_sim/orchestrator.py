"""Miniature declarative orchestrator.

Holds the desired deployments, creates one pod per deployment, binds it to a
labeled worker, gives it an address, runs its init gates and walks it through
Pending -> Initialized -> ContainersReady -> Ready. Failed pods are replaced.

A Ready pod can additionally be out of service (``serving`` false) when its
readiness rule stops holding; that is a condition, not a phase.
"""

from __future__ import annotations

import ipaddress
import logging
from dataclasses import dataclass, field
from typing import Any, Iterable

from . import catalog
from .catalog import AttachRejected, Bearer, HeartbeatSession, UeAddressPool
from .engine import Event, Simulator
from .manifest import DeploymentDoc, InitGate, Node, TopologyDoc

log = logging.getLogger(__name__)

PENDING = "Pending"
INITIALIZED = "Initialized"
CONTAINERS_READY = "ContainersReady"
READY = "Ready"
SUCCEEDED = "Succeeded"
FAILED = "Failed"
PHASES = (PENDING, INITIALIZED, CONTAINERS_READY, READY, SUCCEEDED, FAILED)
TERMINAL = (SUCCEEDED, FAILED)

TRANSITIONS = {
    PENDING: {INITIALIZED, FAILED},
    INITIALIZED: {CONTAINERS_READY, FAILED},
    CONTAINERS_READY: {READY, FAILED},
    READY: {SUCCEEDED, FAILED},
    SUCCEEDED: set(),
    FAILED: set(),
}

CONTAINER_START_MS = 1_000
RESTART_DELAY_MS = 1_000


class OrchestratorError(Exception):
    pass


class NoMatchingNode(OrchestratorError):
    pass


class DuplicateStaticIp(OrchestratorError):
    pass


class PoolExhausted(OrchestratorError):
    pass


class OutOfRange(OrchestratorError):
    pass


class UnknownPod(OrchestratorError):
    pass


class IllegalTransition(OrchestratorError):
    pass


@dataclass
class Pod:
    pod_id: str
    deployment_name: str
    vnf_kind: str
    node_selector: dict[str, str]
    static_ip: str | None
    ports: list[int]
    init_gates: list[InitGate]
    env: dict[str, str]
    phase: str = PENDING
    node: str | None = None
    ip: str | None = None
    gate_attempts: list[int] = field(default_factory=list)
    gate_index: int = 0
    restart_count: int = 0
    created_at: int = 0
    phase_entered_at: int = 0
    bound_at: int | None = None
    containers_ready_at: int = 0
    serving: bool = False
    serving_since: int = 0
    conditions: list[str] = field(default_factory=list)
    reason: str | None = None
    memo: dict[str, Any] = field(default_factory=dict)

    @property
    def live(self) -> bool:
        return self.phase not in TERMINAL

    @property
    def running(self) -> bool:
        return self.phase in (CONTAINERS_READY, READY)


@dataclass(frozen=True)
class LogEntry:
    time: int
    pod_id: str
    deployment: str
    transition: str


@dataclass
class IpAllocator:
    cidr: str
    allocated: dict[str, str] = field(default_factory=dict)  # ip -> pod id

    def release(self, ip: str | None) -> None:
        if ip is not None:
            self.allocated.pop(ip, None)


def schedule_pod(pod: Pod, nodes: Iterable[Node]) -> str:
    """Worker whose labels contain the pod's selector; smallest name wins."""
    candidates = sorted(
        n.name for n in nodes
        if n.role == "worker" and all(n.labels.get(k) == v for k, v in pod.node_selector.items())
    )
    if not candidates:
        raise NoMatchingNode(f"{pod.pod_id}: no worker matches {pod.node_selector}")
    return candidates[0]


def allocate_ip(pod: Pod, allocator: IpAllocator) -> str:
    net = ipaddress.IPv4Network(allocator.cidr)
    if pod.static_ip is not None:
        if ipaddress.IPv4Address(pod.static_ip) not in net:
            raise OutOfRange(f"{pod.static_ip} is outside {net}")
        owner = allocator.allocated.get(pod.static_ip)
        if owner is not None and owner != pod.pod_id:
            raise DuplicateStaticIp(f"{pod.static_ip} is held by {owner}")
        allocator.allocated[pod.static_ip] = pod.pod_id
        return pod.static_ip
    for host in net.hosts():
        ip = str(host)
        if ip not in allocator.allocated:
            allocator.allocated[ip] = pod.pod_id
            return ip
    raise PoolExhausted(f"no free address in {net}")


def probe(target_ip: str, target_port: int, state: ClusterState) -> str:
    for pod in state.pods.values():
        if pod.live and pod.ip == target_ip and target_port in pod.ports and pod.phase == READY:
            return "open"
    return "closed"


class ClusterState:
    """Desired and observed cluster state, driven by a :class:`Simulator`."""

    def __init__(self, topology: TopologyDoc, sim: Simulator | None = None) -> None:
        self.sim = sim or Simulator()
        self.topology = topology
        self.nodes = list(topology.nodes)
        self.desired: dict[str, DeploymentDoc] = {}
        self.pods: dict[str, Pod] = {}
        self.ip_allocator = IpAllocator(topology.ip_pools.pod_cidr)
        self.ue_pool = UeAddressPool(topology.ip_pools.ue_cidr)
        self.event_log: list[LogEntry] = []
        self.heartbeat: HeartbeatSession | None = None
        self.bearers: dict[str, Bearer] = {}
        self._generation: dict[str, int] = {}
        self._restarts: dict[str, int] = {}
        self._wakes: set[int] = set()
        self._attaching: set[str] = set()
        self.listeners: list[Any] = []
        for kind, handler in (
            ("gate", self._on_gate),
            ("start", self._on_start),
            ("reconcile", self._on_reconcile),
            ("recheck", lambda ev: None),
            ("heartbeat", self._on_heartbeat),
            ("attach", self._on_attach),
            ("kill", lambda ev: self.kill_pod(ev.payload)),
        ):
            self.sim.on(kind, self._wrap(handler))

    # -- views used by readiness rules --------------------------------------

    @property
    def now(self) -> int:
        return self.sim.now

    def live(self, kind: str) -> list[Pod]:
        return [p for p in self.pods.values() if p.live and p.vnf_kind == kind]

    def serving(self, kind: str) -> list[Pod]:
        return [p for p in self.pods.values() if p.live and p.vnf_kind == kind and p.serving]

    def live_pod(self, deployment: str) -> Pod | None:
        for p in self.pods.values():
            if p.live and p.deployment_name == deployment:
                return p
        return None

    def wake_at(self, t: int) -> None:
        if t > self.now and t not in self._wakes:
            self._wakes.add(t)
            self.sim.schedule(t, "recheck")

    def note(self, pod: Pod, action: str) -> None:
        self.event_log.append(LogEntry(self.now, pod.pod_id, pod.deployment_name, action))

    def placements(self) -> dict[str, str]:
        return {p.deployment_name: p.node for p in self.pods.values() if p.live and p.node}

    # -- commands ------------------------------------------------------------

    def apply(self, doc: DeploymentDoc) -> None:
        current = self.desired.get(doc.name)
        live = self.live_pod(doc.name)
        if current == doc and live is not None:
            return
        self.desired[doc.name] = doc
        if live is not None:
            self._fail(live, "Replaced", heal=False)
            self._restarts[doc.name] = 0
        self._create(doc)
        self.step()

    def delete(self, name: str) -> None:
        """Remove a deployment; a Ready pod completes, anything else fails."""
        self.desired.pop(name, None)
        pod = self.live_pod(name)
        if pod is not None:
            if pod.phase == READY:
                self._transition(pod, SUCCEEDED)
                self._release(pod)
            else:
                self._fail(pod, "Deleted", heal=False)
        self.step()

    def kill_pod(self, pod_id: str) -> None:
        pod = self.pods.get(pod_id)
        if pod is None or not pod.live:
            raise UnknownPod(pod_id)
        self._fail(pod, "Killed")
        self.step()

    def run_until(self, t_end: int) -> int:
        return self.sim.run_until(t_end)

    # -- lifecycle -------------------------------------------------------------

    def _wrap(self, handler):
        def run(ev: Event) -> None:
            handler(ev)
            self.step()
            for listener in self.listeners:
                listener(ev)
        return run

    def _log(self, pod: Pod, text: str) -> None:
        self.event_log.append(LogEntry(self.now, pod.pod_id, pod.deployment_name, text))

    def _transition(self, pod: Pod, phase: str) -> None:
        if phase not in TRANSITIONS[pod.phase]:
            raise IllegalTransition(f"{pod.pod_id}: {pod.phase} -> {phase}")
        pod.phase = phase
        pod.phase_entered_at = self.now
        self._log(pod, phase)

    def _create(self, doc: DeploymentDoc) -> Pod:
        gen = self._generation.get(doc.name, 0)
        self._generation[doc.name] = gen + 1
        pod = Pod(
            pod_id=f"{doc.name}-{gen}",
            deployment_name=doc.name,
            vnf_kind=doc.vnf_kind,
            node_selector=dict(doc.node_selector),
            static_ip=doc.static_ip,
            ports=list(doc.ports),
            init_gates=list(doc.init_gates),
            env=dict(doc.env),
            gate_attempts=[0] * len(doc.init_gates),
            restart_count=self._restarts.get(doc.name, 0),
            created_at=self.now,
            phase_entered_at=self.now,
        )
        self.pods[pod.pod_id] = pod
        self._log(pod, PENDING)
        try:
            pod.node = schedule_pod(pod, self.nodes)
        except NoMatchingNode:
            pod.conditions.append("NoMatchingNode")
            self._log(pod, "NoMatchingNode")
            return pod
        pod.bound_at = self.now
        self._log(pod, f"Scheduled:{pod.node}")
        try:
            pod.ip = allocate_ip(pod, self.ip_allocator)
        except (DuplicateStaticIp, PoolExhausted, OutOfRange) as exc:
            name = type(exc).__name__
            pod.conditions.append(name)
            self._log(pod, name)
            return pod
        self._next_gate(pod)
        return pod

    def _next_gate(self, pod: Pod) -> None:
        if pod.gate_index < len(pod.init_gates):
            gate = pod.init_gates[pod.gate_index]
            self.sim.schedule(self.now + gate.interval * 1000, "gate", pod.pod_id)
        else:
            self._transition(pod, INITIALIZED)
            self.sim.schedule(self.now + CONTAINER_START_MS, "start", pod.pod_id)

    def _on_gate(self, ev: Event) -> None:
        pod = self.pods[ev.payload]
        if pod.phase != PENDING:
            return
        g = pod.gate_index
        gate = pod.init_gates[g]
        pod.gate_attempts[g] += 1
        if probe(gate.target_ip, gate.target_port, self) == "open":
            pod.gate_index += 1
            self._next_gate(pod)
        elif pod.gate_attempts[g] >= gate.retries:
            self._fail(pod, "InitGateTimeout")
        else:
            self.sim.schedule(self.now + gate.interval * 1000, "gate", pod.pod_id)

    def _on_start(self, ev: Event) -> None:
        pod = self.pods[ev.payload]
        if pod.phase != INITIALIZED:
            return
        pod.containers_ready_at = self.now
        self._transition(pod, CONTAINERS_READY)

    def _release(self, pod: Pod) -> None:
        pod.serving = False
        self.ip_allocator.release(pod.ip)

    def _fail(self, pod: Pod, reason: str, heal: bool = True) -> None:
        pod.reason = reason
        self._transition(pod, FAILED)
        self._log(pod, f"Reason:{reason}")
        self._release(pod)
        if heal:
            self.sim.schedule(self.now + RESTART_DELAY_MS, "reconcile")

    def _on_reconcile(self, ev: Event) -> None:
        for name in sorted(self.desired):
            if self.live_pod(name) is None:
                self._restarts[name] = self._restarts.get(name, 0) + 1
                self._create(self.desired[name])

    # -- readiness, heartbeat and bearers ---------------------------------------

    def step(self) -> None:
        """Re-evaluate readiness and the user plane until nothing changes."""
        changed = True
        while changed:
            changed = False
            for pod in list(self.pods.values()):
                if pod.phase not in (CONTAINERS_READY, READY):
                    continue
                ok = catalog.readiness_rule(pod.vnf_kind, pod, self)
                if pod.phase == CONTAINERS_READY and ok:
                    self._transition(pod, READY)
                    pod.serving, pod.serving_since = True, self.now
                    changed = True
                elif pod.phase == READY and ok != pod.serving:
                    pod.serving = ok
                    if ok:
                        pod.serving_since = self.now
                    self._log(pod, "Serving" if ok else "NotReady")
                    changed = True
            changed |= self._ensure_heartbeat()
            changed |= self._maintain_bearers()

    def _ensure_heartbeat(self) -> bool:
        if self.heartbeat is not None:
            return False
        c = [p for p in self.live("SPGWC") if p.running]
        u = [p for p in self.live("SPGWU") if p.running]
        if not (c and u):
            return False
        self.heartbeat = HeartbeatSession(c[0].pod_id, u[0].pod_id)
        self.sim.schedule(self.now + self.heartbeat.interval, "heartbeat")
        return True

    def _on_heartbeat(self, ev: Event) -> None:
        hb = self.heartbeat
        c, u = self.live("SPGWC"), self.live("SPGWU")
        a = c[0] if c else None
        b = u[0] if u else None
        before = hb.status
        catalog.heartbeat_tick(
            hb,
            a.pod_id if a else None,
            b.pod_id if b else None,
            bool(a and a.running),
            bool(b and b.running),
        )
        if hb.status != before:
            for p in (a, b):
                if p is not None:
                    self._log(p, f"Heartbeat:{hb.status}")
        self.sim.schedule(self.now + hb.interval, "heartbeat")

    def _maintain_bearers(self) -> bool:
        changed = False
        for ue, bearer in list(self.bearers.items()):
            ue_pod = self.live_pod(ue)
            anchors = [self.pods[p] for p in (bearer.spgwu_pod, *bearer.ran_pods)]
            if ue_pod is None or any(p.phase != READY for p in anchors):
                del self.bearers[ue]
                self.ue_pool.release(bearer.ue_ip)
                self.event_log.append(LogEntry(self.now, ue_pod.pod_id if ue_pod else "-", ue, "Detach"))
                changed = True
        for pod in self.live("UE"):
            name = pod.deployment_name
            if not pod.serving or name in self.bearers or name in self._attaching:
                continue
            if catalog._first_unready(self) is None:
                self._attaching.add(name)
                self.sim.schedule(self.now + catalog.ATTACH_LATENCY_MS, "attach", name)
        return changed

    def serving_ran(self) -> Pod | None:
        ran = catalog.serving_ran(self)
        return ran[0] if ran else None

    def _on_attach(self, ev: Event) -> None:
        name = ev.payload
        self._attaching.discard(name)
        pod = self.live_pod(name)
        if pod is None or not pod.serving or name in self.bearers:
            return
        try:
            bearer = catalog.ue_attach(name, self.serving_ran(), self, self.ue_pool)
        except AttachRejected as exc:
            self._log(pod, f"AttachRejected:{exc.reason}")
            return
        self.bearers[name] = bearer
        self._log(pod, f"Attach:{bearer.ue_ip}")

    # -- reporting --------------------------------------------------------------

    def all_serving(self) -> bool:
        return all(
            (p := self.live_pod(name)) is not None and p.phase == READY and p.serving
            for name in self.desired
        )

    def blocking(self) -> list[str]:
        """Human-readable reasons why deployments are not serving."""
        out = []
        owners = {d.static_ip: d for d in self.desired.values() if d.static_ip}
        for name in sorted(self.desired):
            pod = self.live_pod(name)
            if pod is None:
                out.append(f"{name}: no live pod")
            elif pod.conditions:
                out.append(f"{name}: {pod.conditions[-1]}")
            elif pod.phase == PENDING and pod.gate_index < len(pod.init_gates):
                g = pod.init_gates[pod.gate_index]
                owner = owners.get(g.target_ip)
                who = owner.name if owner else "nothing"
                out.append(f"{name}: init gate {g.target_ip}:{g.target_port} ({who}) closed")
            elif not (pod.phase == READY and pod.serving):
                out.append(f"{name}: {pod.phase}, readiness rule for {pod.vnf_kind} not met")
        return out

    def event_log_tsv(self) -> str:
        lines = ["time_ms\tpod_id\tdeployment\ttransition"]
        lines += [f"{e.time}\t{e.pod_id}\t{e.deployment}\t{e.transition}" for e in self.event_log]
        return "\n".join(lines) + "\n"


# Functional surface -------------------------------------------------------------


def apply(doc: DeploymentDoc, state: ClusterState) -> ClusterState:
    state.apply(doc)
    return state


def step(state: ClusterState, now: int | None = None) -> ClusterState:
    if now is not None and now > state.now:
        state.run_until(now)
    state.step()
    return state


def kill_pod(pod_id: str, state: ClusterState) -> ClusterState:
    state.kill_pod(pod_id)
    return state
