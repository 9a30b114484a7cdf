"""Random pod-kill runs over the full VNF set, with invariant checks."""

from __future__ import annotations

from dataclasses import dataclass, field

from cn2f_sim.catalog import dependency_edges, flexran_enabled
from cn2f_sim.engine import Simulator
from cn2f_sim.orchestrator import PHASES, READY, TRANSITIONS, ClusterState
from cn2f_sim.scenarios import builtin_deployment, builtin_topology

CORE = ["cassandra", "hss", "mme", "spgwc", "flexran", "media-server", "ue1", "ue2"]
LAYOUTS = {
    "split": ["spgwu", "rcc", "rru"],
    "mono": ["spgwu", "enb-flexran"],
    "edge": ["spgwu-edge", "enb"],
}
INJECT_UNTIL_MS = 400_000
CONVERGE_WITHIN_MS = 3_000_000


@dataclass
class ChaosOutcome:
    seed: int
    kills: list[tuple[int, str]] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)
    converged_at: int | None = None


def build(seed: int, layout: str) -> ClusterState:
    cluster = ClusterState(builtin_topology(), Simulator(seed))
    for name in CORE + LAYOUTS[layout]:
        cluster.apply(builtin_deployment(name))
    return cluster


def check_ip_uniqueness(cluster: ClusterState) -> list[str]:
    seen: dict[str, str] = {}
    out = []
    for p in cluster.pods.values():
        if p.live and p.ip is not None:
            if p.ip in seen:
                out.append(f"t={cluster.now} ip {p.ip} held by {seen[p.ip]} and {p.pod_id}")
            seen[p.ip] = p.pod_id
    return out


def check_bearers(cluster: ClusterState) -> list[str]:
    out = []
    for ue, b in cluster.bearers.items():
        for pid in (b.spgwu_pod, *b.ran_pods):
            if cluster.pods[pid].phase != READY:
                out.append(f"t={cluster.now} bearer {ue} anchored on {pid} in {cluster.pods[pid].phase}")
    return out


def check_paths(cluster: ClusterState) -> list[str]:
    seqs: dict[str, list[str]] = {}
    for e in cluster.event_log:
        if e.transition in PHASES:
            seqs.setdefault(e.pod_id, []).append(e.transition)
    out = []
    for pid, seq in seqs.items():
        if seq[0] != "Pending":
            out.append(f"{pid} starts in {seq[0]}")
        for a, b in zip(seq, seq[1:]):
            if b not in TRANSITIONS[a]:
                out.append(f"{pid}: illegal {a} -> {b}")
    return out


def check_dependency_order(cluster: ClusterState) -> list[str]:
    ready_at: dict[str, list[int]] = {}
    pods = cluster.pods
    for e in cluster.event_log:
        if e.transition == READY:
            ready_at.setdefault(pods[e.pod_id].vnf_kind, []).append(e.time)
    out = []
    for e in cluster.event_log:
        if e.transition != READY:
            continue
        pod = pods[e.pod_id]
        for dep, _port in dependency_edges(pod.vnf_kind, flexran_enabled(pod.env)):
            if not any(t < e.time for t in ready_at.get(dep, [])):
                out.append(f"{pod.pod_id} Ready at {e.time} before any {dep} was Ready")
    return out


def converged(cluster: ClusterState) -> bool:
    if not cluster.all_serving():
        return False
    ues = [n for n, d in cluster.desired.items() if d.vnf_kind == "UE"]
    return all(u in cluster.bearers for u in ues)


def chaos_run(seed: int, max_kills: int = 6) -> ChaosOutcome:
    out = ChaosOutcome(seed)
    layout = sorted(LAYOUTS)[seed % len(LAYOUTS)]
    cluster = build(seed, layout)
    rng = cluster.sim.rng

    def after_event(ev):
        out.violations.extend(check_ip_uniqueness(cluster))
        out.violations.extend(check_bearers(cluster))

    cluster.listeners.append(after_event)
    n_kills = rng.randint(1, max_kills)
    times = sorted(rng.randint(0, INJECT_UNTIL_MS) for _ in range(n_kills))
    for t in times:
        cluster.run_until(t)
        live = sorted(p.pod_id for p in cluster.pods.values() if p.live)
        victim = rng.choice(live)
        out.kills.append((t, victim))
        cluster.kill_pod(victim)
        after_event(None)
    deadline = cluster.now + CONVERGE_WITHIN_MS
    while not converged(cluster):
        nxt = cluster.sim.peek()
        if nxt is None or nxt > deadline:
            out.violations.append(f"no convergence by {deadline}: {cluster.blocking()}")
            break
        cluster.run_until(nxt)
    else:
        out.converged_at = cluster.now
        for name in cluster.desired:
            live = [p for p in cluster.pods.values() if p.live and p.deployment_name == name]
            if len(live) != 1 or live[0].phase != READY or not live[0].serving:
                out.violations.append(f"{name}: {[(p.pod_id, p.phase) for p in live]}")
    out.violations.extend(check_paths(cluster))
    out.violations.extend(check_dependency_order(cluster))
    return out
