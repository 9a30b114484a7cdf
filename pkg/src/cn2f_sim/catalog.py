"""Cellular VNF catalog: ports, dependency edges, readiness rules, the
SPGW-C/SPGW-U heartbeat and the UE attach procedure.

Readiness rules read the cluster through a small surface (``now``,
``serving(kind)``, ``wake_at(t)``, ``heartbeat``, ``note(pod, action)``) so
this module does not import the orchestrator.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:  # pragma: no cover
    from .manifest import DeploymentDoc

VNF_KINDS = (
    "Cassandra", "HSS", "MME", "SPGWC", "SPGWU", "ENB", "RCC", "RRU",
    "FlexRAN", "MediaServer", "UE",
)
RAN_KINDS = ("ENB", "RCC", "RRU")

FRONTHAUL_BRIDGE = "FH"
SPLIT_OPTIONS = ("monolithic", "IF5", "IF4p5")

# Timings in ms; chosen small and distinct so traces stay readable.
TABLE_INIT_MS = 5_000
TABLE_POPULATE_MS = 1_000
LINK_SETUP_MS = 100
HEARTBEAT_INTERVAL_MS = 10_000
ATTACH_LATENCY_MS = 100

HEARTBEAT_MISS_LIMIT = 3
HEARTBEAT_READY_STREAK = 2


@dataclass(frozen=True)
class CatalogEntry:
    kind: str
    listen_ports: tuple[int, ...]
    depends_on: tuple[tuple[str, int], ...]
    readiness_rule: str


CATALOG: dict[str, CatalogEntry] = {
    e.kind: e
    for e in (
        CatalogEntry("Cassandra", (9042,), (), "tables_initialized"),
        CatalogEntry("HSS", (3868,), (("Cassandra", 9042),), "tables_populated"),
        CatalogEntry("MME", (3870, 5870, 2123, 36412), (("HSS", 3868),), "s6a_associated"),
        CatalogEntry("SPGWC", (8805,), (("MME", 3870),), "s11_up_and_heartbeat"),
        CatalogEntry("SPGWU", (2152,), (("SPGWC", 8805),), "heartbeat_healthy"),
        CatalogEntry("ENB", (), (("MME", 36412),), "s1_up"),
        CatalogEntry("RCC", (50000,), (("MME", 36412),), "s1_up"),
        CatalogEntry("RRU", (), (("RCC", 50000),), "fronthaul_up"),
        CatalogEntry("FlexRAN", (2210,), (), "always"),
        CatalogEntry("MediaServer", (80,), (), "always"),
        CatalogEntry("UE", (), (), "always"),
    )
}

FLEXRAN_EDGE = ("FlexRAN", 2210)


def flexran_enabled(env: dict[str, str]) -> bool:
    return env.get("FLEXRAN_ENABLED", "no").strip().lower() == "yes"


def split_option_of(doc: DeploymentDoc) -> str | None:
    """Fronthaul split of a RAN half, or None when no fronthaul is involved."""
    if doc.vnf_kind not in ("RCC", "RRU"):
        return None
    return doc.env.get("SPLIT_OPTION", "IF4p5")


def dependency_edges(kind: str, flexran: bool = False) -> list[tuple[str, int]]:
    entry = CATALOG[kind]
    edges = list(entry.depends_on)
    if flexran and kind in ("ENB", "RCC"):
        edges.append(FLEXRAN_EDGE)
    return edges


def topological_order(flexran: bool = True) -> list[str]:
    """Kinds in dependency order; raises ValueError on a cycle."""
    order: list[str] = []
    state: dict[str, int] = {}

    def visit(kind: str) -> None:
        if state.get(kind) == 2:
            return
        if state.get(kind) == 1:
            raise ValueError(f"dependency cycle through {kind}")
        state[kind] = 1
        for dep, _ in dependency_edges(kind, flexran):
            visit(dep)
        state[kind] = 2
        order.append(kind)

    for kind in VNF_KINDS:
        visit(kind)
    return order


def catalog_tsv() -> str:
    lines = ["kind\tports\tdependencies"]
    for kind in VNF_KINDS:
        e = CATALOG[kind]
        ports = ",".join(str(p) for p in e.listen_ports) or "-"
        deps = [f"{k}:{p}" for k, p in e.depends_on]
        if kind in ("ENB", "RCC"):
            deps.append(f"{FLEXRAN_EDGE[0]}:{FLEXRAN_EDGE[1]}?flexran")
        lines.append(f"{kind}\t{ports}\t{','.join(deps) or '-'}")
    return "\n".join(lines) + "\n"


# --- heartbeat ---------------------------------------------------------------


@dataclass
class HeartbeatSession:
    peer_a: str  # SPGWC pod id at the last tick
    peer_b: str  # SPGWU pod id at the last tick
    interval: int = HEARTBEAT_INTERVAL_MS
    missed: int = 0
    streak: int = 0  # consecutive successful exchanges between peer_a and peer_b
    status: str = "healthy"


def heartbeat_tick(
    session: HeartbeatSession,
    peer_a: str | None,
    peer_b: str | None,
    a_up: bool,
    b_up: bool,
) -> HeartbeatSession:
    """One heartbeat exchange.

    ``peer_a``/``peer_b`` are the current SPGWC/SPGWU pod ids and ``a_up``/
    ``b_up`` whether their containers are running. A peer change restarts the
    success streak.
    """
    if a_up and b_up and peer_a is not None and peer_b is not None:
        same = (peer_a, peer_b) == (session.peer_a, session.peer_b)
        session.streak = session.streak + 1 if same else 1
        session.peer_a, session.peer_b = peer_a, peer_b
        session.missed = 0
    else:
        session.missed += 1
        session.streak = 0
    session.status = "unhealthy" if session.missed >= HEARTBEAT_MISS_LIMIT else "healthy"
    return session


# --- readiness ---------------------------------------------------------------


def _link_up(pod: Any, dep_kind: str, cluster: Any) -> Any:
    """First serving pod of ``dep_kind`` whose link to ``pod`` has settled."""
    for dep in cluster.serving(dep_kind):
        established = max(pod.containers_ready_at, dep.serving_since) + LINK_SETUP_MS
        if cluster.now >= established:
            return dep
        cluster.wake_at(established)
    return None


def readiness_rule(kind: str, pod: Any, cluster: Any) -> bool:
    now = cluster.now
    if kind == "Cassandra":
        at = pod.containers_ready_at + TABLE_INIT_MS
        if now >= at:
            return True
        cluster.wake_at(at)
        return False
    if kind == "HSS":
        dbs = cluster.serving("Cassandra")
        if not dbs:
            return False
        db = dbs[0]
        # tables are populated once per database instance
        if pod.memo.get("populated") != db.pod_id:
            done = max(db.serving_since, pod.containers_ready_at) + TABLE_POPULATE_MS
            if now < done:
                cluster.wake_at(done)
                return False
            pod.memo["populated"] = db.pod_id
        return True
    if kind == "MME":
        hss = _link_up(pod, "HSS", cluster)
        if hss is None:
            return False
        if pod.memo.get("s6a") != hss.pod_id:
            pod.memo["s6a"] = hss.pod_id
            cluster.note(hss, "STATE_OPEN")
        return True
    if kind == "SPGWC":
        if _link_up(pod, "MME", cluster) is None:
            return False
        hb = cluster.heartbeat
        # an unhealthy session only demotes the SPGWC that was part of it
        return hb is None or hb.status == "healthy" or hb.peer_a != pod.pod_id
    if kind == "SPGWU":
        hb = cluster.heartbeat
        return (
            hb is not None
            and hb.status == "healthy"
            and hb.peer_b == pod.pod_id
            and hb.streak >= HEARTBEAT_READY_STREAK
        )
    if kind in ("ENB", "RCC"):
        if _link_up(pod, "MME", cluster) is None:
            return False
        if flexran_enabled(pod.env) and _link_up(pod, "FlexRAN", cluster) is None:
            return False
        return True
    if kind == "RRU":
        return _link_up(pod, "RCC", cluster) is not None
    return True


# --- attach ------------------------------------------------------------------


class AttachRejected(Exception):
    def __init__(self, reason: str) -> None:
        super().__init__(f"attach rejected: {reason} not ready")
        self.reason = reason


@dataclass
class Bearer:
    ue_name: str
    ue_ip: str
    segments: list[tuple[str, str]]  # (SPGWU node, radio node)
    established_at: int
    spgwu_pod: str = ""
    ran_pods: tuple[str, ...] = ()
    radio_node: str = ""
    bbu_node: str = ""

    @property
    def gateway_node(self) -> str:
        return self.segments[0][0]


@dataclass
class UeAddressPool:
    cidr: str
    allocated: set[str] = field(default_factory=set)

    def take(self) -> str:
        for host in ipaddress.IPv4Network(self.cidr).hosts():
            ip = str(host)
            if ip not in self.allocated:
                self.allocated.add(ip)
                return ip
        raise RuntimeError(f"UE address pool {self.cidr} exhausted")

    def release(self, ip: str) -> None:
        self.allocated.discard(ip)


def serving_ran(cluster: Any) -> tuple[Any, Any] | None:
    """(baseband pod, radio pod) of the serving RAN, monolithic or split."""
    enbs = cluster.serving("ENB")
    if enbs:
        return enbs[0], enbs[0]
    rccs, rrus = cluster.serving("RCC"), cluster.serving("RRU")
    if rccs and rrus:
        return rccs[0], rrus[0]
    return None


def _first_unready(cluster: Any) -> str | None:
    # dependency order: the core before the RAN that depends on it
    for kind in ("MME", "SPGWC", "SPGWU"):
        if not cluster.serving(kind):
            return kind
    if cluster.live("ENB"):
        if not cluster.serving("ENB"):
            return "ENB"
    elif cluster.live("RCC") or cluster.live("RRU"):
        if not cluster.serving("RCC"):
            return "RCC"
        if not cluster.serving("RRU"):
            return "RRU"
    else:
        return "ENB"
    return None


def ue_attach(ue_name: str, enb_pod: Any, cluster: Any, ue_pool: UeAddressPool) -> Bearer:
    """Attach a UE through ``enb_pod`` (an ENB or RCC pod)."""
    reason = _first_unready(cluster)
    if reason is not None:
        raise AttachRejected(reason)
    if enb_pod is None or not getattr(enb_pod, "serving", False):
        raise AttachRejected(enb_pod.vnf_kind if enb_pod is not None else "ENB")
    if enb_pod.vnf_kind == "ENB":
        radio = enb_pod
    else:
        radio = cluster.serving("RRU")[0]
    gw = cluster.serving("SPGWU")[0]
    return Bearer(
        ue_name=ue_name,
        ue_ip=ue_pool.take(),
        segments=[(gw.node, radio.node)],
        established_at=cluster.now,
        spgwu_pod=gw.pod_id,
        ran_pods=tuple(dict.fromkeys((enb_pod.pod_id, radio.pod_id))),
        radio_node=radio.node,
        bbu_node=enb_pod.node,
    )
