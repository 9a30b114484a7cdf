"""Flow-level transport model.

Paths run UE -> radio -> baseband node -> gateway (SPGW-U) node -> server,
routed over the topology graph of nodes and bridges. Rates are max-min fair
over shared resources (bridges and per-eNB radio links), with a fixed per-flow
cap from the access/slice limit, the TCP window and the Mathis loss formula.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Mapping

INF = math.inf

# Fronthaul bandwidth that each split option needs, strictly exceeded (Mb/s).
FRONTHAUL_MIN_MBPS = {"IF4p5": 1000.0, "IF5": 500.0}


class NoBearer(LookupError):
    pass


class Unreachable(LookupError):
    pass


class InvalidSize(ValueError):
    pass


@dataclass(frozen=True)
class RateParams:
    base_rtt: float = 200.0  # ms
    delay_multiplier: float = 2.0
    access_cap: float = 1.9  # Mb/s
    mss: int = 1460  # bytes
    mathis_c: float = 1.22
    window: int | None = None  # bytes

    def __post_init__(self) -> None:
        for name in ("base_rtt", "delay_multiplier", "access_cap", "mss", "mathis_c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.window is not None and self.window <= 0:
            raise ValueError("window must be > 0")


@dataclass(frozen=True)
class Hop:
    a: str
    b: str
    bridge: str | None = None  # set when the hop enters or leaves a bridge
    resource: str | None = None  # radio hops name their shared radio link


@dataclass(frozen=True)
class Path:
    hops: tuple[Hop, ...]
    crosses: frozenset[str]

    @property
    def resources(self) -> tuple[str, ...]:
        out: list[str] = []
        for h in self.hops:
            if h.resource and h.resource not in out:
                out.append(h.resource)
        for b in sorted(self.crosses):
            out.append(f"bridge:{b}")
        return tuple(out)


@dataclass
class Flow:
    flow_id: str
    src: str
    dst: str
    path: Path | None
    demand: float = INF
    achieved_rate: float = 0.0
    sliced_cap: float | None = None


@dataclass(frozen=True)
class LossEntry:
    """Measured loss for a bridge at given settings."""

    bridge: str
    bandwidth: float
    delay: int
    loss: float


def bridge_loss(bridge: Any, entries: Iterable[LossEntry]) -> float:
    """Loss probability of ``bridge`` at its current settings.

    A measured entry applies whenever the bridge is at least as constrained
    (bandwidth no higher, delay no lower), so loss never drops as conditions
    worsen. The bridge's own configured loss is a floor.
    """
    loss = bridge.loss
    for e in entries:
        if e.bridge == bridge.name and bridge.bandwidth <= e.bandwidth and bridge.delay >= e.delay:
            loss = max(loss, e.loss)
    return loss


# --- routing -----------------------------------------------------------------


def _adjacency(topology: Any) -> dict[str, list[str]]:
    adj: dict[str, set[str]] = {}
    for link in topology.links:
        adj.setdefault(link.a, set()).add(link.b)
        adj.setdefault(link.b, set()).add(link.a)
    return {k: sorted(v) for k, v in adj.items()}


def route(topology: Any, src: str, dst: str, avoid: Iterable[str] = ()) -> list[str]:
    """Shortest vertex sequence src..dst; ties go to lexicographically smaller names."""
    if src == dst:
        return [src]
    avoid = set(avoid) - {src, dst}
    adj = _adjacency(topology)
    prev: dict[str, str] = {src: src}
    queue = deque([src])
    while queue:
        v = queue.popleft()
        for w in adj.get(v, ()):
            if w in prev or w in avoid:
                continue
            prev[w] = v
            if w == dst:
                seq = [dst]
                while seq[-1] != src:
                    seq.append(prev[seq[-1]])
                return seq[::-1]
            queue.append(w)
    raise Unreachable(f"no route from {src} to {dst}")


def _hops(vertices: list[str], bridges: set[str]) -> list[Hop]:
    hops = []
    for a, b in zip(vertices, vertices[1:]):
        br = a if a in bridges else b if b in bridges else None
        hops.append(Hop(a, b, bridge=br))
    return hops


def egress_node(topology: Any) -> str:
    for n in topology.nodes:
        if n.role == "master":
            return n.name
    raise Unreachable("topology has no master node to reach external hosts")


def compute_path(
    src: str,
    dst: str,
    topology: Any,
    bearers: Mapping[str, Any],
    placements: Mapping[str, str],
    ue_names: Iterable[str] = (),
    external_hosts: Iterable[str] = (),
    fronthaul: str = "FH",
) -> Path:
    """Path from ``src`` to ``dst``.

    UEs reach the network over their bearer; everything else is located by
    ``placements`` (deployment name -> node). External hosts sit behind the
    master node. The fronthaul bridge only carries RAN-internal traffic.
    """
    ue_names = set(ue_names) | set(bearers)
    external_hosts = set(external_hosts)
    bridge_names = {b.name for b in topology.bridges}
    hops: list[Hop] = []

    def locate(name: str) -> str:
        if name in placements:
            return placements[name]
        if name in external_hosts:
            return egress_node(topology)
        raise Unreachable(f"{name!r} has no location")

    def radio_leg(ue: str) -> tuple[list[Hop], str]:
        bearer = bearers.get(ue)
        if bearer is None:
            raise NoBearer(f"{ue} has no bearer")
        leg = [Hop(ue, bearer.radio_node, resource=f"radio:{bearer.radio_node}")]
        if bearer.bbu_node != bearer.radio_node:
            seq = [bearer.radio_node, fronthaul, bearer.bbu_node]
            if fronthaul not in _adjacency(topology).get(bearer.radio_node, ()) or \
                    bearer.bbu_node not in _adjacency(topology).get(fronthaul, ()):
                raise Unreachable(f"no fronthaul between {bearer.radio_node} and {bearer.bbu_node}")
            leg += _hops(seq, bridge_names)
        core = route(topology, bearer.bbu_node, bearer.gateway_node, avoid=[fronthaul])
        leg += _hops(core, bridge_names)
        return leg, bearer.gateway_node

    if src in ue_names:
        up, here = radio_leg(src)
        hops += up
    else:
        here = locate(src)
    if dst in ue_names:
        down, gw = radio_leg(dst)
        hops += _hops(route(topology, here, gw, avoid=[fronthaul]), bridge_names)
        hops += [Hop(h.b, h.a, h.bridge, h.resource) for h in reversed(down)]
    else:
        target = locate(dst)
        if target == here:
            hops.append(Hop(here, here))
        else:
            hops += _hops(route(topology, here, target, avoid=[fronthaul]), bridge_names)

    seen: set[tuple[str, str]] = set()
    for h in hops:
        if h.a != h.b and (h.a, h.b) in seen:
            raise Unreachable(f"path {src}->{dst} repeats link {h.a}->{h.b}")
        seen.add((h.a, h.b))
    crosses = frozenset(h.bridge for h in hops if h.bridge is not None)
    return Path(tuple(hops), crosses)


# --- rtt and caps ------------------------------------------------------------


def rtt(path: Path, params: RateParams, bridges: Mapping[str, Any]) -> float:
    """Round-trip time in ms: base plus the scaled one-way delay of every crossed bridge."""
    return params.base_rtt + params.delay_multiplier * sum(bridges[b].delay for b in sorted(path.crosses))


def path_loss(path: Path, bridges: Mapping[str, Any], entries: Iterable[LossEntry] = ()) -> float:
    entries = list(entries)
    keep = 1.0
    for b in sorted(path.crosses):
        keep *= 1.0 - bridge_loss(bridges[b], entries)
    return 1.0 - keep


def mathis_rate(params: RateParams, rtt_ms: float, loss: float) -> float:
    """Mathis steady-state TCP rate in Mb/s."""
    return params.mathis_c * params.mss * 8 / (rtt_ms / 1000.0 * math.sqrt(loss)) / 1e6


def flow_cap(params: RateParams, access: float, rtt_ms: float, loss: float) -> float:
    cap = access
    if params.window is not None:
        cap = min(cap, params.window * 8 / (rtt_ms / 1000.0) / 1e6)
    if loss > 0:
        cap = min(cap, mathis_rate(params, rtt_ms, loss))
    return cap


# --- max-min fair allocation ----------------------------------------------------


def max_min_fair(
    paths: Mapping[Hashable, Iterable[Hashable]],
    capacity: Mapping[Hashable, float],
    caps: Mapping[Hashable, float] | None = None,
) -> dict[Hashable, float]:
    """Progressive filling.

    Every unfrozen flow rises at the same pace. A flow freezes when it reaches
    its own cap or when a link it crosses fills up.
    """
    caps = caps or {}
    links = {f: tuple(dict.fromkeys(p)) for f, p in paths.items()}
    rate: dict[Hashable, float] = {}
    active: list[Hashable] = []
    for f in links:
        c = caps.get(f, INF)
        if c <= 0:
            rate[f] = 0.0
        else:
            active.append(f)
    remaining = {l: float(capacity[l]) for ls in links.values() for l in ls}
    level = 0.0
    while active:
        count: dict[Hashable, int] = {}
        for f in active:
            for l in links[f]:
                count[l] = count.get(l, 0) + 1
        step = INF
        for l, n in count.items():
            step = min(step, remaining[l] / n)
        for f in active:
            step = min(step, caps.get(f, INF) - level)
        if step == INF:
            for f in active:
                rate[f] = INF
            break
        level += step
        for l, n in count.items():
            remaining[l] -= step * n
        full = {l for l in count if remaining[l] <= 1e-12 * max(1.0, capacity[l])}
        still = []
        for f in active:
            c = caps.get(f, INF)
            if c != INF and c - level <= 1e-12 * max(1.0, c):
                rate[f] = c
            elif any(l in full for l in links[f]):
                rate[f] = level
            else:
                still.append(f)
        if len(still) == len(active):  # numerical guard: nothing froze
            for f in still:
                rate[f] = level
            break
        active = still
    return rate


def allocate_rates(
    flows: Iterable[Flow],
    bridges: Mapping[str, Any],
    params: RateParams,
    loss_entries: Iterable[LossEntry] = (),
) -> dict[str, float]:
    """Steady-state rate per flow id (Mb/s).

    Flows without a path (a dead endpoint or torn-down bearer) get 0. Flows
    with ``sliced_cap`` bypass the shared radio link and are capped by it.
    """
    loss_entries = list(loss_entries)
    paths: dict[str, list[str]] = {}
    capacity: dict[str, float] = {}
    caps: dict[str, float] = {}
    rates: dict[str, float] = {}
    for flow in flows:
        if flow.path is None:
            rates[flow.flow_id] = 0.0
            continue
        res = []
        for r in flow.path.resources:
            if r.startswith("radio:"):
                if flow.sliced_cap is not None:
                    continue
                capacity[r] = params.access_cap
            else:
                capacity[r] = bridges[r.split(":", 1)[1]].bandwidth
            res.append(r)
        paths[flow.flow_id] = res
        r_ms = rtt(flow.path, params, bridges)
        loss = path_loss(flow.path, bridges, loss_entries)
        access = params.access_cap if flow.sliced_cap is None else flow.sliced_cap
        caps[flow.flow_id] = min(flow.demand, flow_cap(params, access, r_ms, loss))
    rates.update(max_min_fair(paths, capacity, caps))
    return rates


def flow_table_tsv(flows: Iterable[Flow]) -> str:
    lines = ["flow_id\tsrc\tdst\tcrosses\trate_mbps"]
    for f in flows:
        crosses = ",".join(sorted(f.path.crosses)) if f.path else "-"
        lines.append(f"{f.flow_id}\t{f.src}\t{f.dst}\t{crosses or '-'}\t{f.achieved_rate:.6f}")
    return "\n".join(lines) + "\n"


# --- probes ------------------------------------------------------------------


def download_probe(ue: str, server: str, payload_bytes: int, state: Any) -> float:
    """Download ``payload_bytes`` from ``server`` to ``ue``; returns Mb/s."""
    return run_transfers([(ue, server, payload_bytes)], state)[0]


def run_transfers(requests: list[tuple[str, str, int]], state: Any) -> list[float]:
    """Run concurrent downloads of ``(ue, server, payload_bytes)`` to completion.

    ``state`` supplies ``now`` (ms), ``deadline``, ``has_bearer(ue)``,
    ``start_flow(src, dst) -> id``, ``stop_flow(id)``, ``rates() -> {id: Mb/s}``,
    ``next_change()`` and ``advance_to(t)``. Rates are piecewise constant
    between simulation events; each flow's progress is folded only when its
    rate changes, so an undisturbed transfer reports exactly its steady rate.
    Returns the achieved Mb/s per request.
    """
    for ue, server, payload in requests:
        if payload <= 0:
            raise InvalidSize(f"payload must be > 0 bytes, got {payload}")
        if not state.has_bearer(ue):
            raise NoBearer(f"{ue} has no bearer")
    t = float(state.now)
    fids = [state.start_flow(server, ue) for ue, server, _ in requests]
    remaining = {f: req[2] * 8 / 1e6 for f, req in zip(fids, requests)}  # Mb
    started = {f: t for f in fids}
    seg_start = dict(started)
    finished: dict[Any, float] = {}
    rates = state.rates()
    try:
        while remaining:
            nxt = state.next_change()
            done = None
            for f in remaining:
                r = rates[f]
                if r > 0:
                    end = seg_start[f] + remaining[f] / r * 1000.0
                    if done is None or end < done[0]:
                        done = (end, f)
            if done is not None and (nxt is None or done[0] < nxt):
                t, f = done
                finished[f] = t
                del remaining[f]
                state.stop_flow(f)
            else:
                if nxt is None or nxt > state.deadline:
                    stalled = sorted(str(f) for f in remaining)
                    raise TimeoutError(f"transfers {', '.join(stalled)} did not finish")
                state.advance_to(nxt)
                t = float(nxt)
            new = state.rates()
            for f in remaining:
                if new[f] != rates[f]:
                    remaining[f] -= rates[f] * (t - seg_start[f]) / 1000.0
                    seg_start[f] = t
            rates = new
        state.advance_to(math.ceil(t))
    finally:
        for f in remaining:
            state.stop_flow(f)
    return [req[2] * 8 / 1e6 / ((finished[f] - started[f]) / 1000.0) for f, req in zip(fids, requests)]


def check_fronthaul(split_option: str, fh_bandwidth: Any) -> str | None:
    """None when the fronthaul is fast enough, else a description of the violation."""
    bw = getattr(fh_bandwidth, "bandwidth", fh_bandwidth)
    if split_option == "monolithic":
        return None
    need = FRONTHAUL_MIN_MBPS.get(split_option)
    if need is None:
        return f"unknown split option {split_option!r}"
    if bw > need:
        return None
    return f"split {split_option} needs fronthaul > {need:g} Mb/s, bridge has {bw:g} Mb/s"
