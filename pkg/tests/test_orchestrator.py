import itertools

import pytest

from cn2f_sim.engine import Simulator
from cn2f_sim.manifest import DeploymentDoc, InitGate, IpPools, Node, TopologyDoc
from cn2f_sim.orchestrator import (
    ClusterState,
    DuplicateStaticIp,
    IllegalTransition,
    IpAllocator,
    NoMatchingNode,
    OutOfRange,
    Pod,
    PoolExhausted,
    UnknownPod,
    allocate_ip,
    apply,
    kill_pod,
    probe,
    schedule_pod,
)
from cn2f_sim.scenarios import builtin_deployment

from chaos import chaos_run


def make_pod(selector=None, static_ip=None, pod_id="p-0"):
    return Pod(pod_id, "p", "MME", selector or {}, static_ip, [], [], {})


def cluster(topology, *names):
    c = ClusterState(topology, Simulator(0))
    for n in names:
        c.apply(builtin_deployment(n))
    return c


def transitions(c, pod_id):
    return [(e.time, e.transition) for e in c.event_log if e.pod_id == pod_id]


# schedule_pod -------------------------------------------------------------------

def test_schedule_by_label():
    nodes = [Node("worker1", {"environment": "edge"}), Node("worker3", {"environment": "cloud"})]
    assert schedule_pod(make_pod({"environment": "cloud"}), nodes) == "worker3"


def test_schedule_no_match():
    with pytest.raises(NoMatchingNode):
        schedule_pod(make_pod({"environment": "cloud"}), [Node("worker1", {"environment": "edge"})])


def test_schedule_never_uses_master():
    with pytest.raises(NoMatchingNode):
        schedule_pod(make_pod(), [Node("master", {}, "master")])


def test_schedule_tie_break_enumerated():
    names = ["worker1", "worker2", "worker3", "worker10"]
    for r in range(1, len(names) + 1):
        for subset in itertools.combinations(names, r):
            for order in itertools.permutations(subset):
                nodes = [Node(n, {"environment": "cloud"}) for n in order]
                assert schedule_pod(make_pod({"environment": "cloud"}), nodes) == min(subset)


def test_schedule_pending_condition(topology):
    c = ClusterState(topology)
    doc = builtin_deployment("mme")
    doc.node_selector = {"environment": "moon"}
    c.apply(doc)
    pod = c.live_pod("mme")
    assert pod.phase == "Pending" and pod.node is None
    assert "NoMatchingNode" in pod.conditions


# allocate_ip --------------------------------------------------------------------

def test_static_ip_honored():
    alloc = IpAllocator("10.233.0.0/24")
    assert allocate_ip(make_pod(static_ip="10.233.0.130"), alloc) == "10.233.0.130"
    with pytest.raises(DuplicateStaticIp):
        allocate_ip(make_pod(static_ip="10.233.0.130", pod_id="q-0"), alloc)


def test_static_ip_out_of_range():
    with pytest.raises(OutOfRange):
        allocate_ip(make_pod(static_ip="192.168.0.170"), IpAllocator("10.233.0.0/24"))


def test_dynamic_pool_enumeration():
    alloc = IpAllocator("10.233.0.0/30")
    got = [allocate_ip(make_pod(pod_id=f"p-{i}"), alloc) for i in range(2)]
    # hand enumeration of 10.233.0.0/30: network .0, hosts .1 .2, broadcast .3
    assert got == ["10.233.0.1", "10.233.0.2"]
    with pytest.raises(PoolExhausted):
        allocate_ip(make_pod(pod_id="p-9"), alloc)


def test_dynamic_skips_static_and_reuses_freed():
    alloc = IpAllocator("10.233.0.0/29")
    allocate_ip(make_pod(static_ip="10.233.0.1", pod_id="s-0"), alloc)
    assert allocate_ip(make_pod(pod_id="d-0"), alloc) == "10.233.0.2"
    alloc.release("10.233.0.1")
    assert allocate_ip(make_pod(pod_id="d-1"), alloc) == "10.233.0.1"


# probe ------------------------------------------------------------------------------

def test_probe_open_only_when_ready(topology):
    c = ClusterState(topology)
    hss = DeploymentDoc("hss", "MediaServer", static_ip="10.233.0.219", ports=[3868])
    c.apply(hss)
    assert probe("10.233.0.219", 3868, c) == "closed"  # Initialized
    c.run_until(1000)
    pod = c.live_pod("hss")
    assert pod.phase == "Ready"
    assert probe("10.233.0.219", 3868, c) == "open"
    assert probe("10.233.0.219", 3869, c) == "closed"
    assert probe("10.233.0.1", 3868, c) == "closed"


def test_probe_closed_at_containers_ready(topology):
    c = cluster(topology, "hss")  # no Cassandra: HSS never gets past its gate
    pod = c.live_pod("hss")
    pod.phase = "ContainersReady"
    assert probe("10.233.0.219", 3868, c) == "closed"


# apply -----------------------------------------------------------------------------

def test_apply_creates_pending_pod(topology):
    c = ClusterState(topology)
    apply(builtin_deployment("mme"), c)
    pods = list(c.pods.values())
    assert len(pods) == 1 and pods[0].phase == "Pending" and pods[0].node == "worker3"


def test_apply_is_idempotent(topology):
    c = ClusterState(topology)
    apply(builtin_deployment("mme"), c)
    apply(builtin_deployment("mme"), c)
    assert len(c.pods) == 1


def test_apply_changed_doc_replaces(topology):
    c = ClusterState(topology)
    apply(builtin_deployment("mme"), c)
    changed = builtin_deployment("mme")
    changed.env["TZ"] = "UTC"
    apply(changed, c)
    old, new = c.pods["mme-0"], c.pods["mme-1"]
    assert old.phase == "Failed" and old.reason == "Replaced"
    assert new.phase == "Pending" and new.ip == "10.233.0.130"
    c.run_until(5000)
    assert len([p for p in c.pods.values() if p.deployment_name == "mme"]) == 2


def test_delete_ready_pod_succeeds(topology):
    c = ClusterState(topology)
    c.apply(DeploymentDoc("web", "MediaServer"))
    c.run_until(1000)
    c.delete("web")
    assert [t for _, t in transitions(c, "web-0") if t in ("Ready", "Succeeded")] == ["Ready", "Succeeded"]


def test_illegal_transition_refused(topology):
    c = ClusterState(topology)
    c.apply(DeploymentDoc("web", "MediaServer"))
    with pytest.raises(IllegalTransition):
        c._transition(c.live_pod("web"), "Ready")


# step ---------------------------------------------------------------------------------

def test_gate_timeout_then_replacement(topology):
    c = cluster(topology, "mme")
    pod = c.live_pod("mme")
    bound = pod.bound_at
    c.run_until(bound + 100 * 10_000 - 1)
    assert pod.phase == "Pending" and pod.gate_attempts == [99]
    c.run_until(bound + 100 * 10_000)
    assert pod.phase == "Failed" and pod.reason == "InitGateTimeout"
    assert pod.phase_entered_at == 1_000_000
    assert pod.gate_attempts == [100]
    c.run_until(1_001_000)
    new = c.live_pod("mme")
    assert new.pod_id == "mme-1" and new.restart_count == 1 and new.phase == "Pending"


def test_gate_retry_picks_up_late_dependency(topology):
    # hand-replayed trace: Cassandra Ready at 6 s; HSS applied at 35 s without
    # gates -> Initialized 35 s, ContainersReady 36 s, tables populated 37 s.
    # MME gate tries at 10, 20, 30 (closed) and 40 s (open).
    c = ClusterState(topology)
    c.apply(builtin_deployment("cassandra"))
    c.apply(builtin_deployment("mme"))
    c.run_until(35_000)
    hss = builtin_deployment("hss")
    hss.init_gates = []
    c.apply(hss)
    c.run_until(60_000)
    assert ("37000", "Ready") in [(str(t), s) for t, s in transitions(c, "hss-0")]
    mme = transitions(c, "mme-0")
    assert (40_000, "Initialized") in mme
    assert (41_000, "ContainersReady") in mme
    assert (41_100, "Ready") in mme
    assert c.pods["mme-0"].gate_attempts == [4]


def test_kill_ready_spgwu_heals(topology):
    c = cluster(topology, "cassandra", "hss", "mme", "spgwc", "spgwu")
    c.run_until(70_000)
    pod = c.live_pod("spgwu")
    assert pod.phase == "Ready"
    kill_pod(pod.pod_id, c)
    assert pod.phase == "Failed" and pod.reason == "Killed"
    c.run_until(71_000)
    new = c.live_pod("spgwu")
    assert new.pod_id == "spgwu-1" and new.restart_count == 1
    with pytest.raises(UnknownPod):
        kill_pod(pod.pod_id, c)
    with pytest.raises(UnknownPod):
        kill_pod("nope", c)


def test_kill_cassandra_cascades_to_hss(topology):
    c = cluster(topology, "cassandra", "hss", "mme")
    c.run_until(30_000)
    assert c.live_pod("hss").serving
    c.kill_pod("cassandra-0")
    hss = c.live_pod("hss")
    assert hss.phase == "Ready" and not hss.serving
    assert (30_000, "NotReady") in transitions(c, "hss-0")
    assert not c.live_pod("mme").serving  # its S6a peer is gone
    # replacement Cassandra: +1 s reconcile, +1 s start, +5 s tables, +1 s HSS repopulation
    c.run_until(60_000)
    assert (38_000, "Serving") in transitions(c, "hss-0")
    assert c.live_pod("mme").serving


def test_event_log_tsv(topology):
    c = cluster(topology, "cassandra")
    lines = c.event_log_tsv().splitlines()
    assert lines[0] == "time_ms\tpod_id\tdeployment\ttransition"
    assert lines[1] == "0\tcassandra-0\tcassandra\tPending"


def test_random_fault_injection_properties():
    for seed in range(50):
        out = chaos_run(seed)
        assert out.violations == [], (seed, out.kills, out.violations[:5])
        assert out.converged_at is not None
