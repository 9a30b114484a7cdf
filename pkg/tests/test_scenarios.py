import pytest

from cn2f_sim.manifest import ScenarioDoc
from cn2f_sim.scenarios import (
    DeploymentStuck,
    InsufficientRows,
    ResultRow,
    ScenarioResult,
    ScenarioRun,
    Table1Row,
    builtin_profiles,
    builtin_scenario,
    builtin_scenario_names,
    builtin_topology,
    emit_table,
    fit_calibration,
    inverse_mathis,
    load_profile,
    read_control_script,
    read_table1,
    read_table2,
    run_scenario,
    CalibrationProfile,
)

from conftest import DATA

T1 = "bandwidth_mbps\tdelay_ms\tcc_bitrate_mbps\tcc_rtt_ms\tec_bitrate_mbps\tec_rtt_ms\n" \
     "10\t0\t1.9\t200\t1.9\t200\n5\t50\t0.52\t340\t1.9\t340\n"
T2 = "scenario\trb\tue\tbitrate_mbps\n1\t5\tUE 1\t1.05\n1\t20\tUE 2\t2.85\n"


def run(name, seed=0, control=None):
    sc = builtin_scenario(name)
    return run_scenario(sc, builtin_topology(), load_profile(sc.calibration_profile), seed, control=control)


def value(result, subject, metric):
    return next(r.value for r in result.rows if r.subject == subject and r.metric == metric)


# fit_calibration ------------------------------------------------------------

def test_fit_from_tables():
    prof = fit_calibration(read_table1(T1), read_table2(T2))
    p = prof.rate_params
    assert (p.base_rtt, p.access_cap) == (200, 1.9)
    assert p.delay_multiplier == pytest.approx((340 - 200) / 50)
    [loss] = prof.bridge_loss
    assert (loss.bridge, loss.bandwidth, loss.delay) == ("TN", 5, 50)
    # independent evaluation of (c * mss * 8 / (rtt * rate))^2
    assert loss.loss == pytest.approx((1.22 * 1460 * 8 / (0.34 * 0.52e6)) ** 2, rel=1e-12)
    assert loss.loss == pytest.approx(6.5e-3, rel=0.01)
    assert prof.efficiency("ue1", "table2-scenario1") == pytest.approx(0.21)
    assert prof.efficiency("ue2", "table2-scenario1") == pytest.approx(0.1425)


def test_fit_needs_both_rows():
    with pytest.raises(InsufficientRows):
        fit_calibration([])
    with pytest.raises(InsufficientRows):
        fit_calibration([Table1Row(10, 0, 1.9, 200, 1.9, 200)])


def test_inverse_mathis_roundtrip():
    from cn2f_sim.netmodel import RateParams, mathis_rate
    p = RateParams()
    assert mathis_rate(p, 250, inverse_mathis(p, 250, 0.8)) == pytest.approx(0.8, rel=1e-12)


def test_profile_json_roundtrip():
    prof = builtin_profiles()["table2"]
    assert CalibrationProfile.from_obj(prof.to_obj()) == prof


def test_unknown_profile():
    with pytest.raises(KeyError):
        load_profile("no-such-profile")


# run_scenario -----------------------------------------------------------------

def test_builtins_cover_both_tables():
    names = set(builtin_scenario_names())
    assert {f"table1-row{r}-{l}" for r in (1, 2) for l in ("cc", "ec")} <= names
    assert {f"table2-scenario{i}" for i in (1, 2, 3)} <= names


def test_row2_cloud():
    res = run("table1-row2-cc")
    assert value(res, "ue1->media-server", "bitrate_mbps") == pytest.approx(0.52, rel=0.10)
    assert value(res, "ue1->8.8.8.8", "rtt_ms") == pytest.approx(340, rel=0.05)


def test_row2_edge():
    res = run("table1-row2-ec")
    assert value(res, "ue1->media-server", "bitrate_mbps") == pytest.approx(1.9)
    assert value(res, "ue1->8.8.8.8", "rtt_ms") == pytest.approx(340, rel=0.05)


def test_slicing_scenario3():
    res = run("table2-scenario3")
    assert value(res, "ue1->media-server", "bitrate_mbps") == pytest.approx(3.00, rel=0.05)
    assert value(res, "ue2->media-server", "bitrate_mbps") == pytest.approx(0.50, rel=0.05)


def test_one_row_per_probe():
    for name in builtin_scenario_names():
        sc = builtin_scenario(name)
        assert len(run(name).rows) == len(sc.probes)


def test_probes_only_after_everything_ready():
    sc = builtin_scenario("table1-row1-cc")
    r = ScenarioRun(sc, builtin_topology(), load_profile("table1"))
    ready_at = r.deploy()
    r.measure()
    for pod in r.cluster.pods.values():
        entries = [e.time for e in r.cluster.event_log if e.pod_id == pod.pod_id and e.transition == "Ready"]
        assert entries and entries[0] <= ready_at


def test_reproducible_tsv():
    for name in ("table1-row2-cc", "table2-scenario2"):
        a, b = run(name, seed=7), run(name, seed=7)
        assert emit_table(a) == emit_table(b)
        assert a.event_log == b.event_log


def test_deployment_stuck_names_blocker():
    sc = ScenarioDoc("stuck", ["cassandra", "mme"], duration=60)
    with pytest.raises(DeploymentStuck) as exc:
        run_scenario(sc, builtin_topology(), load_profile("nominal"))
    assert any("mme" in b for b in exc.value.blocking)


def test_control_script_changes_rates():
    script = read_control_script(
        '{"at_ms": 0, "cmd": "set_slice", "slice": 2, "rb": 15}\n'
        '{"at_ms": 0, "cmd": "set_slice", "slice": 1, "rb": 10}\n'
    )
    base = run("table2-scenario1")
    res = run("table2-scenario1", control=script)
    assert value(res, "ue1->media-server", "bitrate_mbps") > value(base, "ue1->media-server", "bitrate_mbps")
    assert all('"ok":true' in line for line in res.control_responses)


def test_control_rejects_overcommit():
    script = read_control_script('{"at_ms": 0, "cmd": "set_slice", "slice": 1, "rb": 30}\n')
    res = run("table2-scenario1", control=script)
    assert res.control_responses[0].endswith('{"ok":false,"error":"exceeds_pool"}')
    assert value(res, "ue1->media-server", "bitrate_mbps") == pytest.approx(1.05)


def test_control_script_rejects_bad_lines():
    with pytest.raises(ValueError):
        read_control_script('{"cmd": "get_slices"}')
    with pytest.raises(ValueError):
        read_control_script('{"at_ms": -5, "cmd": "get_slices"}')


# emit_table -------------------------------------------------------------------

def one_row():
    return ScenarioResult("s", [ResultRow("ue1->media-server", "bitrate_mbps", 1.9, 1.9, 0.05)], 0)


def test_emit_tsv():
    lines = emit_table(one_row()).splitlines()
    assert lines == [
        "scenario\tsubject\tmetric\tvalue\texpected\tpass",
        "s\tue1->media-server\tbitrate_mbps\t1.90\t1.90\tyes",
    ]


def test_emit_pretty_same_numbers():
    res = ScenarioResult("s", [ResultRow("a", "rtt_ms", 340.004), ResultRow("b", "bitrate_mbps", 0.5, 0.52, 0.01)], 0)
    tsv = [l.split("\t") for l in emit_table(res, "tsv").splitlines()]
    pretty = [l.split() for l in emit_table(res, "pretty").splitlines()]
    assert [r[3] for r in tsv] == [r[3] for r in pretty]
    assert tsv[1][4:] == ["", "-"] and tsv[2][5] == "no"


def test_emit_unknown_format():
    with pytest.raises(ValueError):
        emit_table(one_row(), "xml")
