import copy
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cn2f_sim.slicing import (
    ExceedsPool,
    RbPool,
    SliceConfig,
    SliceController,
    UeChannel,
    UnknownSlice,
    UnknownUe,
    handle_control_msg,
    set_quota,
    slice_rate_cap,
)


def config(s1, s2):
    return {1: SliceConfig(1, s1, ["ue1"]), 2: SliceConfig(2, s2, ["ue2"])}


def test_quota_examples():
    pool = RbPool()
    assert pool.total == 25
    cfg = set_quota(config(0, 20), 1, 5, pool)
    assert (cfg[1].rb, cfg[2].rb) == (5, 20)
    with pytest.raises(ExceedsPool):
        set_quota(config(0, 15), 1, 15, pool)
    assert set_quota(config(5, 10), 1, 15, pool)[1].rb == 15
    with pytest.raises(UnknownSlice):
        set_quota(config(5, 10), 3, 1, pool)


def test_set_quota_leaves_input_untouched():
    cfg = config(5, 10)
    set_quota(cfg, 1, 15, RbPool())
    assert cfg[1].rb == 5


def test_pool_must_be_positive():
    with pytest.raises(ValueError):
        RbPool(0)


def test_rate_caps():
    s1, s2 = config(5, 20).values()
    assert slice_rate_cap(s1, "ue1", {"ue1": UeChannel("ue1", 0.21)}) == pytest.approx(1.05)
    assert slice_rate_cap(s2, "ue2", {"ue2": UeChannel("ue2", 0.1425)}) == pytest.approx(2.85)
    assert slice_rate_cap(SliceConfig(1, 0, ["ue1"]), "ue1", {"ue1": UeChannel("ue1", 0.21)}) == 0
    with pytest.raises(UnknownUe):
        slice_rate_cap(s1, "ue2", {"ue2": UeChannel("ue2", 0.1)})


def test_control_examples():
    c = SliceController(config(5, 10))
    assert json.loads(c.handle('{"cmd":"set_slice","slice":1,"rb":15}')) == {"ok": True, "slice": 1, "rb": 15}
    assert json.loads(c.handle("set slice one")) == {"ok": False, "error": "parse"}
    assert json.loads(c.handle('{"cmd":"set_slice","slice":1,"rb":30}')) == {"ok": False, "error": "exceeds_pool"}
    assert json.loads(c.handle('{"cmd":"set_slice","slice":9,"rb":1}')) == {"ok": False, "error": "unknown_slice"}
    assert json.loads(c.handle('{"cmd":"set_slice","slice":1,"rb":-1}')) == {"ok": False, "error": "bad_args"}
    assert json.loads(c.handle('{"cmd":"reboot"}')) == {"ok": False, "error": "unknown_cmd"}


def test_control_is_deferred_until_commit():
    c = SliceController(config(5, 10))
    c.handle('{"cmd":"set_slice","slice":1,"rb":15}')
    assert c.config[1].rb == 5
    got = json.loads(c.handle('{"cmd":"get_slices"}'))
    assert got["slices"][0] == {"slice": 1, "rb": 15, "ues": ["ue1"]}
    assert c.commit() and c.config[1].rb == 15
    assert not c.commit()


def test_control_rejected_when_flexran_down():
    c = SliceController(config(5, 10), is_ready=lambda: False)
    assert json.loads(handle_control_msg('{"cmd":"get_slices"}', c)) == {"ok": False, "error": "rejected"}


def test_attach_ue_moves_between_slices():
    c = SliceController(config(5, 10))
    c.handle('{"cmd":"attach_ue","ue":"ue1","slice":2}')
    c.commit()
    assert c.config[1].ue_names == [] and c.config[2].ue_names == ["ue2", "ue1"]


commands = st.one_of(
    st.builds(lambda s, rb: {"cmd": "set_slice", "slice": s, "rb": rb}, st.integers(0, 3), st.integers(-2, 30)),
    st.builds(lambda u, s: {"cmd": "attach_ue", "ue": u, "slice": s}, st.sampled_from(["ue1", "ue2", "ue3"]),
              st.integers(0, 3)),
    st.just({"cmd": "get_slices"}),
    st.text(max_size=8),
)


@settings(max_examples=200)
@given(st.lists(commands, max_size=30), st.lists(st.booleans(), max_size=30))
def test_random_command_streams(cmds, commits):
    c = SliceController({1: SliceConfig(1, 5, ["ue1"]), 2: SliceConfig(2, 10, ["ue2"]), 3: SliceConfig(3, 0)})
    for i, cmd in enumerate(cmds):
        line = cmd if isinstance(cmd, str) else json.dumps(cmd)
        before = (copy.deepcopy(c.config), copy.deepcopy(c.staged))
        resp = json.loads(c.handle(line))
        if not resp["ok"]:
            assert (c.config, c.staged) == before  # atomic
        if i < len(commits) and commits[i]:
            c.commit()
        for view in (c.config, c.staged):
            if view is not None:
                assert sum(s.rb for s in view.values()) <= 25
                names = [u for s in view.values() for u in s.ue_names]
                assert len(names) == len(set(names))


@given(st.integers(0, 25), st.integers(0, 25), st.floats(0.01, 1.0))
def test_cap_monotone_in_rb(a, b, eff):
    ch = {"ue1": UeChannel("ue1", eff)}
    lo, hi = sorted((a, b))
    if lo < hi:
        assert slice_rate_cap(SliceConfig(1, lo, ["ue1"]), "ue1", ch) < slice_rate_cap(SliceConfig(1, hi, ["ue1"]), "ue1", ch)


@given(st.integers(0, 15), st.integers(0, 10), st.integers(0, 15))
def test_slice_isolation(a, b, a2):
    cfg = config(a, b)
    ch = {"ue1": UeChannel("ue1", 0.2), "ue2": UeChannel("ue2", 0.15)}
    before = slice_rate_cap(cfg[2], "ue2", ch)
    after = slice_rate_cap(set_quota(cfg, 1, a2, RbPool())[2], "ue2", ch)
    assert before == after
