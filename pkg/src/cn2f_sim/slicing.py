"""RAN slicing: resource-block quotas over a fixed pool, per-UE rate caps and
a newline-delimited JSON control channel."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Callable

DEFAULT_POOL_RBS = 25


class SlicingError(ValueError):
    code = "error"


class ExceedsPool(SlicingError):
    code = "exceeds_pool"


class UnknownSlice(SlicingError):
    code = "unknown_slice"


class UnknownUe(SlicingError):
    code = "unknown_ue"


@dataclass(frozen=True)
class RbPool:
    total: int = DEFAULT_POOL_RBS

    def __post_init__(self) -> None:
        if self.total <= 0:
            raise ValueError("RB pool must be > 0")


@dataclass
class SliceConfig:
    slice_id: int
    rb: int
    ue_names: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class UeChannel:
    ue_name: str
    efficiency: float  # Mb/s per RB

    def __post_init__(self) -> None:
        if not self.efficiency > 0:
            raise ValueError("efficiency must be > 0")


Slices = dict[int, SliceConfig]


def set_quota(config: Slices, slice_id: int, rb: int, pool: RbPool) -> Slices:
    """Return a copy of ``config`` with slice ``slice_id`` set to ``rb`` blocks."""
    if rb < 0:
        raise ValueError("rb must be >= 0")
    if slice_id not in config:
        raise UnknownSlice(f"no slice {slice_id}")
    total = sum(s.rb for sid, s in config.items() if sid != slice_id) + rb
    if total > pool.total:
        raise ExceedsPool(f"{total} RBs > pool of {pool.total}")
    out = copy.deepcopy(config)
    out[slice_id].rb = rb
    return out


def slice_of(config: Slices, ue: str) -> SliceConfig | None:
    for s in config.values():
        if ue in s.ue_names:
            return s
    return None


def slice_rate_cap(slice_: SliceConfig, ue: str, channels: dict[str, UeChannel]) -> float:
    if ue not in slice_.ue_names:
        raise UnknownUe(f"{ue} is not in slice {slice_.slice_id}")
    if ue not in channels:
        raise UnknownUe(f"no channel for {ue}")
    return slice_.rb * channels[ue].efficiency


@dataclass
class SliceController:
    """Control endpoint for slice reconfiguration.

    Requests are checked against the staged configuration and answered at
    once; the staged configuration becomes live at the next simulation step
    (:meth:`commit`).
    """

    config: Slices
    pool: RbPool = field(default_factory=RbPool)
    is_ready: Callable[[], bool] = lambda: True
    on_change: Callable[[str], None] = lambda msg: None
    staged: Slices | None = None

    def _view(self) -> Slices:
        return self.staged if self.staged is not None else self.config

    def handle(self, line: str) -> str:
        return json.dumps(self.handle_obj(line), separators=(",", ":"))

    def handle_obj(self, line: str) -> dict:
        try:
            msg = json.loads(line)
        except (ValueError, RecursionError):
            return {"ok": False, "error": "parse"}
        if not isinstance(msg, dict):
            return {"ok": False, "error": "parse"}
        if not self.is_ready():
            return {"ok": False, "error": "rejected"}
        cmd = msg.get("cmd")
        try:
            if cmd == "get_slices":
                return {
                    "ok": True,
                    "slices": [
                        {"slice": s.slice_id, "rb": s.rb, "ues": list(s.ue_names)}
                        for s in sorted(self._view().values(), key=lambda s: s.slice_id)
                    ],
                }
            if cmd == "set_slice":
                sid, rb = msg.get("slice"), msg.get("rb")
                if not _is_int(sid) or not _is_int(rb) or rb < 0:
                    return {"ok": False, "error": "bad_args"}
                self.staged = set_quota(self._view(), sid, rb, self.pool)
                self.on_change(f"set_slice {sid} rb={rb}")
                return {"ok": True, "slice": sid, "rb": rb}
            if cmd == "attach_ue":
                ue, sid = msg.get("ue"), msg.get("slice")
                if not isinstance(ue, str) or not ue or not _is_int(sid):
                    return {"ok": False, "error": "bad_args"}
                view = self._view()
                if sid not in view:
                    raise UnknownSlice(f"no slice {sid}")
                new = copy.deepcopy(view)
                for s in new.values():
                    if ue in s.ue_names:
                        s.ue_names.remove(ue)
                new[sid].ue_names.append(ue)
                self.staged = new
                self.on_change(f"attach_ue {ue} slice={sid}")
                return {"ok": True, "ue": ue, "slice": sid}
        except SlicingError as exc:
            return {"ok": False, "error": exc.code}
        return {"ok": False, "error": "unknown_cmd"}

    def commit(self) -> bool:
        if self.staged is None:
            return False
        self.config, self.staged = self.staged, None
        return True


def _is_int(v: object) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def handle_control_msg(line: str, controller: SliceController) -> str:
    return controller.handle(line)
