"""FATO slot calendars and next-available-slot allocation.

Two layout concepts are supported. ``OneDirectional`` pads are independent:
only slots on the same FATO exclude each other. ``BiDirectional`` pads share
approach and departure paths, so a take-off on any pad is also excluded from
the window around every landing (and vice versa), widened by the
interdependence buffer.
"""

from __future__ import annotations

import bisect
import dataclasses
import enum
from dataclasses import dataclass, field

from .config import Layout
from .errors import ConflictRetry, SlotUnavailable


class SlotKind(str, enum.Enum):
    TAKE_OFF = "TakeOff"
    LANDING = "Landing"


class SlotState(str, enum.Enum):
    OFFERED = "Offered"
    COMMITTED = "Committed"
    RELEASED = "Released"


@dataclass(frozen=True)
class Slot:
    vertiport: int
    fato_index: int
    kind: SlotKind
    start: int
    end: int
    state: SlotState = SlotState.OFFERED
    id: int | None = None

    def overlaps(self, start: int, end: int) -> bool:
        return self.start < end and start < self.end

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "vertiport": self.vertiport,
            "fato_index": self.fato_index,
            "kind": self.kind.value,
            "start": self.start,
            "end": self.end,
            "state": self.state.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Slot:
        return cls(
            vertiport=d["vertiport"],
            fato_index=d["fato_index"],
            kind=SlotKind(d["kind"]),
            start=d["start"],
            end=d["end"],
            state=SlotState(d["state"]),
            id=d["id"],
        )


@dataclass
class SlotCalendar:
    vertiport: int
    fato_count: int
    layout: Layout = Layout.ONE_DIRECTIONAL
    slot_duration: int = 90
    buffer: int = 60
    # per FATO, committed slots sorted by start
    committed: list[list[Slot]] = field(default_factory=list)
    version: int = 0
    _next_id: int = 0

    def __post_init__(self):
        if not self.committed:
            self.committed = [[] for _ in range(self.fato_count)]

    # -- queries ---------------------------------------------------------------

    def slots(self) -> list[Slot]:
        return sorted((s for pad in self.committed for s in pad), key=lambda s: (s.start, s.fato_index))

    def is_free(self, fato: int, kind: SlotKind, start: int, end: int) -> bool:
        pad = self.committed[fato]
        # pad slots are disjoint and sorted: only the predecessor and the run
        # starting before ``end`` can overlap
        i = bisect.bisect_left(pad, start, key=lambda s: s.start)
        for s in pad[max(0, i - 1) :]:
            if s.start >= end:
                break
            if s.overlaps(start, end):
                return False
        if self.layout is Layout.BI_DIRECTIONAL:
            other = SlotKind.LANDING if kind is SlotKind.TAKE_OFF else SlotKind.TAKE_OFF
            for p in self.committed:
                for s in p:
                    if s.kind is other and s.start - self.buffer < end and start < s.end + self.buffer:
                        return False
        return True

    def free_fato_at(self, kind: SlotKind, start: int) -> int | None:
        end = start + self.slot_duration
        for fato in range(self.fato_count):
            if self.is_free(fato, kind, start, end):
                return fato
        return None

    def offer_at(self, kind: SlotKind, start: int) -> Slot | None:
        fato = self.free_fato_at(kind, start)
        if fato is None:
            return None
        return Slot(self.vertiport, fato, kind, start, start + self.slot_duration)

    # -- mutations -------------------------------------------------------------

    def commit_slot(self, slot: Slot) -> Slot:
        if slot.state is not SlotState.OFFERED:
            raise ValueError(f"only offered slots can be committed, got {slot.state.value}")
        if not self.is_free(slot.fato_index, slot.kind, slot.start, slot.end):
            raise ConflictRetry(f"slot {slot.start}-{slot.end} on FATO {slot.fato_index} no longer free")
        if slot.id is None:
            slot = dataclasses.replace(slot, id=self._next_id)
        self._next_id = max(self._next_id, slot.id + 1)
        slot = dataclasses.replace(slot, state=SlotState.COMMITTED)
        pad = self.committed[slot.fato_index]
        bisect.insort(pad, slot, key=lambda s: s.start)
        self.version += 1
        return slot

    def release_slot(self, slot: Slot) -> Slot:
        pad = self.committed[slot.fato_index]
        for i, s in enumerate(pad):
            if s.id == slot.id and s.start == slot.start:
                del pad[i]
                self.version += 1
                return dataclasses.replace(s, state=SlotState.RELEASED)
        raise KeyError(f"slot {slot.id} not committed on vertiport {self.vertiport}")

    def copy(self) -> SlotCalendar:
        return dataclasses.replace(self, committed=[list(p) for p in self.committed])


def next_free_slot(
    vertiport: int,
    kind: SlotKind,
    earliest: int,
    calendar: SlotCalendar,
    horizon: int = 86400,
    now: int | None = None,
) -> Slot:
    """Earliest offerable slot starting at or after ``earliest``.

    Candidate starts are ``earliest + k * slot_duration``; at each candidate the
    FATOs are tried in index order.
    """
    if now is not None and earliest < now:
        raise ValueError(f"earliest {earliest} precedes the current clock {now}")
    if calendar.vertiport != vertiport:
        raise ValueError("calendar belongs to a different vertiport")
    t = earliest
    while t <= earliest + horizon:
        slot = calendar.offer_at(kind, t)
        if slot is not None:
            return slot
        t += calendar.slot_duration
    raise SlotUnavailable(f"no {kind.value} slot at vertiport {vertiport} within {horizon} s of {earliest}")


def audit_calendar(calendar: SlotCalendar) -> list[tuple[Slot, Slot]]:
    """Brute-force pairwise check of every committed slot; returns violations."""
    slots = [s for pad in calendar.committed for s in pad]
    bad = []
    for i, a in enumerate(slots):
        for b in slots[i + 1 :]:
            if a.fato_index == b.fato_index and a.overlaps(b.start, b.end):
                bad.append((a, b))
            elif (
                calendar.layout is Layout.BI_DIRECTIONAL
                and a.kind is not b.kind
                and a.start - calendar.buffer < b.end
                and b.start < a.end + calendar.buffer
            ):
                bad.append((a, b))
    return bad
