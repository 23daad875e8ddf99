import random

import pytest

from uamsim.config import Layout
from uamsim.errors import ConflictRetry, SlotUnavailable
from uamsim.vertidrome import Slot, SlotCalendar, SlotKind, audit_calendar, next_free_slot

from oracles import next_free_slot_brute, slot_free_brute


def cal(fatos=1, layout=Layout.ONE_DIRECTIONAL, duration=90, buffer=60):
    return SlotCalendar(7, fatos, layout, duration, buffer)


def commit(c, fato, kind, start, duration=90):
    return c.commit_slot(Slot(c.vertiport, fato, kind, start, start + duration))


def test_empty_calendar_returns_earliest():
    s = next_free_slot(7, SlotKind.TAKE_OFF, 1000, cal())
    assert (s.fato_index, s.start, s.end) == (0, 1000, 1090)


def test_busy_fato_pushes_to_next_step():
    c = cal()
    commit(c, 0, SlotKind.TAKE_OFF, 1000)
    s = next_free_slot(7, SlotKind.TAKE_OFF, 1000, c)
    assert s.start == 1090


def test_second_fato_is_used_first():
    c = cal(fatos=2)
    commit(c, 0, SlotKind.TAKE_OFF, 1000)
    s = next_free_slot(7, SlotKind.TAKE_OFF, 1000, c)
    assert (s.fato_index, s.start) == (1, 1000)


def test_bidirectional_buffer_blocks_opposite_kind():
    c = cal(fatos=2, layout=Layout.BI_DIRECTIONAL, buffer=60)
    commit(c, 0, SlotKind.LANDING, 1000)
    # a take-off on the other pad still has to keep the buffer around the landing
    assert c.offer_at(SlotKind.TAKE_OFF, 1090) is None
    assert c.offer_at(SlotKind.TAKE_OFF, 1150) is not None
    # same-kind operations on the other pad are fine
    assert c.offer_at(SlotKind.LANDING, 1000).fato_index == 1


def test_horizon_exhausted_raises():
    c = cal()
    for k in range(5):
        commit(c, 0, SlotKind.TAKE_OFF, 1000 + 90 * k)
    with pytest.raises(SlotUnavailable):
        next_free_slot(7, SlotKind.TAKE_OFF, 1000, c, horizon=360)


def test_earliest_before_now_rejected():
    with pytest.raises(ValueError):
        next_free_slot(7, SlotKind.TAKE_OFF, 10, cal(), now=20)


def test_commit_conflict_raises_retry():
    c = cal()
    commit(c, 0, SlotKind.TAKE_OFF, 1000)
    with pytest.raises(ConflictRetry):
        commit(c, 0, SlotKind.LANDING, 1050)


def test_release_frees_the_slot():
    c = cal()
    s = commit(c, 0, SlotKind.TAKE_OFF, 1000)
    c.release_slot(s)
    assert next_free_slot(7, SlotKind.TAKE_OFF, 1000, c).start == 1000


def test_copy_is_independent():
    c = cal()
    d = c.copy()
    commit(d, 0, SlotKind.TAKE_OFF, 0)
    assert c.slots() == [] and len(d.slots()) == 1


@pytest.mark.parametrize("layout", ["OneDirectional", "BiDirectional"])
def test_next_free_slot_matches_linear_scan(layout):
    rng = random.Random(layout)
    for _ in range(250):
        fatos = rng.randint(1, 3)
        duration = rng.choice([30, 60, 90])
        buffer = rng.choice([0, 30, 60])
        c = SlotCalendar(1, fatos, Layout(layout), duration, buffer)
        existing = []
        for _ in range(rng.randint(0, 12)):
            fato = rng.randrange(fatos)
            kind = rng.choice(list(SlotKind))
            start = rng.randrange(0, 1500, 10)
            if slot_free_brute(existing, fato, kind.value, start, start + duration, layout, buffer):
                commit(c, fato, kind, start, duration)
                existing.append((fato, kind.value, start, start + duration))
        assert audit_calendar(c) == []
        kind = rng.choice(list(SlotKind))
        earliest = rng.randrange(0, 1500, 5)
        horizon = rng.choice([0, 300, 3000])
        expected = next_free_slot_brute(existing, fatos, kind.value, earliest, duration, horizon, layout, buffer)
        if expected is None:
            with pytest.raises(SlotUnavailable):
                next_free_slot(1, kind, earliest, c, horizon)
        else:
            s = next_free_slot(1, kind, earliest, c, horizon)
            assert (s.fato_index, s.start) == expected


def test_audit_finds_planted_overlap():
    c = cal()
    commit(c, 0, SlotKind.TAKE_OFF, 0)
    c.committed[0].append(Slot(7, 0, SlotKind.LANDING, 45, 135, id=99))
    assert len(audit_calendar(c)) == 1
