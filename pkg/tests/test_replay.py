import numpy as np
import pytest

from codepth.replay import ONLINE, REPLAY, ReplayBuffer, ReplaySample

import replay_audit


def test_low_evidence_is_not_stored():
    buf = ReplayBuffer(4)
    assert not buf.maybe_store("x", 0.5)
    assert not buf.maybe_store("x", 1.0)
    assert len(buf) == 0


def test_store_below_capacity_grows():
    buf = ReplayBuffer(4)
    assert buf.maybe_store("x", 2.0)
    assert len(buf) == 1


def test_store_at_capacity_replaces():
    buf = ReplayBuffer(3, np.random.default_rng(0))
    for k in "abc":
        buf.maybe_store(k, 2.0)
    assert buf.maybe_store("new", 2.0)
    assert len(buf) == 3 and "new" in buf.items
    assert sum(k in buf.items for k in "abc") == 2


def test_single_item_draw():
    buf = ReplayBuffer(4)
    buf.maybe_store("only", 3.0)
    assert all(buf.draw() == "only" for _ in range(20))
    assert len(buf) == 1


def test_empty_draw_errors():
    with pytest.raises(IndexError):
        ReplayBuffer(4).draw()


def test_empty_buffer_always_online():
    buf = ReplayBuffer(4)
    coin = np.random.default_rng(0)
    assert all(buf.choose_source(coin) == ONLINE for _ in range(1000))


def test_coin_is_seeded():
    buf = ReplayBuffer(4)
    buf.maybe_store("x", 2.0)
    g1, g2 = np.random.default_rng(7), np.random.default_rng(7)
    assert [buf.choose_source(g1) for _ in range(200)] == [buf.choose_source(g2) for _ in range(200)]


def test_draw_frequencies_within_three_sigma():
    res = replay_audit.draw_frequencies()
    assert res["ok"], res
    assert res["size_after"] == 4


def test_coin_fraction():
    assert abs(replay_audit.coin_fraction() - 0.5) <= 0.02


def test_preload_tags_warmup_items():
    buf = ReplayBuffer(4)
    buf.preload(["p", "q"])
    assert len(buf) == 2 and [m.origin for m in buf.meta] == ["warmup", "warmup"]
    assert buf.admitted() == []
    buf.maybe_store("r", 1.5, step=9)
    (m,) = buf.admitted()
    assert (m.step, m.d, m.origin) == (9, 1.5, "online")


def test_capacity_must_be_positive():
    with pytest.raises(ValueError):
        ReplayBuffer(0)


def test_sample_carries_inputs_only():
    fields = set(ReplaySample.__dataclass_fields__)
    assert fields == {"mode", "frames", "source_domain", "key"}


def test_short_capacity_audit():
    res = replay_audit.capacity_audit(20_000, capacity=16)
    assert res["peak"] == 16 and res["monotone"] and res["low_d_items"] == 0 and res["items_match_meta"]
