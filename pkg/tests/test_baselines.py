import math

import numpy as np
import pytest

from collision_bench.baselines import (beb_execute, folklore_estimate, folklore_execute,
                                       stb_execute)
from collision_bench.channel import ChannelParams, EngineMode, make_rng


def test_beb_first_window_collides():
    r = beb_execute(2, ChannelParams(1), seed=0)
    assert r.phase_breakdown["beb"]["collisions"] >= 1
    assert not r.incomplete and r.successes == 2


@pytest.mark.parametrize("fn", [beb_execute, stb_execute])
@pytest.mark.parametrize("engine", [EngineMode.AGGREGATE, EngineMode.PER_PACKET])
def test_baselines_terminate(fn, engine):
    for s in range(10):
        r = fn(2, ChannelParams(1), engine, seed=s)
        assert r.successes == 2 and not r.incomplete
        r = fn(64, ChannelParams(16), engine, seed=s)
        assert r.successes == 64 and not r.incomplete
        assert r.collision_cost == 16 * r.collisions


def test_beb_collision_floor(calibration):
    frac = calibration["collision_fraction"]
    n = 1024
    for s in range(30):
        assert beb_execute(n, ChannelParams(1), seed=s).collisions >= frac * n


def test_stb_makespan_linear(calibration):
    n = 1024
    rs = [stb_execute(n, ChannelParams(1), seed=s) for s in range(30)]
    assert np.median([r.makespan for r in rs]) <= calibration["stb_makespan_K"] * n
    assert all(r.collisions >= calibration["collision_fraction"] * n for r in rs)


def test_engines_agree_on_beb_collisions():
    # both engines simulate the same balls-in-bins process
    a = [beb_execute(128, ChannelParams(1), EngineMode.AGGREGATE, make_rng(1, s)).collisions
         for s in range(300)]
    b = [beb_execute(128, ChannelParams(1), EngineMode.PER_PACKET, make_rng(2, s)).collisions
         for s in range(300)]
    se = math.sqrt(np.var(a) / 300 + np.var(b) / 300)
    assert abs(np.mean(a) - np.mean(b)) <= 4 * se


def test_folklore_first_slot_collides():
    est, m = folklore_estimate(2, ChannelParams(1), seed=0)
    assert m.per_phase["estimate"].collisions >= 1
    assert est >= 2


def test_folklore_estimate_small_n():
    ests = [folklore_estimate(2, ChannelParams(1), make_rng(s))[0] for s in range(1000)]
    assert all(math.log2(e).is_integer() for e in ests)
    assert 2 / 8 <= np.median(ests) <= 8 * 2


def test_folklore_collision_count():
    n = 1024
    counts = [folklore_estimate(n, ChannelParams(n ** 2), make_rng(s))[1].collisions
              for s in range(200)]
    assert np.mean(np.array(counts) >= math.log2(n) - 4) >= 0.95


def test_folklore_estimate_tracks_n():
    for n in (64, 1024):
        ests = [folklore_estimate(n, ChannelParams(1), make_rng(s))[0] for s in range(300)]
        assert n / 8 <= np.median(ests) <= 8 * n


def test_folklore_trial_row_marked_incomplete():
    r = folklore_execute(256, ChannelParams(1), seed=0)
    assert r.incomplete and r.successes < 256
    assert r.extras["estimate"] >= 1


def test_cap_flags_baselines():
    assert beb_execute(256, ChannelParams(1), cap=50).incomplete
    assert stb_execute(256, ChannelParams(1), cap=50).incomplete


def test_small_n_rejected():
    with pytest.raises(ValueError):
        beb_execute(1, ChannelParams(1))
