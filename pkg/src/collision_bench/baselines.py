"""Comparison protocols: binary exponential backoff, sawtooth backoff and
the doubling-probability size estimator."""

from __future__ import annotations

import enum

from .cab import safety_cap
from .channel import (CapExhausted, Channel, ChannelParams, EngineMode, Metrics, Rng,
                      SlotKind, make_rng)
from .results import TrialResult


class BaselineKind(enum.Enum):
    BEB = "BEB"
    STB = "STB"
    FOLKLORE = "Folklore"


def _result(name, n, params, channel, seed, extras=None, trace=None) -> TrialResult:
    m = channel.metrics
    m.check()
    return TrialResult(
        protocol=name, n=n, C=params.collision_cost, seed=seed,
        makespan=m.total_slots, collisions=m.collisions,
        collision_cost=m.collision_cost_total, successes=m.successes,
        incomplete=not channel.done, phase_breakdown=m.breakdown(),
        extras=extras or {}, trace=trace,
    )


def _setup(n, params, engine, rng, seed, trace, cap):
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if rng is None:
        rng = make_rng(seed)
    cap = safety_cap(n, params.collision_cost) if cap is None else cap
    return Channel(n, params, rng, engine, trace=trace, cap=cap)


def beb_execute(n: int, params: ChannelParams, engine: EngineMode = EngineMode.AGGREGATE,
                rng: Rng | None = None, *, seed: int = 0, trace: bool = False,
                cap: int | None = None) -> TrialResult:
    """Windows of 1, 2, 4, ... slots; each active packet picks one slot per window."""
    ch = _setup(n, params, engine, rng, seed, trace, cap)
    w = 1
    windows = 0
    while not ch.done and not ch.exhausted:
        ch.run_uniform_window(w, "beb")
        windows += 1
        w *= 2
    return _result("BEB", n, params, ch, seed, {"windows": windows}, ch.trace)


def stb_execute(n: int, params: ChannelParams, engine: EngineMode = EngineMode.AGGREGATE,
                rng: Rng | None = None, *, seed: int = 0, trace: bool = False,
                cap: int | None = None) -> TrialResult:
    """Outer window doubles; each outer step sweeps w, w/2, ..., 1."""
    ch = _setup(n, params, engine, rng, seed, trace, cap)
    w = 1
    while not ch.done and not ch.exhausted:
        size = w
        while size >= 1 and not ch.done and not ch.exhausted:
            ch.run_uniform_window(size, "stb")
            size //= 2
        w *= 2
    return _result("STB", n, params, ch, seed, {"last_outer_window": w // 2}, ch.trace)


def folklore_estimate(n: int, params: ChannelParams, rng: Rng | None = None, *,
                      engine: EngineMode = EngineMode.AGGREGATE, seed: int = 0,
                      trace: bool = False, cap: int | None = None,
                      channel: Channel | None = None) -> tuple[float, Metrics]:
    """Slot i uses send probability 2**-i; stop at the first empty slot.

    Returns ``2**i`` for the stopping slot together with the channel metrics.
    """
    ch = channel if channel is not None else _setup(n, params, engine, rng, seed, trace, cap)
    i = 0
    while True:
        try:
            out = ch.run_slot(2.0 ** -i, "estimate")
        except CapExhausted:
            break
        if out.kind is SlotKind.EMPTY:
            break
        i += 1
    ch.metrics.check()
    return float(2 ** i), ch.metrics


def folklore_execute(n: int, params: ChannelParams, engine: EngineMode = EngineMode.AGGREGATE,
                     rng: Rng | None = None, *, seed: int = 0, trace: bool = False,
                     cap: int | None = None) -> TrialResult:
    """Harness wrapper; the estimator stops long before every packet is through,
    so these rows are always marked incomplete."""
    ch = _setup(n, params, engine, rng, seed, trace, cap)
    est, _ = folklore_estimate(n, params, channel=ch)
    return _result("Folklore", n, params, ch, seed, {"estimate": est}, ch.trace)
