"""Collision-Aversion Backoff.

The protocol side of this module (sample sizing, diagnosis, the RunDown
schedule) only ever sees C, its own constants and channel feedback.  The
packet count lives in :class:`~collision_bench.channel.Channel`;
``classify_range`` uses it too but is test instrumentation only.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .channel import Channel, ChannelParams, EngineMode, Rng, WindowStats
from .results import TrialResult

E = math.e


class Action(enum.Enum):
    DOUBLE = "double"
    HALVE = "halve"
    START_RUNDOWN = "rundown"


class Phase(enum.Enum):
    SAMPLING = "sampling"
    DIAGNOSING = "diagnosing"
    RUNDOWN_LOOP = "rundown_loop"
    TAIL_WINDOWS = "tail_windows"
    DONE = "done"


_TRANSITIONS = {
    Phase.SAMPLING: {Phase.DIAGNOSING, Phase.DONE},
    Phase.DIAGNOSING: {Phase.SAMPLING, Phase.RUNDOWN_LOOP},
    Phase.RUNDOWN_LOOP: {Phase.TAIL_WINDOWS, Phase.DONE},
    # leftover packets after the tail re-enter the repeat loop
    Phase.TAIL_WINDOWS: {Phase.DONE, Phase.SAMPLING},
    Phase.DONE: set(),
}


class Range(enum.Enum):
    ROCK_BOTTOM = "rock_bottom"
    LOW = "low"
    UNCERTAIN_LOW = "uncertain_low"
    GOOD = "good"
    UNCERTAIN_HIGH = "uncertain_high"
    HIGH = "high"


# lower edges in units of n*sqrt(C); ROCK_BOTTOM/LOW split at n itself
_RANGE_EDGES = ((Range.UNCERTAIN_LOW, 10.0), (Range.GOOD, 200.0),
                (Range.UNCERTAIN_HIGH, 1e3), (Range.HIGH, 1e5))


@dataclass(frozen=True)
class CabParams:
    """Protocol constants.

    ``d`` and ``c`` are left open by the analysis ("sufficiently large"); the
    defaults are a desk-scale calibration of the diagnosis rule, see README.
    ``initial_window=None`` means start at C.
    """
    d: float = 230.0
    c: float = 4.0
    initial_window: float | None = None
    min_window_floor: float = 2.0
    pessimistic_sampling: bool = False

    def __post_init__(self):
        if not (self.d > 0 and self.c > 0):
            raise ValueError("d and c must be positive")
        if self.initial_window is not None and self.initial_window < 1:
            raise ValueError("initial window must be >= 1")
        if self.min_window_floor < 2:
            raise ValueError("window floor must be >= 2")

    def start_window(self, C: float) -> float:
        w = C if self.initial_window is None else self.initial_window
        return max(float(w), self.min_window_floor)


@dataclass
class SampleStats:
    successes: int = 0
    collisions: int = 0
    sample_len: int = 0

    def __post_init__(self):
        if min(self.successes, self.collisions, self.sample_len) < 0:
            raise ValueError("sample counts cannot be negative")
        if self.successes + self.collisions > self.sample_len:
            raise ValueError("more events than slots in the sample")


@dataclass
class CabState:
    w_cur: float
    phase: Phase = Phase.SAMPLING
    sample: SampleStats = field(default_factory=SampleStats)
    decisions: list[tuple[float, Action]] = field(default_factory=list)

    def move(self, phase: Phase) -> None:
        if phase not in _TRANSITIONS[self.phase]:
            raise RuntimeError(f"illegal phase transition {self.phase} -> {phase}")
        self.phase = phase


def _ln(w: float) -> float:
    return math.log(max(w, 2.0))


def _lg(w: float) -> float:
    return math.log2(max(w, 2.0))


def sample_size(w_cur: float, C: float, d: float) -> int:
    return max(1, math.ceil(d * math.sqrt(C) * _ln(w_cur)))


def diagnosis_thresholds(w_cur: float, C: float, d: float) -> tuple[float, float, float]:
    """(min successes, max successes, collision trigger) for one diagnosis."""
    lnw = _ln(w_cur)
    return (2 * d * lnw / 1e5,
            d * lnw / (20 * E),
            d * math.sqrt(C) * lnw / (8 * E * E))


def diagnose(stats: SampleStats, w_cur: float, C: float, d: float) -> Action:
    few, many, coll_trigger = diagnosis_thresholds(w_cur, C, d)
    crowded = stats.collisions >= coll_trigger
    if stats.successes > few:
        if stats.successes <= many:
            return Action.DOUBLE if crowded else Action.START_RUNDOWN
        return Action.DOUBLE
    return Action.DOUBLE if crowded else Action.HALVE


def collect_sample(state: CabState, params: CabParams, C: float, channel: Channel) -> SampleStats:
    if state.phase is not Phase.SAMPLING:
        raise RuntimeError(f"collect_sample called in phase {state.phase}")
    s = sample_size(state.w_cur, C, params.d)
    st = channel.run_window(1.0 / state.w_cur, s, "sample",
                            deactivate=not params.pessimistic_sampling)
    state.sample = SampleStats(st.successes, st.collisions, st.slots)
    return state.sample


@dataclass
class RunDownReport:
    w0: float
    halving_windows: int
    tail_windows: int
    remaining: int
    slots: int
    successes: int
    collisions: int

    @property
    def incomplete(self) -> bool:
        return self.remaining > 0


def rundown_schedule(w_start: float, C: float, c: float):
    """Yield (window_slots, send_prob, phase_label) for one RunDown execution."""
    w0 = w_start
    stop = 8 * math.sqrt(C) * _lg(w0)
    w = w0
    while w >= stop:
        yield math.ceil(w), min(1.0, 2.0 / w), "rundown"
        w /= 2
    for _ in range(math.ceil(c * _ln(w0))):
        yield math.ceil(w0), min(1.0, 2.0 / w0), "tail"


def run_down(w_start: float, C: float, c: float, channel: Channel, *,
             stop_when_done: bool = False, state: CabState | None = None) -> RunDownReport:
    """Execute RunDown on the packets currently active in ``channel``.

    Packets still active after the tail windows are reported in
    ``remaining``; that is a measurable failure, not an exception.
    """
    rep = RunDownReport(w0=w_start, halving_windows=0, tail_windows=0, remaining=0,
                        slots=0, successes=0, collisions=0)
    for slots, p, label in rundown_schedule(w_start, C, c):
        if stop_when_done and channel.done:
            break
        if channel.exhausted:
            break
        if label == "rundown":
            rep.halving_windows += 1
        else:
            if state is not None and state.phase is Phase.RUNDOWN_LOOP:
                state.move(Phase.TAIL_WINDOWS)
            rep.tail_windows += 1
        st: WindowStats = channel.run_window(p, slots, label, stop_when_done=stop_when_done)
        rep.slots += st.slots
        rep.successes += st.successes
        rep.collisions += st.collisions
    rep.remaining = channel.active
    return rep


def safety_cap(n: int, C: float) -> int:
    return int(1e6 + 1e4 * n * math.sqrt(C) * math.log(max(n, 2)) ** 2)


def cab_execute(n: int, params: ChannelParams, cab: CabParams = CabParams(),
                engine: EngineMode = EngineMode.AGGREGATE, rng: Rng | None = None, *,
                seed: int = 0, trace: bool = False, cap: int | None = None) -> TrialResult:
    """Run CAB with ``n`` packets until all succeed or the slot cap is hit."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if rng is None:
        from .channel import make_rng
        rng = make_rng(seed)
    C = params.collision_cost
    channel = Channel(n, params, rng, engine, trace=trace,
                      cap=safety_cap(n, C) if cap is None else cap)
    state = CabState(w_cur=cab.start_window(C))
    rundowns: list[RunDownReport] = []

    while not channel.done and not channel.exhausted:
        collect_sample(state, cab, C, channel)
        if channel.done or channel.exhausted:
            break
        state.move(Phase.DIAGNOSING)
        action = diagnose(state.sample, state.w_cur, C, cab.d)
        state.decisions.append((state.w_cur, action))
        if action is Action.DOUBLE:
            state.w_cur *= 2
        elif action is Action.HALVE:
            state.w_cur = max(state.w_cur / 2, cab.min_window_floor)
        else:
            state.move(Phase.RUNDOWN_LOOP)
            rep = run_down(state.w_cur, C, cab.c, channel, stop_when_done=True, state=state)
            rundowns.append(rep)
            if channel.done or channel.exhausted:
                break
            # RunDown halves its own copy of the window; the repeat loop resumes at w0
            if state.phase is Phase.RUNDOWN_LOOP:
                state.move(Phase.TAIL_WINDOWS)
        state.move(Phase.SAMPLING)
    if channel.done:
        state.phase = Phase.DONE

    m = channel.metrics
    m.check()
    return TrialResult(
        protocol="CAB", n=n, C=C, seed=seed,
        makespan=m.total_slots, collisions=m.collisions,
        collision_cost=m.collision_cost_total, successes=m.successes if not cab.pessimistic_sampling
        else n - channel.active,
        incomplete=not channel.done,
        phase_breakdown=m.breakdown(),
        decision_trace=list(state.decisions),
        extras={"rundowns": len(rundowns),
                "rundown_leftovers": sum(1 for r in rundowns if r.incomplete),
                "halving_windows": [r.halving_windows for r in rundowns],
                "rundown_w0": [r.w0 for r in rundowns]},
        trace=channel.trace,
    )


def classify_range(w: float, n: int, C: float) -> Range:
    """Ground-truth range of window ``w``; test harness only."""
    if w < n:
        return Range.ROCK_BOTTOM
    unit = n * math.sqrt(C)
    found = Range.LOW
    for rng_name, edge in _RANGE_EDGES:
        if w >= edge * unit:
            found = rng_name
    return found
