"""Slotted multiple-access channel with ternary feedback.

Only fair protocols are simulated here: in every slot all active packets
share one sending probability, so the aggregate engines track nothing but
the active count.  The per-packet engine keeps identities and serves as an
oracle for the aggregate paths.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

Rng = np.random.Generator

# m*p below this switches the aggregate engine to geometric event skipping
EVENT_SKIP_THRESHOLD = 0.1
_CHUNK_MIN = 8
_CHUNK_MAX = 4096


def make_rng(seed: int, *stream: int) -> Rng:
    """Counter-based (Philox) generator keyed by ``seed`` and an optional stream path."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence([int(seed), *(int(s) for s in stream)])
    return np.random.Generator(np.random.Philox(ss))


class SlotKind(enum.Enum):
    EMPTY = "empty"
    SUCCESS = "success"
    COLLISION = "collision"


@dataclass(frozen=True)
class SlotOutcome:
    kind: SlotKind
    senders: int

    def __post_init__(self):
        expected = classify(self.senders)
        if expected is not self.kind:
            raise ValueError(f"{self.kind} inconsistent with {self.senders} senders")

    @classmethod
    def of(cls, senders: int) -> "SlotOutcome":
        return cls(classify(senders), int(senders))


def classify(senders: int) -> SlotKind:
    if senders < 0:
        raise ValueError("sender count cannot be negative")
    if senders == 0:
        return SlotKind.EMPTY
    if senders == 1:
        return SlotKind.SUCCESS
    return SlotKind.COLLISION


@dataclass(frozen=True)
class ChannelParams:
    collision_cost: float
    kappa: float = 2.0

    def __post_init__(self):
        if not self.collision_cost >= 1:
            raise ValueError(f"collision cost must be >= 1, got {self.collision_cost}")
        if self.kappa < 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")

    def validate_for(self, n: int) -> None:
        """Check 1 <= C <= n**kappa once the packet count is known."""
        if n < 2:
            raise ValueError(f"n must be >= 2, got {n}")
        # tiny slack so that e.g. C = n**0.5 evaluated in floats is accepted
        if self.collision_cost > float(n) ** self.kappa * (1 + 1e-12):
            raise ValueError(
                f"collision cost {self.collision_cost} exceeds n^kappa = {n}^{self.kappa}"
            )


class EngineMode(enum.Enum):
    AGGREGATE = "aggregate"
    PER_PACKET = "per_packet"
    EVENT_SKIP = "event_skip"

    @classmethod
    def parse(cls, text: str | "EngineMode") -> "EngineMode":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("-", "").replace("_", "")
        for mode in cls:
            if mode.value.replace("_", "") == key:
                return mode
        raise ValueError(f"unknown engine mode {text!r}")


@dataclass
class PhaseCounts:
    total_slots: int = 0
    empties: int = 0
    successes: int = 0
    collisions: int = 0


@dataclass
class Metrics:
    collision_unit: float = 1.0
    total_slots: int = 0
    empties: int = 0
    successes: int = 0
    collisions: int = 0
    collision_cost_total: float = 0.0
    per_phase: dict[str, PhaseCounts] = field(default_factory=dict)

    def add(self, phase: str, empties: int = 0, successes: int = 0, collisions: int = 0) -> None:
        empties, successes, collisions = int(empties), int(successes), int(collisions)
        slots = empties + successes + collisions
        self.total_slots += slots
        self.empties += empties
        self.successes += successes
        self.collisions += collisions
        # recomputed rather than accumulated so it equals collisions * C exactly
        self.collision_cost_total = self.collisions * self.collision_unit
        pc = self.per_phase.setdefault(phase, PhaseCounts())
        pc.total_slots += slots
        pc.empties += empties
        pc.successes += successes
        pc.collisions += collisions

    def check(self) -> None:
        assert self.empties + self.successes + self.collisions == self.total_slots
        assert self.collision_cost_total == self.collisions * self.collision_unit

    def breakdown(self) -> dict[str, dict[str, int]]:
        return {k: vars(v).copy() for k, v in self.per_phase.items()}


def record_outcome(metrics: Metrics, outcome: SlotOutcome, params: ChannelParams,
                   phase: str) -> Metrics:
    metrics.collision_unit = params.collision_cost
    if outcome.kind is SlotKind.EMPTY:
        metrics.add(phase, empties=1)
    elif outcome.kind is SlotKind.SUCCESS:
        metrics.add(phase, successes=1)
    else:
        metrics.add(phase, collisions=1)
    return metrics


def _check_prob(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"sending probability must lie in [0, 1], got {p}")


def _log_idle(m: int, p: float) -> float:
    """log((1-p)^m), finite for p < 1."""
    return m * math.log1p(-p)


def _nonempty_prob(m: int, p: float) -> float:
    if p >= 1.0:
        return 1.0 if m > 0 else 0.0
    return -math.expm1(_log_idle(m, p))


def _success_prob(m: int, p: float) -> float:
    if m == 0 or p == 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0 if m == 1 else 0.0
    return m * p * math.exp(_log_idle(m - 1, p))


def step_slot_aggregate(m_active: int, p: float, rng: Rng) -> SlotOutcome:
    _check_prob(p)
    if m_active < 0:
        raise ValueError("active count cannot be negative")
    return SlotOutcome.of(int(rng.binomial(m_active, p)))


def step_slot_per_packet(active_flags, p: float, rng: Rng) -> tuple[SlotOutcome, int | None]:
    """One slot where each flagged packet sends independently.

    Returns the outcome and, on a success, the index of the packet that got through.
    """
    _check_prob(p)
    flags = np.asarray(active_flags, dtype=bool)
    sends = flags & (rng.random(flags.shape[0]) < p)
    idx = np.flatnonzero(sends)
    outcome = SlotOutcome.of(idx.size)
    winner = int(idx[0]) if idx.size == 1 else None
    return outcome, winner


def _collision_senders(m: int, p: float, p_multi: float, rng: Rng) -> int:
    """Draw Binomial(m, p) conditioned on at least two senders."""
    if p >= 1.0:
        return m
    if p_multi >= 0.25:
        while True:
            k = int(rng.binomial(m, p))
            if k >= 2:
                return k
    # inversion over the truncated pmf
    u = rng.random() * p_multi
    ratio = p / (1.0 - p)
    pmf = 0.5 * m * (m - 1) * p * p * math.exp(_log_idle(m - 2, p))
    k, cum = 2, pmf
    while cum < u and k < m:
        pmf *= (m - k) / (k + 1) * ratio
        k += 1
        cum += pmf
        if pmf == 0.0:
            break
    return k


def skip_to_next_nonempty(m_active: int, p: float, budget: float | None, rng: Rng
                          ) -> tuple[int, SlotOutcome | None]:
    """Jump over the empty slots preceding the next non-empty one.

    ``budget`` bounds the number of slots examined (``None`` or ``inf`` means
    unbounded).  If no event happens within the budget the outcome is None and
    ``skipped == budget``.
    """
    _check_prob(p)
    if m_active < 1:
        raise ValueError("event skipping needs at least one active packet")
    unbounded = budget is None or math.isinf(budget)
    if p == 0.0:
        if unbounded:
            raise ValueError("p = 0 with an unbounded budget never terminates")
        return int(budget), None
    if not unbounded and budget < 1:
        raise ValueError("budget must be >= 1")

    q = _nonempty_prob(m_active, p)
    skipped = int(rng.geometric(q)) - 1
    if not unbounded and skipped >= budget:
        return int(budget), None
    ps = _success_prob(m_active, p)
    if rng.random() * q < ps:
        return skipped, SlotOutcome(SlotKind.SUCCESS, 1)
    k = _collision_senders(m_active, p, max(q - ps, 0.0), rng)
    return skipped, SlotOutcome(SlotKind.COLLISION, k)


@dataclass
class WindowStats:
    successes: int = 0
    collisions: int = 0
    slots: int = 0


class ContentionTrace:
    """Per-slot sending probabilities over the slots with >= 2 active packets.

    Fair slots are stored run-length encoded as (k, p, count): ``k`` packets
    send with probability ``p`` and every other packet with probability 0.
    Heterogeneous slots are stored one ProbVector per slot.
    """

    def __init__(self):
        self._k: list[np.ndarray] = []
        self._p: list[np.ndarray] = []
        self._count: list[np.ndarray] = []
        self.hetero: list[np.ndarray] = []

    def add_fair(self, k, p, count) -> None:
        k = np.atleast_1d(np.asarray(k, dtype=np.int64))
        p = np.broadcast_to(np.asarray(p, dtype=float), k.shape)
        count = np.broadcast_to(np.asarray(count, dtype=np.int64), k.shape)
        keep = (k > 0) & (p > 0) & (count > 0)  # zero-contention slots are excluded
        if keep.any():
            self._k.append(k[keep].copy())
            self._p.append(np.array(p[keep]))
            self._count.append(np.array(count[keep]))

    def add_hetero(self, pv) -> None:
        pv = np.asarray(pv, dtype=float)
        if pv.size and pv.max() > 0:
            self.hetero.append(pv)

    def fair_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self._k:
            e = np.empty(0)
            return e.astype(np.int64), e, e.astype(np.int64)
        return (np.concatenate(self._k), np.concatenate(self._p), np.concatenate(self._count))

    @property
    def n_slots(self) -> int:
        return int(sum(c.sum() for c in self._count)) + len(self.hetero)

    def iter_lines(self):
        """Yield ``slot_index, k, p`` / ``slot_index, p_1, ..., p_k`` text records."""
        slot = 0
        k, p, count = self.fair_arrays()
        for ki, pi, ci in zip(k, p, count):
            for _ in range(int(ci)):
                yield f"{slot}, {int(ki)}, {float(pi)!r}"
                slot += 1
        for pv in self.hetero:
            yield f"{slot}, " + ", ".join(repr(float(x)) for x in pv)
            slot += 1


class CapExhausted(Exception):
    """Raised inside a run when the per-trial slot cap is reached."""


class Channel:
    """Stateful channel holding the ground-truth packet population.

    Protocols drive it window by window; only aggregate feedback flows back.
    """

    def __init__(self, n: int, params: ChannelParams, rng: Rng,
                 engine: EngineMode = EngineMode.AGGREGATE, *, trace: bool = False,
                 cap: int | None = None, auto_skip: bool = True):
        if n < 0:
            raise ValueError("packet count cannot be negative")
        self.n = n
        self.params = params
        self.rng = rng
        self.engine = EngineMode.parse(engine)
        self.auto_skip = auto_skip
        self.cap = cap
        self.exhausted = False
        self.metrics = Metrics(collision_unit=params.collision_cost)
        self.trace = ContentionTrace() if trace else None
        self._ids = np.arange(n) if self.engine is EngineMode.PER_PACKET else None
        self._active = n

    @property
    def active(self) -> int:
        return self._active

    @property
    def done(self) -> bool:
        return self._active == 0

    def _room(self, slots: int) -> int:
        if self.cap is None:
            return slots
        room = self.cap - self.metrics.total_slots
        if room < slots:
            self.exhausted = True
            return max(room, 0)
        return slots

    def _trace_fair(self, p: float, slots: int) -> None:
        if self.trace is not None and self._active >= 2 and slots > 0:
            self.trace.add_fair(self._active, p, slots)

    def _deactivate(self, winner: int | None = None) -> None:
        self._active -= 1
        if self._ids is not None and winner is not None:
            self._ids = np.delete(self._ids, winner)

    # fixed-probability windows -------------------------------------------------

    def run_window(self, p: float, slots: int, phase: str, *, deactivate: bool = True,
                   stop_when_done: bool = True) -> WindowStats:
        """Run ``slots`` slots in which every active packet sends with probability ``p``.

        With ``deactivate`` a lone sender terminates at once.  With
        ``stop_when_done`` the window is cut short the moment no packet is left.
        """
        _check_prob(p)
        slots = self._room(int(slots))
        if self.engine is EngineMode.PER_PACKET:
            return self._window_per_packet(p, slots, phase, deactivate, stop_when_done)
        if not deactivate:
            return self._window_frozen(p, slots, phase)
        return self._window_aggregate(p, slots, phase, stop_when_done)

    def _window_per_packet(self, p, slots, phase, deactivate, stop_when_done):
        st = WindowStats()
        m = self.metrics
        run_empty = 0
        for _ in range(slots):
            if self._active == 0 and stop_when_done:
                break
            self._trace_fair(p, 1)
            sends = np.flatnonzero(self.rng.random(self._ids.size) < p)
            st.slots += 1
            if sends.size == 0:
                run_empty += 1
                continue
            if run_empty:
                m.add(phase, empties=run_empty)
                run_empty = 0
            if sends.size == 1:
                st.successes += 1
                m.add(phase, successes=1)
                if deactivate:
                    self._deactivate(int(sends[0]))
            else:
                st.collisions += 1
                m.add(phase, collisions=1)
        if run_empty:
            m.add(phase, empties=run_empty)
        return st

    def _window_frozen(self, p, slots, phase):
        """Packets never leave: the slot outcomes are i.i.d. for the whole window."""
        st = WindowStats(slots=slots)
        mact = self._active
        if slots == 0:
            return st
        self._trace_fair(p, slots)
        if mact == 0 or p == 0.0:
            self.metrics.add(phase, empties=slots)
            return st
        if self.engine is EngineMode.EVENT_SKIP:
            left = slots
            empties = 0
            while left > 0:
                skipped, out = skip_to_next_nonempty(mact, p, left, self.rng)
                empties += skipped
                left -= skipped
                if out is None:
                    break
                left -= 1
                if out.kind is SlotKind.SUCCESS:
                    st.successes += 1
                else:
                    st.collisions += 1
        else:
            ps = _success_prob(mact, p)
            pe = 1.0 - _nonempty_prob(mact, p)
            pc = max(0.0, 1.0 - ps - pe)
            tot = ps + pe + pc
            counts = self.rng.multinomial(slots, [pe / tot, ps / tot, pc / tot])
            st.successes, st.collisions = int(counts[1]), int(counts[2])
        self.metrics.add(phase, empties=slots - st.successes - st.collisions,
                         successes=st.successes, collisions=st.collisions)
        return st

    def _window_aggregate(self, p, slots, phase, stop_when_done):
        st = WindowStats()
        metrics = self.metrics
        remaining = slots
        while remaining > 0:
            mact = self._active
            if mact == 0:
                if stop_when_done:
                    break
                metrics.add(phase, empties=remaining)
                st.slots += remaining
                break
            if p == 0.0:
                metrics.add(phase, empties=remaining)
                st.slots += remaining
                break
            if self.engine is EngineMode.EVENT_SKIP or (
                    self.auto_skip and mact * p < EVENT_SKIP_THRESHOLD):
                skipped, out = skip_to_next_nonempty(mact, p, remaining, self.rng)
                used = skipped + (out is not None)
                self._trace_fair(p, used)
                st.slots += used
                remaining -= used
                if out is None:
                    metrics.add(phase, empties=skipped)
                elif out.kind is SlotKind.SUCCESS:
                    metrics.add(phase, empties=skipped, successes=1)
                    st.successes += 1
                    self._deactivate()
                else:
                    metrics.add(phase, empties=skipped, collisions=1)
                    st.collisions += 1
                continue
            ps = _success_prob(mact, p)
            size = min(remaining, _CHUNK_MAX)
            if ps > 0:
                size = min(size, max(_CHUNK_MIN, math.ceil(2.0 / ps)))
            senders = self.rng.binomial(mact, p, size=size)
            hits = np.flatnonzero(senders == 1)
            take = int(hits[0]) + 1 if hits.size else size
            block = senders[:take]
            coll = int(np.count_nonzero(block >= 2))
            succ = 1 if hits.size else 0
            self._trace_fair(p, take)
            metrics.add(phase, empties=take - coll - succ, successes=succ, collisions=coll)
            st.slots += take
            st.successes += succ
            st.collisions += coll
            remaining -= take
            if succ:
                self._deactivate()
        return st

    # uniform-slot-choice windows (BEB / STB) ---------------------------------

    def run_uniform_window(self, w: int, phase: str, *, stop_when_done: bool = True) -> WindowStats:
        """Every active packet picks one slot of a ``w``-slot window uniformly at random."""
        w = int(w)
        if w < 1:
            raise ValueError("window must contain at least one slot")
        st = WindowStats()
        m0 = self._active
        if m0 == 0:
            if not stop_when_done:
                n_slots = self._room(w)
                self.metrics.add(phase, empties=n_slots)
                st.slots = n_slots
            return st
        if self.engine is EngineMode.PER_PACKET:
            picks = self.rng.integers(0, w, size=self._ids.size)
            occ = np.bincount(picks, minlength=w)
        else:
            occ = self.rng.multinomial(m0, np.full(w, 1.0 / w))
        single = occ == 1
        n_succ = int(single.sum())
        length = w
        if stop_when_done and n_succ == m0:
            length = int(np.flatnonzero(single)[-1]) + 1
        length = self._room(length)
        occ = occ[:length]
        single = single[:length]
        if self.trace is not None:
            self._trace_uniform(occ, single, w, m0)
        succ = int(single.sum())
        coll = int(np.count_nonzero(occ >= 2))
        self.metrics.add(phase, empties=length - succ - coll, successes=succ, collisions=coll)
        if self._ids is not None:
            won = np.isin(picks, np.flatnonzero(single))
            self._ids = self._ids[~won]
        self._active -= succ
        st.successes, st.collisions, st.slots = succ, coll, length
        return st

    def _trace_uniform(self, occ, single, w, m0):
        # slot j: u_j packets have not yet used their pick, each sends w.p. 1/(w-j)
        j = np.arange(occ.size)
        unsent = m0 - np.concatenate(([0], np.cumsum(occ)[:-1]))
        active = m0 - np.concatenate(([0], np.cumsum(single)[:-1]))
        in_s = (active >= 2) & (unsent >= 1)
        self.trace.add_fair(unsent[in_s], 1.0 / (w - j[in_s]), 1)

    # per-slot variable probability (folklore estimator) -----------------------

    def run_slot(self, p: float, phase: str) -> SlotOutcome:
        _check_prob(p)
        if self._room(1) == 0:
            raise CapExhausted
        self._trace_fair(p, 1)
        if self.engine is EngineMode.PER_PACKET:
            out, winner = step_slot_per_packet(np.ones(self._ids.size, bool), p, self.rng)
        else:
            out, winner = step_slot_aggregate(self._active, p, self.rng), None
        record_outcome(self.metrics, out, self.params, phase)
        if out.kind is SlotKind.SUCCESS:
            self._deactivate(winner)
        return out
