"""Exact slot probabilities, closed-form bounds on them, and contention-trace analysis.

Everything here is pure.  Fair inputs are given as (m, p); heterogeneous
inputs as a vector of per-packet sending probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .channel import ContentionTrace

CLOSED_FORM_MAX_LEN = 30
BRUTE_MAX_LEN = 14
# Above this contention the low-contention collision bound does not apply and
# each slot is charged the high-contention floor instead.
LOW_CONTENTION_MAX = 2.0
HIGH_CONTENTION_COLLISION_FLOOR = 0.1


def _check_p(p):
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p}")


def _pow1m(p, k):
    """(1-p)**k evaluated in log space."""
    if k == 0:
        return 1.0
    if p >= 1.0:
        return 0.0
    return math.exp(k * math.log1p(-p))


def exact_empty_prob(m: int, p: float) -> float:
    _check_p(p)
    return _pow1m(p, m)


def exact_success_prob(m: int, p: float) -> float:
    _check_p(p)
    if m <= 0 or p == 0.0:
        return 0.0
    return m * p * _pow1m(p, m - 1)


def exact_collision_prob(m: int, p: float) -> float:
    """P(at least two of m senders).  Uses the binomial tail identity
    P(X >= 2) = I_p(2, m-1), which avoids cancellation for small m*p."""
    _check_p(p)
    if m < 2 or p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    return float(betainc(2.0, m - 1.0, p))


def collision_prob_array(m, p) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    p = np.asarray(p, dtype=float)
    out = np.zeros(np.broadcast(m, p).shape)
    mm, pp = np.broadcast_arrays(m, p)
    ok = (mm >= 2) & (pp > 0)
    full = ok & (pp >= 1.0)
    mid = ok & ~full
    out[full] = 1.0
    out[mid] = betainc(2.0, mm[mid] - 1.0, pp[mid])
    return out


def collision_upper_bound(m: int, p: float) -> float:
    """2 m^2 p^2 / (1 - m p), valid only below p = 1/m."""
    _check_p(p)
    if m < 1:
        raise ValueError("need at least one packet")
    if m * p >= 1.0:
        raise ValueError(f"bound requires p < 1/m (m={m}, p={p})")
    return 2.0 * m * m * p * p / (1.0 - m * p)


def success_upper_bound(con: float) -> float:
    if con < 0:
        raise ValueError("contention cannot be negative")
    return math.e * con * math.exp(-con)


def _as_vector(pv) -> np.ndarray:
    v = np.asarray(pv, dtype=float).ravel()
    if v.size < 1:
        raise ValueError("probability vector must be non-empty")
    if np.any(~np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
        raise ValueError("probability vector entries must lie in [0, 1]")
    return v


def _collision_recurrence(v: np.ndarray) -> float:
    """P(>= 2 senders) by adding packets one at a time.  Every update adds
    nonnegative terms, so tiny probabilities keep full relative accuracy where
    1 - P(empty) - P(success) would cancel to zero."""
    e, s, c = 1.0, 0.0, 0.0
    for p in v:
        e, s, c = e * (1.0 - p), s * (1.0 - p) + e * p, c + s * p
    return c


def _closed_form(v: np.ndarray) -> tuple[float, float, float]:
    q = 1.0 - v
    # products of (1 - p_i) over all i != j, without dividing by (1 - p_j)
    prefix = np.concatenate(([1.0], np.cumprod(q[:-1])))
    suffix = np.concatenate((np.cumprod(q[::-1][:-1])[::-1], [1.0]))
    p_empty = float(np.prod(q))
    p_success = float(np.sum(v * prefix * suffix))
    return p_empty, p_success, _collision_recurrence(v)


def _brute(v: np.ndarray) -> tuple[float, float, float]:
    # weight of every send subset, built one packet at a time
    weights = np.ones(1)
    sizes = np.zeros(1, dtype=np.int64)
    for p in v:
        weights = np.concatenate((weights * (1.0 - p), weights * p))
        sizes = np.concatenate((sizes, sizes + 1))
    return (float(weights[sizes == 0].sum()), float(weights[sizes == 1].sum()),
            float(weights[sizes >= 2].sum()))


def hetero_slot_probs(pv, mode: str = "closed") -> tuple[float, float, float]:
    """(P(empty), P(success), P(collision)) when packet i sends w.p. pv[i].

    ``mode="brute"`` sums the probability of each of the 2**k send subsets.
    """
    v = _as_vector(pv)
    if mode == "closed":
        if v.size > CLOSED_FORM_MAX_LEN:
            raise ValueError(f"closed form supports length <= {CLOSED_FORM_MAX_LEN}")
        return _closed_form(v)
    if mode == "brute":
        if v.size > BRUTE_MAX_LEN:
            raise ValueError(f"subset enumeration supports length <= {BRUTE_MAX_LEN}")
        return _brute(v)
    raise ValueError(f"unknown mode {mode!r}")


def contention(pv) -> float:
    return float(_as_vector(pv).sum())


def _pair_mass(v: np.ndarray) -> float:
    """Con^2 - sum p^2, i.e. the sum of p_i p_j over ordered pairs i != j.
    Accumulated from nonnegative terms so it never cancels."""
    s = np.sort(v)
    before = np.concatenate(([0.0], np.cumsum(s)[:-1]))
    return float(2.0 * np.sum(s * before))


def delta(pv) -> float:
    """Second-largest over largest sending probability."""
    v = _as_vector(pv)
    top = float(v.max())
    if top == 0.0:
        raise ValueError("delta is undefined for the all-zero vector")
    if v.size == 1:
        return 0.0
    second = float(np.partition(v, -2)[-2])
    return second / top


def collision_lower_bound_lowcon(pv) -> float:
    v = _as_vector(pv)
    if v.sum() > LOW_CONTENTION_MAX:
        raise ValueError(f"bound requires contention <= 2, got {v.sum()}")
    return _pair_mass(v) / 110.0


def check_balance_inequality(pv) -> bool:
    """Con^2 - sum p^2 >= delta * Con^2 / 2."""
    v = _as_vector(pv)
    con = float(v.sum())
    lhs = _pair_mass(v)
    rhs = delta(v) * con * con / 2.0
    return lhs >= rhs - 1e-12 * con * con


def taylor_facts_check(x: float) -> bool:
    """Check the exponential bounds on 1 - x that hold at ``x``.

    1 - x <= exp(-x) everywhere; 1 - x >= exp(-x/(1-x)) on [0, 1);
    1 - x >= exp(-2x) on [0, 1/2].  Compared in log space.
    """
    x = float(x)
    ok = True
    if x < 1.0:
        ok &= math.log1p(-x) <= -x
    else:
        ok &= (1.0 - x) <= math.exp(-x)
    if 0.0 <= x < 1.0:
        ok &= math.log1p(-x) >= -x / (1.0 - x)
    if 0.0 <= x <= 0.5:
        ok &= math.log1p(-x) >= -2.0 * x
    return bool(ok)


@dataclass
class TraceReport:
    n_slots: int
    sum_con: float
    delta_min: float
    jensen_lower_bound: float
    expected_collision_cost: float
    low_contention_slots: int
    high_contention_slots: int
    jensen_all_slots: float

    @property
    def bound_holds(self) -> bool:
        return bool(self.expected_collision_cost >= self.jensen_lower_bound * (1 - 1e-12))

    def as_dict(self) -> dict:
        d = dict(vars(self))
        d["bound_holds"] = self.bound_holds
        return d


def analyze_trace(trace: ContentionTrace, C: float) -> TraceReport:
    """Contention totals and the Jensen-type lower bound on collision cost.

    The squared-contention bound only covers slots with contention <= 2; every
    slot above that is charged the floor probability 1/10 instead, so the
    reported bound is (delta_min*C/220)*(sum_low Con)^2/|low| + C/10*|high|.
    ``jensen_all_slots`` is the same expression applied naively to all slots.
    """
    k, p, count = trace.fair_arrays()
    con_f = k * p
    dmin = math.inf
    if k.size:
        # a fair slot with one sender has delta 0, with two or more delta 1
        dmin = 0.0 if np.any(k == 1) else 1.0
    cost = float(np.sum(collision_prob_array(k, p) * count)) * C
    con_h = []
    for pv in trace.hetero:
        con_h.append(float(pv.sum()))
        dmin = min(dmin, delta(pv))
        cost += _collision_recurrence(pv) * C
    con_h = np.asarray(con_h)
    n_slots = int(count.sum()) + con_h.size
    if n_slots == 0:
        raise ValueError("trace has no slots")

    low_f = con_f <= LOW_CONTENTION_MAX
    low_h = con_h <= LOW_CONTENTION_MAX
    sum_con = float(np.sum(con_f * count) + con_h.sum())
    sum_low = float(np.sum(con_f[low_f] * count[low_f]) + con_h[low_h].sum())
    n_low = int(count[low_f].sum() + low_h.sum())
    n_high = n_slots - n_low
    dmin = float(dmin)
    jensen = (dmin * C / 220.0) * sum_low ** 2 / n_low if n_low else 0.0
    jensen += HIGH_CONTENTION_COLLISION_FLOOR * C * n_high
    jensen_all = (dmin * C / 220.0) * sum_con ** 2 / n_slots
    return TraceReport(n_slots=n_slots, sum_con=sum_con, delta_min=dmin,
                       jensen_lower_bound=jensen, expected_collision_cost=cost,
                       low_contention_slots=n_low, high_contention_slots=n_high,
                       jensen_all_slots=jensen_all)


# trace files ----------------------------------------------------------------

def _is_int_token(tok: str) -> bool:
    return tok.isdigit()


def parse_trace(lines) -> ContentionTrace:
    """Read ``slot, m, p`` (fair) or ``slot, p1, ..., pk`` records.

    A three-field record whose middle field is a bare integer is read as fair;
    writers emit probabilities with a decimal point so the forms never clash.
    Blank lines and lines starting with ``#`` are skipped.
    """
    tr = ContentionTrace()
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = [t.strip() for t in line.split(",")]
        if len(toks) < 2 or not _is_int_token(toks[0]):
            raise ValueError(f"line {lineno}: malformed trace record {line!r}")
        try:
            if len(toks) == 3 and _is_int_token(toks[1]):
                p = float(toks[2])
                _check_p(p)
                tr.add_fair(int(toks[1]), p, 1)
            else:
                tr.add_hetero(_as_vector([float(t) for t in toks[1:]]))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return tr


def read_trace(path) -> ContentionTrace:
    with open(path) as fh:
        return parse_trace(fh)


def write_trace(trace: ContentionTrace, path) -> None:
    with open(path, "w") as fh:
        for line in trace.iter_lines():
            fh.write(line + "\n")
