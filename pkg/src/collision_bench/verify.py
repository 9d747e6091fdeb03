"""Randomized property suites over the bounds module.

Each suite draws its inputs from a seeded generator, evaluates them in
vectorized batches and counts violations.  A suite passes only with zero
violations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from . import bounds
from .channel import make_rng

PARTITION_TOL = 1e-12
ENUM_TOL = 1e-12
_ENUM_BATCH_CELLS = 1 << 22


@dataclass
class SuiteResult:
    name: str
    samples: int
    violations: int
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.samples > 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{status} {self.name}: {self.violations}/{self.samples} violations{extra}"


def _fair_inputs(rng, samples, m_max=10_000):
    m = np.floor(np.exp(rng.uniform(0, math.log(m_max + 1), samples))).astype(np.int64)
    m = np.clip(m, 1, m_max)
    # half log-uniform p, half uniform p, plus the endpoints
    p = np.where(rng.random(samples) < 0.5,
                 10.0 ** rng.uniform(-12, 0, samples), rng.random(samples))
    p[:4] = [0.0, 1.0, 0.0, 1.0]
    m[:4] = [1, 1, 2, 2]
    return m, p


def _fair_probs(m, p):
    m = m.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_q = np.log1p(-p)
        lead = m * p * np.exp((m - 1) * log_q)
    empty = np.where(p < 1, np.exp(m * log_q), np.where(m == 0, 1.0, 0.0))
    succ = np.where(p < 1, lead, np.where(m == 1, 1.0, 0.0))
    succ = np.where(p == 0, 0.0, succ)
    coll = bounds.collision_prob_array(m, p)
    return empty, succ, coll


def suite_partition(rng, samples):
    m, p = _fair_inputs(rng, samples)
    e, s, c = _fair_probs(m, p)
    err = np.abs(e + s + c - 1.0)
    return SuiteResult("probability partition", samples, int(np.sum(err > PARTITION_TOL)),
                       f"max error {err.max():.2e}")


def suite_collision_upper(rng, samples):
    m = np.floor(np.exp(rng.uniform(0, math.log(10_001), samples))).astype(np.int64)
    m = np.clip(m, 1, 10_000)
    # p log-uniform in [1e-12/m, 1/m), strictly below 1/m
    frac = 10.0 ** rng.uniform(-12, 0, samples)
    p = np.nextafter(frac / m, 0)
    p = np.minimum(p, np.nextafter(1.0 / m, 0))
    exact = bounds.collision_prob_array(m, p)
    mp = m * p
    bound = 2 * mp * mp / (1 - mp)
    bad = exact > bound
    return SuiteResult("collision upper bound", samples, int(bad.sum()))


def suite_success_fair(rng, samples):
    m, p = _fair_inputs(rng, samples)
    _, s, _ = _fair_probs(m, p)
    con = m * p
    bound = math.e * con * np.exp(-con)
    bad = s > bound * (1 + 1e-12)
    return SuiteResult("success upper bound (fair)", samples, int(bad.sum()))


def _random_vectors(rng, count, k, scale=None):
    v = rng.random((count, k))
    # a quarter of the rows get exact zeros, another quarter get exact ones
    zero = rng.random((count, k)) < 0.1
    v[: count // 4][zero[: count // 4]] = 0.0
    v[count // 4: count // 2][zero[count // 4: count // 2]] = 1.0
    if scale is not None:
        v *= scale[:, None]
    return v


def _closed_batch(v):
    q = 1.0 - v
    ones = np.ones((v.shape[0], 1))
    prefix = np.concatenate((ones, np.cumprod(q[:, :-1], axis=1)), axis=1)
    suffix = np.concatenate((np.cumprod(q[:, ::-1][:, :-1], axis=1)[:, ::-1], ones), axis=1)
    empty = q.prod(axis=1)
    succ = (v * prefix * suffix).sum(axis=1)
    e = np.ones(v.shape[0])
    s = np.zeros(v.shape[0])
    c = np.zeros(v.shape[0])
    for j in range(v.shape[1]):
        p = v[:, j]
        e, s, c = e * (1 - p), s * (1 - p) + e * p, c + s * p
    return empty, succ, c


def _brute_batch(v):
    count, k = v.shape
    w = np.ones((count, 1))
    size = np.zeros(1, dtype=np.int64)
    for j in range(k):
        pj = v[:, j:j + 1]
        w = np.concatenate((w * (1 - pj), w * pj), axis=1)
        size = np.concatenate((size, size + 1))
    return (w[:, size == 0].sum(axis=1), w[:, size == 1].sum(axis=1),
            w[:, size >= 2].sum(axis=1))


def _per_length(samples, lengths):
    counts = np.full(len(lengths), samples // len(lengths))
    counts[: samples - counts.sum()] += 1
    return zip(lengths, counts)


def suite_enumeration(rng, samples):
    bad = 0
    worst = 0.0
    for k, cnt in _per_length(samples, range(1, bounds.BRUTE_MAX_LEN + 1)):
        v = _random_vectors(rng, cnt, k)
        step = max(1, _ENUM_BATCH_CELLS >> k)
        for lo in range(0, cnt, step):
            blk = v[lo:lo + step]
            a = np.stack(_closed_batch(blk))
            b = np.stack(_brute_batch(blk))
            err = np.abs(a - b).max(axis=0)
            bad += int(np.sum(err > ENUM_TOL))
            worst = max(worst, float(err.max()))
    return SuiteResult("closed form vs subset enumeration", samples, bad,
                       f"max error {worst:.2e}")


def suite_success_hetero(rng, samples):
    bad = 0
    for k, cnt in _per_length(samples, range(1, 31)):
        scale = 10.0 ** rng.uniform(-3, 0, cnt)
        v = _random_vectors(rng, cnt, k, scale)
        _, s, _ = _closed_batch(v)
        con = v.sum(axis=1)
        bad += int(np.sum(s > math.e * con * np.exp(-con) * (1 + 1e-12) + 1e-15))
    return SuiteResult("success upper bound (heterogeneous)", samples, bad)


def _pair_mass_batch(v):
    s = np.sort(v, axis=1)
    before = np.cumsum(s, axis=1) - s
    return 2 * (s * before).sum(axis=1)


def suite_low_contention(rng, samples):
    bad = 0
    done = 0
    worst_ratio = math.inf
    for k, cnt in _per_length(samples, range(1, bounds.BRUTE_MAX_LEN + 1)):
        v = _random_vectors(rng, cnt, k)
        con = v.sum(axis=1)
        # rescale every row to a contention drawn from (0, 2]
        target = 2.0 * (1.0 - rng.random(cnt))
        fac = np.where(con > 0, np.minimum(1.0, target / np.where(con > 0, con, 1)), 1.0)
        v = np.minimum(v * fac[:, None], 1.0)
        v = v[v.sum(axis=1) <= 2.0]
        done += len(v)
        _, _, coll = _closed_batch(v)
        _, _, coll_b = _brute_batch(v)
        lb = _pair_mass_batch(v) / 110.0
        bad += int(np.sum((coll < lb) | (coll_b < lb)))
        pos = lb > 0
        if pos.any():
            worst_ratio = min(worst_ratio, float((coll[pos] / lb[pos]).min()))
    return SuiteResult("low-contention collision lower bound", done, bad,
                       f"min exact/bound ratio {worst_ratio:.3g}")


def suite_balance(rng, samples):
    bad = 0
    done = 0
    for k, cnt in _per_length(samples, range(2, bounds.BRUTE_MAX_LEN + 1)):
        v = _random_vectors(rng, cnt, k)
        # the inequality needs a nonzero entry; patch the rare all-zero rows
        v[v.max(axis=1) == 0, 0] = 0.5
        done += len(v)
        con = v.sum(axis=1)
        top2 = np.sort(v, axis=1)[:, -2:]
        dlt = top2[:, 0] / top2[:, 1]
        lhs = _pair_mass_batch(v)
        bad += int(np.sum(lhs < dlt * con * con / 2 - 1e-12 * con * con))
    return SuiteResult("balance inequality", done, bad)


def suite_taylor(rng, samples):
    x = np.concatenate((rng.uniform(-5, 5, samples // 4), rng.uniform(0, 1, samples // 4),
                        rng.uniform(0, 0.5, samples // 4),
                        10.0 ** rng.uniform(-16, 0, samples - 3 * (samples // 4))))
    x[:3] = [0.0, 0.5, 0.3]
    bad = sum(1 for xi in x if not bounds.taylor_facts_check(float(xi)))
    return SuiteResult("exponential bounds on 1-x", len(x), bad)


def suite_upper_matches_scalar(rng, samples):
    """Spot-check the vectorized paths against the scalar API."""
    n = min(samples, 2000)
    m, p = _fair_inputs(rng, n)
    bad = 0
    for mi, pi in zip(m, p):
        e = bounds.exact_empty_prob(int(mi), float(pi))
        s = bounds.exact_success_prob(int(mi), float(pi))
        c = bounds.exact_collision_prob(int(mi), float(pi))
        ref = float(betainc(2.0, mi - 1.0, pi)) if mi >= 2 and 0 < pi < 1 else c
        bad += abs(e + s + c - 1) > PARTITION_TOL or abs(c - ref) > 1e-15
    return SuiteResult("scalar/vector agreement", n, int(bad))


SUITES = (suite_partition, suite_collision_upper, suite_success_fair, suite_success_hetero,
          suite_low_contention, suite_enumeration, suite_balance, suite_taylor,
          suite_upper_matches_scalar)


def run_all(samples: int = 100_000, seed: int = 0) -> list[SuiteResult]:
    out = []
    for i, suite in enumerate(SUITES):
        out.append(suite(make_rng(seed, 7, i), samples))
    return out
