"""Sequential assignment rules for stratified experiments.

Each rule maps arriving units to arms (or to -1, "not sampled") using a
dedicated stream of uniform variates.  The stream is consumed in a fixed
documented order so that runs are reproducible and prefixes of a run are
unaffected by anything that happens later:

* one variate per assignment decision for propensity-style draws, in unit
  order (a decision that can end in "unassigned" still costs one variate);
* ``block_size - 1`` variates per block for :class:`StratifiedBlocks`,
  drawn via Fisher-Yates at the moment the block's first unit arrives;
* one variate per matched pair, drawn when the pair opens.

Rules never look at outcomes except :class:`TwoStageAdaptive`, which reads
the pilot outcomes once, at the pilot boundary, through the ``observe``
callback supplied by the caller.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .allocation import AllocationMap
from .errors import RuleScenarioMismatch
from .scenario import CLIP_EPS

ObserveFn = Callable[[np.ndarray], np.ndarray]


def _alloc_tag(alloc: AllocationMap) -> str:
    digest = hashlib.sha1(np.ascontiguousarray(alloc.p).tobytes()).hexdigest()
    return digest[:8]


@dataclass(frozen=True, eq=False)
class IidPropensity:
    """Independent draws from p(x, .); leftover mass means unassigned."""

    alloc: AllocationMap

    def describe(self) -> str:
        return f"iid_propensity(p#{_alloc_tag(self.alloc)})"


@dataclass(frozen=True, eq=False)
class StratifiedBlocks:
    """Exact within-block counts per stratum, shuffled block by block.

    Within each stratum, consecutive arrivals form blocks of
    ``block_size``; each complete block realizes arm counts obtained by
    largest-remainder rounding of ``block_size * p(x, w)`` (ties broken
    toward the smaller arm index, unassigned slots last), so every count
    lies in {floor, ceil} of its target.
    """

    alloc: AllocationMap
    block_size: int

    def __post_init__(self) -> None:
        if int(self.block_size) < 2:
            raise ValueError("block_size must be at least 2")
        object.__setattr__(self, "block_size", int(self.block_size))

    def describe(self) -> str:
        return f"stratified_blocks(B={self.block_size},p#{_alloc_tag(self.alloc)})"


@dataclass(frozen=True, eq=False)
class MatchedPairs:
    """Two-arm pairing by arrival order within each stratum.

    The first unit of a pair gets a fair-coin arm; its partner gets the
    complement.  A stratum's dangling unit (odd count) keeps its coin
    draw, which is the fair-coin fallback for leftovers.
    """

    def describe(self) -> str:
        return "matched_pairs"


@dataclass(frozen=True, eq=False)
class TwoStageAdaptive:
    """Pilot phase under a fallback allocation, then plug-in Neyman shares.

    After ``floor(pilot_fraction * n)`` units, per-stratum unbiased sample
    variances of the pilot outcomes give ehat(x) = s1/(s0+s1), clipped to
    [clip_eps, 1-clip_eps].  Strata where either arm has fewer than two
    pilot observations keep the fallback allocation; strata whose pilot
    variances are both zero use 1/2.
    """

    pilot_fraction: float
    fallback: AllocationMap
    clip_eps: float = CLIP_EPS

    def __post_init__(self) -> None:
        if not 0.0 < float(self.pilot_fraction) < 1.0:
            raise ValueError("pilot_fraction must lie strictly between 0 and 1")

    def describe(self) -> str:
        return (
            f"two_stage(pilot={self.pilot_fraction:g},fb#{_alloc_tag(self.fallback)})"
        )


@dataclass(frozen=True, eq=False)
class DeterministicAlternation:
    """Cycle through the arms in unit order; consumes no variates."""

    def describe(self) -> str:
        return "alternation"


@dataclass(frozen=True, eq=False)
class FullTreatment:
    """Every unit gets the same arm; consumes no variates."""

    arm: int

    def describe(self) -> str:
        return f"full_treatment({self.arm})"


DesignRule = Union[
    IidPropensity,
    StratifiedBlocks,
    MatchedPairs,
    TwoStageAdaptive,
    DeterministicAlternation,
    FullTreatment,
]


@dataclass(frozen=True, eq=False)
class AssignmentContext:
    """Everything a sequential assignment decision may depend on.

    ``i`` is the 0-based index of the unit being assigned; ``y_past`` and
    ``w_past`` hold the first ``i`` observed outcomes and assignments.
    ``u`` seeds the rule's uniform stream from its start (an integer or a
    ``numpy.random.SeedSequence``), so the decision is a pure function of
    the context.
    """

    x_all: np.ndarray
    y_past: np.ndarray
    w_past: np.ndarray
    i: int
    u: object

    def __post_init__(self) -> None:
        if len(self.y_past) != self.i or len(self.w_past) != self.i:
            raise ValueError("y_past and w_past must hold exactly i entries")


# ----------------------------------------------------------------------
# Vectorized application.
# ----------------------------------------------------------------------


def _within_stratum_position(x: np.ndarray) -> np.ndarray:
    """Arrival rank of each unit inside its stratum (0-based)."""
    n = len(x)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    sizes = np.diff(np.r_[starts, n])
    ranks = np.arange(n) - np.repeat(starts, sizes)
    pos = np.empty(n, dtype=np.int64)
    pos[order] = ranks
    return pos


def _check_alloc(alloc: AllocationMap, x: np.ndarray, n_arms: int, rule_name: str) -> None:
    if alloc.p.shape[1] != n_arms:
        raise RuleScenarioMismatch(
            f"{rule_name}: allocation covers {alloc.p.shape[1]} arms, scenario has {n_arms}"
        )
    if x.size and int(x.max()) >= alloc.p.shape[0]:
        raise RuleScenarioMismatch(
            f"{rule_name}: stratum index {int(x.max())} outside allocation table"
        )


def _draw_iid(p_table: np.ndarray, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One uniform per unit; arms in index order, leftover mass -> -1."""
    n_arms = p_table.shape[1]
    cum = np.cumsum(p_table, axis=1)
    # Guard against float shortfall on rows meant to assign everyone.
    full = p_table.sum(axis=1) >= 1.0 - 1e-12
    cum[full, -1] = 1.0
    u = rng.random(len(x))
    w = (u[:, None] >= cum[x]).sum(axis=1)
    return np.where(w == n_arms, -1, w).astype(np.int64)


def _fisher_yates(arr: np.ndarray, u: np.ndarray) -> None:
    m = len(arr)
    for j in range(m - 1, 0, -1):
        k = int(u[m - 1 - j] * (j + 1))
        if k > j:  # u is in [0, 1) so this never fires; kept as a guard
            k = j
        arr[j], arr[k] = arr[k], arr[j]


def _block_counts(p_row: np.ndarray, block: int) -> np.ndarray:
    """Largest-remainder rounding of block * [p_0, ..., p_{W-1}, leftover].

    Each resulting count is floor or ceil of its target; ties in the
    remainders are broken toward the smaller category index so the
    rounding is deterministic.
    """
    targets = np.append(p_row, max(0.0, 1.0 - p_row.sum())) * block
    base = np.floor(targets).astype(np.int64)
    deficit = block - int(base.sum())
    if deficit > 0:
        remainders = targets - base
        order = np.lexsort((np.arange(len(targets)), -remainders))
        base[order[:deficit]] += 1
    return base


def _apply_blocks(rule: StratifiedBlocks, x: np.ndarray, n_arms: int,
                  rng: np.random.Generator) -> np.ndarray:
    _check_alloc(rule.alloc, x, n_arms, "stratified_blocks")
    n = len(x)
    b = rule.block_size
    pos = _within_stratum_position(x)
    start_mask = pos % b == 0
    start_idx = np.flatnonzero(start_mask)

    arm_codes = np.append(np.arange(n_arms), -1)
    bases = {}
    templates = np.empty((len(start_idx), b), dtype=np.int64)
    for event, i0 in enumerate(start_idx):
        s = int(x[i0])
        if s not in bases:
            bases[s] = np.repeat(arm_codes, _block_counts(rule.alloc.p[s], b))
        tmpl = bases[s].copy()
        _fisher_yates(tmpl, rng.random(b - 1))
        templates[event] = tmpl

    order = np.lexsort((pos, x))
    start_sorted = start_mask[order]
    event_rank = np.empty(n, dtype=np.int64)
    event_rank[start_idx] = np.arange(len(start_idx))
    block_start_pos = np.flatnonzero(start_sorted)
    block_sizes = np.diff(np.r_[block_start_pos, n])
    event_sorted = np.repeat(event_rank[order][start_sorted], block_sizes)
    w = np.empty(n, dtype=np.int64)
    w[order] = templates[event_sorted, pos[order] % b]
    return w


def _apply_pairs(x: np.ndarray, n_arms: int, rng: np.random.Generator) -> np.ndarray:
    if n_arms != 2:
        raise RuleScenarioMismatch("matched_pairs requires exactly two arms")
    n = len(x)
    pos = _within_stratum_position(x)
    start_mask = pos % 2 == 0
    u = rng.random(int(start_mask.sum()))
    w = np.empty(n, dtype=np.int64)
    w[start_mask] = np.where(u < 0.5, 1, 0)
    order = np.lexsort((pos, x))
    ws = w[order]
    partner = pos[order] % 2 == 1
    ws[partner] = 1 - ws[np.flatnonzero(partner) - 1]
    w[order] = ws
    return w


def _pilot_neyman(rule: TwoStageAdaptive, x_pilot: np.ndarray, w_pilot: np.ndarray,
                  y_pilot: np.ndarray, k: int) -> np.ndarray:
    """Per-stratum plug-in shares from pilot data; NaN marks fallback strata."""
    ehat = np.full(k, np.nan)
    for s in range(k):
        in_s = x_pilot == s
        y0 = y_pilot[in_s & (w_pilot == 0)]
        y1 = y_pilot[in_s & (w_pilot == 1)]
        if len(y0) < 2 or len(y1) < 2:
            continue
        s0 = float(np.sqrt(np.var(y0, ddof=1)))
        s1 = float(np.sqrt(np.var(y1, ddof=1)))
        if s0 + s1 == 0:
            ehat[s] = 0.5
        else:
            ehat[s] = float(np.clip(s1 / (s0 + s1), rule.clip_eps, 1.0 - rule.clip_eps))
    return ehat


def _apply_two_stage(rule: TwoStageAdaptive, x: np.ndarray, n_arms: int,
                     rng: np.random.Generator, observe: ObserveFn,
                     limit: int) -> np.ndarray:
    if n_arms != 2:
        raise RuleScenarioMismatch("two_stage requires exactly two arms")
    _check_alloc(rule.fallback, x, n_arms, "two_stage")
    n = len(x)
    n_pilot = min(n, max(1, int(np.floor(rule.pilot_fraction * n))))
    w_pilot = _draw_iid(rule.fallback.p, x[:n_pilot], rng)
    if limit <= n_pilot:
        return w_pilot[:limit]
    y_pilot = np.asarray(observe(w_pilot), dtype=float)
    k = rule.fallback.p.shape[0]
    ehat = _pilot_neyman(rule, x[:n_pilot], w_pilot, y_pilot, k)
    p_post = np.where(
        np.isnan(ehat)[:, None],
        rule.fallback.p,
        np.column_stack([1.0 - ehat, ehat]),
    )
    w_rest = _draw_iid(p_post, x[n_pilot:limit], rng)
    return np.concatenate([w_pilot, w_rest])


def apply_rule(rule: DesignRule, x: np.ndarray, n_arms: int,
               rng: np.random.Generator, observe: ObserveFn | None = None,
               limit: int | None = None) -> np.ndarray:
    """Assign the first ``limit`` units (all of them when limit is None).

    ``x`` is the full covariate vector (rules may inspect it in its
    entirety), ``rng`` the rule's uniform stream positioned at its start,
    and ``observe`` maps a prefix of assignments to the corresponding
    observed outcomes (only outcome-adaptive rules call it).  Truncating
    ``limit`` never changes the assignments it still covers.
    """
    x = np.asarray(x, dtype=np.int64)
    n = len(x)
    m = n if limit is None else min(limit, n)
    if isinstance(rule, IidPropensity):
        _check_alloc(rule.alloc, x[:m], n_arms, "iid_propensity")
        return _draw_iid(rule.alloc.p, x[:m], rng)
    if isinstance(rule, StratifiedBlocks):
        return _apply_blocks(rule, x[:m], n_arms, rng)
    if isinstance(rule, MatchedPairs):
        return _apply_pairs(x[:m], n_arms, rng)
    if isinstance(rule, TwoStageAdaptive):
        if observe is None:
            raise ValueError("two_stage needs an observe callback")
        return _apply_two_stage(rule, x, n_arms, rng, observe, m)
    if isinstance(rule, DeterministicAlternation):
        return (np.arange(m) % n_arms).astype(np.int64)
    if isinstance(rule, FullTreatment):
        if not 0 <= int(rule.arm) < n_arms:
            raise RuleScenarioMismatch(
                f"full_treatment arm {rule.arm} outside 0..{n_arms - 1}"
            )
        return np.full(m, int(rule.arm), dtype=np.int64)
    raise TypeError(f"unknown design rule {type(rule).__name__}")


def assign(rule: DesignRule, ctx: AssignmentContext, n_arms: int) -> int:
    """Sequential single-unit contract: the arm of unit ``ctx.i``.

    Deterministic given (rule, context, stream): the rule is replayed from
    the start of its uniform stream over units 0..i, with past outcomes
    taken from the context, and the final decision is returned.
    """
    seed = ctx.u if isinstance(ctx.u, np.random.SeedSequence) else np.random.SeedSequence(int(ctx.u))
    rng = np.random.Generator(np.random.Philox(seed))
    y_past = np.asarray(ctx.y_past, dtype=float)

    def observe(w_prefix: np.ndarray) -> np.ndarray:
        return y_past[: len(w_prefix)]

    w = apply_rule(rule, np.asarray(ctx.x_all), n_arms, rng, observe, limit=ctx.i + 1)
    return int(w[ctx.i])


# ----------------------------------------------------------------------
# Realized summaries.
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RealizedShares:
    """Empirical assignment table of a log.

    ``shares[x, w]`` is the fraction of stratum-x units assigned arm w
    (zero for strata that never appeared); ``unassigned[x]`` the fraction
    left out; ``usage[j]`` the per-unit average of budget row j, with
    unassigned units contributing zero.
    """

    counts: np.ndarray      # (K, n_arms)
    shares: np.ndarray      # (K, n_arms)
    unassigned: np.ndarray  # (K,)
    usage: np.ndarray       # (d_r,)


def realized_shares(log, scenario) -> RealizedShares:
    k, n_arms = scenario.k, scenario.n_arms
    code = log.x * (n_arms + 1) + (log.w + 1)
    table = np.bincount(code, minlength=k * (n_arms + 1)).reshape(k, n_arms + 1)
    totals = table.sum(axis=1)
    denom = np.maximum(totals, 1)
    shares = table[:, 1:] / denom[:, None]
    unassigned = table[:, 0] / denom
    if scenario.constraint is not None:
        mask = log.w >= 0
        r = scenario.constraint.r
        usage = r[log.x[mask], log.w[mask], :].sum(axis=0) / log.n
    else:
        usage = np.zeros(0)
    return RealizedShares(table[:, 1:], shares, unassigned, usage)
