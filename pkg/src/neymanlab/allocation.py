"""Variance bounds and optimal assignment probabilities.

The asymptotic variance bound of the target functional under a
stratum-wise allocation ``p`` is

    v(p) = Var(sum_w mu_tilde(X, w)) + sum_w E[sigma2_tilde(X, w) / p(X, w)]

with the convention 0/0 = 0 on zero-variance arms.  For a two-arm average
treatment effect with treated share e(x) this reduces to

    v(e) = Var(mu(X,1) - mu(X,0)) + E[sigma2(X,0)/(1-e(X))] + E[sigma2(X,1)/e(X)]

whose unconstrained minimizer is the Neyman share
``e*(x) = sigma(x,1) / (sigma(x,0) + sigma(x,1))``.

With budget constraints ``E[sum_w r_k(X,w) p(X,w)] <= c_k`` the optimum is
characterized by stationarity ``sigma2_tilde / p**2 = lam(x) + mu @ r(x,w)``
on positive-variance arms together with primal feasibility, dual
feasibility and complementary slackness.  :func:`solve_constrained` finds
the point by exact per-stratum bisection on ``lam`` nested inside
bisection (one budget row) or cyclic coordinate bisection (two rows) on
``mu``, and returns the dual certificate so optimality can be verified
independently of how the solution was produced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import (
    DivisionByZeroPropensity,
    PropensityOutOfRange,
    SolverDiverged,
    UnboundedDual,
)
from .scenario import CLIP_EPS, Scenario

# Solver contract constants.
INNER_TOL = 1e-12        # bisection width on lam(x)
BUDGET_TOL = 1e-10       # |usage - c| for binding budget rows
CERT_TOL = 1e-8          # max KKT residual accepted before returning
MAX_INNER_SOLVES = 100_000
DUAL_BRACKET_CAP = 1e12


@dataclass(frozen=True, eq=False)
class DualCertificate:
    """Multipliers for the per-stratum sum constraints and budget rows."""

    lam: np.ndarray  # (K,)
    mu: np.ndarray   # (d_r,)

    def __init__(self, lam, mu) -> None:
        la = np.array(lam, dtype=float)
        mm = np.atleast_1d(np.array(mu, dtype=float))
        la.setflags(write=False)
        mm.setflags(write=False)
        object.__setattr__(self, "lam", la)
        object.__setattr__(self, "mu", mm)


@dataclass(frozen=True, eq=False)
class AllocationMap:
    """Assignment probabilities per (stratum, arm), optionally with duals."""

    p: np.ndarray  # (K, n_arms)
    duals: DualCertificate | None = None
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        pp = np.array(self.p, dtype=float)
        if pp.ndim != 2:
            raise ValueError(f"p must be a K x n_arms table, got shape {pp.shape}")
        pp.setflags(write=False)
        object.__setattr__(self, "p", pp)

    @property
    def treated_share(self) -> np.ndarray:
        """e(x) = p(x, 1) for two-arm allocations."""
        if self.p.shape[1] != 2:
            raise ValueError("treated_share is only defined for two-arm allocations")
        return self.p[:, 1]


@dataclass(frozen=True, eq=False)
class BoundValue:
    """Evaluated variance bound split into its between- and within-stratum parts.

    ``v == var_of_means + per_arm.sum()`` by construction.
    """

    v: float
    var_of_means: float
    per_arm: np.ndarray  # (n_arms,) values of E[sigma2_tilde(X,w)/p(X,w)]

    def __init__(self, v: float, var_of_means: float, per_arm) -> None:
        object.__setattr__(self, "v", float(v))
        object.__setattr__(self, "var_of_means", float(var_of_means))
        pa = np.array(per_arm, dtype=float)
        pa.setflags(write=False)
        object.__setattr__(self, "per_arm", pa)


def _var_of_row_sums(scenario: Scenario) -> float:
    row = scenario.mu_tilde.sum(axis=1)
    q = scenario.covariates.probs
    m = float(q @ row)
    return float(q @ (row - m) ** 2)


def _per_arm_terms(scenario: Scenario, p: np.ndarray) -> np.ndarray:
    s2t = scenario.sigma2_tilde
    pos = s2t > 0
    if np.any(pos & (p <= 0)):
        kx, wx = np.argwhere(pos & (p <= 0))[0]
        raise DivisionByZeroPropensity(
            f"p[{kx},{wx}] = {p[kx, wx]!r} but sigma2_tilde[{kx},{wx}] > 0"
        )
    terms = np.divide(s2t, p, out=np.zeros_like(s2t), where=pos)
    return scenario.covariates.probs @ terms


def eval_bound_general(scenario: Scenario, alloc: AllocationMap | np.ndarray) -> BoundValue:
    """Variance bound for an arbitrary allocation table.

    Zero-variance arms contribute nothing even at p = 0; positive-variance
    arms with p <= 0 raise :class:`DivisionByZeroPropensity`.
    """
    p = alloc.p if isinstance(alloc, AllocationMap) else np.asarray(alloc, dtype=float)
    if p.shape != scenario.outcomes.mu.shape:
        raise ValueError(f"p must have shape {scenario.outcomes.mu.shape}, got {p.shape}")
    if np.any(p < -1e-15) or np.any(p > 1 + 1e-12):
        raise PropensityOutOfRange("allocation entries must lie in [0, 1]")
    var_means = _var_of_row_sums(scenario)
    per_arm = _per_arm_terms(scenario, p)
    return BoundValue(var_means + per_arm.sum(), var_means, per_arm)


def eval_bound_binary(scenario: Scenario, e: np.ndarray) -> BoundValue:
    """Variance bound for a two-arm ATE scenario at treated share e(x)."""
    if scenario.n_arms != 2:
        raise ValueError("eval_bound_binary requires a two-arm scenario")
    e = np.asarray(e, dtype=float)
    if e.shape != (scenario.k,):
        raise ValueError(f"e must have shape ({scenario.k},), got {e.shape}")
    if np.any(e < 0) or np.any(e > 1):
        raise PropensityOutOfRange("treated shares must lie in [0, 1]")
    s2 = scenario.outcomes.sigma2
    if np.any((s2[:, 1] > 0) & (e == 0)) or np.any((s2[:, 0] > 0) & (e == 1)):
        raise PropensityOutOfRange(
            "treated share hits 0 or 1 on a stratum whose starved arm has variance"
        )
    p = np.column_stack([1.0 - e, e])
    return eval_bound_general(scenario, p)


def neyman_allocation(scenario: Scenario, clip_eps: float = CLIP_EPS) -> AllocationMap:
    """Closed-form unconstrained optimum for a two-arm scenario.

    e*(x) = sigma(x,1) / (sigma(x,0) + sigma(x,1)).  Strata where exactly
    one arm is degenerate are clipped into [clip_eps, 1 - clip_eps];
    strata where both arms are degenerate get e = 1/2 and are flagged in
    ``meta`` because any share is optimal there.
    """
    if scenario.n_arms != 2:
        raise ValueError("neyman_allocation requires a two-arm scenario")
    sd = np.sqrt(scenario.outcomes.sigma2)
    denom = sd[:, 0] + sd[:, 1]
    both_zero = denom == 0
    e = np.full(scenario.k, 0.5)
    nz = ~both_zero
    e[nz] = sd[nz, 1] / denom[nz]
    one_zero = nz & ((sd[:, 0] == 0) | (sd[:, 1] == 0))
    e[one_zero] = np.clip(e[one_zero], clip_eps, 1.0 - clip_eps)
    meta = {
        "solver": "neyman-closed-form",
        "degenerate_strata": tuple(int(i) for i in np.flatnonzero(both_zero)),
        "clipped_strata": tuple(int(i) for i in np.flatnonzero(one_zero)),
    }
    return AllocationMap(np.column_stack([1.0 - e, e]), meta=meta)


# ----------------------------------------------------------------------
# Constrained solver.
# ----------------------------------------------------------------------


class _SolveCounter:
    __slots__ = ("count",)

    def __init__(self) -> None:
        self.count = 0

    def tick(self) -> None:
        self.count += 1
        if self.count > MAX_INNER_SOLVES:
            raise SolverDiverged(
                f"constrained solver exceeded {MAX_INNER_SOLVES} inner stratum solves"
            )


def _solve_stratum(sig_t: np.ndarray, m: np.ndarray, counter: _SolveCounter):
    """Optimal (p, lam) for one stratum at fixed budget prices.

    sig_t holds sigma_tilde on the stratum's positive-variance arms and m
    the corresponding mu @ r values.  Solves
    sum_w sig_t / sqrt(lam + m_w) = 1 for lam >= 0, taking lam = 0 when the
    unconstrained sum already fits below one.
    """
    counter.tick()
    if sig_t.size == 0:
        return np.zeros(0), 0.0
    if np.all(m > 0):
        total = float(np.sum(sig_t / np.sqrt(m)))
        if total <= 1.0:
            return sig_t / np.sqrt(m), 0.0
    lo, hi = 0.0, float(np.sum(sig_t)) ** 2
    # g(lam) = sum sig_t/sqrt(lam+m) - 1 is decreasing; g(hi) <= 0 because
    # m >= 0.  Bisect to machine width, then polish with Newton.
    for _ in range(200):
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
        mid = 0.5 * (lo + hi)
        if float(np.sum(sig_t / np.sqrt(mid + m))) > 1.0:
            lo = mid
        else:
            hi = mid
    lam = 0.5 * (lo + hi)
    for _ in range(3):
        root = np.sqrt(lam + m)
        g = float(np.sum(sig_t / root)) - 1.0
        dg = -0.5 * float(np.sum(sig_t / root**3))
        step = g / dg
        if not np.isfinite(step) or lam - step < 0:
            break
        lam -= step
    return sig_t / np.sqrt(lam + m), float(lam)


def _inner_solve(scenario: Scenario, mu: np.ndarray, counter: _SolveCounter):
    """Allocation and per-stratum multipliers at fixed budget prices mu."""
    k, n_arms = scenario.k, scenario.n_arms
    s2t = scenario.sigma2_tilde
    sig_t = np.sqrt(s2t)
    r = (
        scenario.constraint.r
        if scenario.constraint is not None
        else np.zeros((k, n_arms, 0))
    )
    p = np.zeros((k, n_arms))
    lam = np.zeros(k)
    for x in range(k):
        pos = s2t[x] > 0
        m = r[x, pos] @ mu if mu.size else np.zeros(int(pos.sum()))
        p_pos, lam_x = _solve_stratum(sig_t[x, pos], m, counter)
        p[x, pos] = p_pos
        lam[x] = lam_x
    return p, lam


def _usage(scenario: Scenario, p: np.ndarray) -> np.ndarray:
    if scenario.constraint is None:
        return np.zeros(0)
    q = scenario.covariates.probs
    return np.einsum("x,xwd,xw->d", q, scenario.constraint.r, p)


def _bisect_coordinate(
    scenario: Scenario,
    mu: np.ndarray,
    j: int,
    counter: _SolveCounter,
):
    """Adjust mu[j] so budget row j is satisfied (= c_j when binding)."""
    c_j = float(scenario.constraint.c[j])
    mu = mu.copy()
    mu[j] = 0.0
    p, lam = _inner_solve(scenario, mu, counter)
    if _usage(scenario, p)[j] <= c_j + BUDGET_TOL:
        return mu, p, lam
    hi = 1.0
    while True:
        mu[j] = hi
        p, lam = _inner_solve(scenario, mu, counter)
        if _usage(scenario, p)[j] <= c_j:
            break
        hi *= 2.0
        if hi > DUAL_BRACKET_CAP:
            raise UnboundedDual(
                f"budget row {j}: dual bracket exceeded {DUAL_BRACKET_CAP:.0e} "
                f"(c[{j}] = {c_j!r} may be unattainable)"
            )
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        mu[j] = mid
        p, lam = _inner_solve(scenario, mu, counter)
        res = _usage(scenario, p)[j] - c_j
        if abs(res) <= 0.1 * BUDGET_TOL or hi - lo <= 1e-16 * max(1.0, hi):
            break
        if res > 0:
            lo = mid
        else:
            hi = mid
    return mu, p, lam


def kkt_residuals(scenario: Scenario, alloc: AllocationMap) -> dict[str, float]:
    """Karush-Kuhn-Tucker residuals of an allocation with duals attached.

    Returns the maximal violation of stationarity (relative to the dual
    scale), primal feasibility, dual feasibility and complementary
    slackness, plus their overall maximum under key ``"max"``.
    """
    if alloc.duals is None:
        raise ValueError("allocation carries no dual certificate")
    p, lam, mu = alloc.p, alloc.duals.lam, alloc.duals.mu
    s2t = scenario.sigma2_tilde
    q = scenario.covariates.probs
    r = (
        scenario.constraint.r
        if scenario.constraint is not None
        else np.zeros((scenario.k, scenario.n_arms, 0))
    )
    price = lam[:, None] + (r @ mu if mu.size else np.zeros((scenario.k, scenario.n_arms)))
    pos = s2t > 0
    stat = 0.0
    if np.any(pos):
        lhs = s2t[pos] / p[pos] ** 2
        scale = np.maximum(1.0, np.abs(lhs))
        stat = float(np.max(np.abs(lhs - price[pos]) / scale))
    row_sum = p.sum(axis=1)
    primal_rows = float(np.max(np.maximum(row_sum - 1.0, 0.0), initial=0.0))
    primal_nonneg = float(np.max(np.maximum(-p, 0.0), initial=0.0))
    usage = _usage(scenario, p)
    c = scenario.constraint.c if scenario.constraint is not None else np.zeros(0)
    primal_budget = float(np.max(np.maximum(usage - c, 0.0), initial=0.0))
    dual_feas = float(max(np.max(np.maximum(-lam, 0.0), initial=0.0),
                          np.max(np.maximum(-mu, 0.0), initial=0.0)))
    slack_rows = float(np.max(np.abs(lam * (row_sum - 1.0)), initial=0.0))
    slack_budget = float(np.max(np.abs(mu * (usage - c)), initial=0.0)) if mu.size else 0.0
    out = {
        "stationarity": stat,
        "primal_rows": primal_rows,
        "primal_nonneg": primal_nonneg,
        "primal_budget": primal_budget,
        "dual_feasibility": dual_feas,
        "slackness_rows": slack_rows,
        "slackness_budget": slack_budget,
    }
    out["max"] = max(out.values())
    return out


def solve_constrained(scenario: Scenario) -> AllocationMap:
    """Variance-optimal allocation under sum and budget constraints.

    Minimizes ``sum_w E[sigma2_tilde(X,w)/p(X,w)]`` subject to
    ``sum_w p(x,w) <= 1`` per stratum and the scenario's budget rows.
    Zero-variance arms receive p = 0 (they cost budget and reduce nothing).
    The returned map carries the dual certificate, and the KKT residuals
    are checked against the certificate gate before returning.

    Raises :class:`UnboundedDual` when a budget row cannot be priced
    (bracket growth past the cap) and :class:`SolverDiverged` on iteration
    exhaustion or a failed certificate.
    """
    con = scenario.constraint
    d_r = 0 if con is None else con.d_r
    if d_r > 2:
        raise ValueError("solve_constrained supports at most two budget rows")
    if con is not None and (np.any(con.r < 0) or np.any(con.c < 0)):
        raise ValueError("budget rows require r >= 0 and c >= 0")
    counter = _SolveCounter()
    mu = np.zeros(d_r)

    if d_r == 0:
        p, lam = _inner_solve(scenario, mu, counter)
    elif d_r == 1:
        mu, p, lam = _bisect_coordinate(scenario, mu, 0, counter)
    else:
        p, lam = _inner_solve(scenario, mu, counter)
        for _ in range(MAX_INNER_SOLVES):
            for j in range(d_r):
                mu, p, lam = _bisect_coordinate(scenario, mu, j, counter)
            usage = _usage(scenario, p)
            ok = True
            for j in range(d_r):
                slack = usage[j] - float(con.c[j])
                if mu[j] > 0 and abs(slack) > BUDGET_TOL:
                    ok = False
                if mu[j] == 0 and slack > BUDGET_TOL:
                    ok = False
            if ok:
                break
        else:
            raise SolverDiverged("cyclic coordinate bisection did not meet the budget residual")

    usage = _usage(scenario, p)
    meta = {
        "solver": "dual-bisection",
        "inner_solves": counter.count,
        "usage": tuple(float(u) for u in usage),
    }
    alloc = AllocationMap(p, duals=DualCertificate(lam, mu), meta=meta)
    res = kkt_residuals(scenario, alloc)
    if res["max"] > CERT_TOL:
        raise SolverDiverged(
            f"solution failed its optimality certificate: max residual {res['max']:.3e}"
        )
    return AllocationMap(p, duals=alloc.duals, meta={**meta, "kkt": res})


def bound_from_duals(scenario: Scenario, alloc: AllocationMap) -> float:
    """Variance bound reconstructed from the dual certificate alone:
    Var(sum_w mu_tilde) + E[lam(X)] + mu @ c.  Agrees with the evaluated
    bound at the optimum by complementary slackness."""
    if alloc.duals is None:
        raise ValueError("allocation carries no dual certificate")
    q = scenario.covariates.probs
    base = _var_of_row_sums(scenario) + float(q @ alloc.duals.lam)
    if alloc.duals.mu.size:
        base += float(alloc.duals.mu @ scenario.constraint.c)
    return base
