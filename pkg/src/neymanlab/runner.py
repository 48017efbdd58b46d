"""Config-driven batch runner producing deterministic CSV/JSON report bundles.

Determinism contract: identical (config, seed) on one platform reproduces
byte-identical tables.  All floats are written with 12 significant digits,
and every pass/fail gate is computed from the *formatted* values, so a
verdict recomputed from the emitted CSV matches the in-process verdict
exactly.
"""

from __future__ import annotations

import csv
import io
import json
import os
import sys
from dataclasses import dataclass
from typing import Any

import numpy as np

from ._version import __version__
from .allocation import (
    AllocationMap,
    bound_from_duals,
    eval_bound_general,
    kkt_residuals,
    solve_constrained,
)
from .config import StudyConfig, config_digest, serialize_config
from .designs import (
    DeterministicAlternation,
    FullTreatment,
    IidPropensity,
    MatchedPairs,
    StratifiedBlocks,
    TwoStageAdaptive,
)
from .errors import ValidationError
from .estimators import (
    AipwOracle,
    AipwPlugin,
    DiffMeans,
    IpwHajek,
    IpwHT,
    StratifiedMeans,
    risk_table,
)
from .lan import lan_diagnostics
from .scenario import Scenario, least_favorable_submodel

KKT_GATE = 1e-8
IDENTITY_GATE = 1e-8
FLOOR_FACTOR = 0.95
ATTAIN_REL = 0.05
VAR_REL_GATE = 0.08
KS_GATE = 0.05
MEAN_SIGMAS = 3.0

RISK_HEADER = ("scenario", "design", "estimator", "n", "reps", "theta",
               "bias", "nVar", "nMSE", "mcSE")
LAN_HEADER = ("scenario", "design", "h", "n", "reps", "meanEll", "varEll",
              "targetMean", "targetVar", "ks", "meanAbsRemainder", "augmented")
ALLOCATION_HEADER = ("scenario", "x", "arm", "q", "sigma2Tilde", "p", "lambda")
DUALS_HEADER = ("scenario", "row", "mu", "usage", "budget")
BOUNDS_HEADER = ("scenario", "vStar", "varOfMeans", "infoTerm", "fromDuals",
                 "identityGap", "kktMax")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.12g" % float(value)
    return str(value)


def _reparse(value):
    """Round a number through its CSV representation (gate-honesty anchor)."""
    return float(_fmt(float(value)))


def _csv_text(header: tuple[str, ...], rows: list[tuple]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


@dataclass(frozen=True)
class Gate:
    name: str
    value: float
    threshold: float
    op: str  # "<=" or ">=" or "<"
    passed: bool

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "threshold": self.threshold,
            "op": self.op,
            "passed": self.passed,
        }


def _gate(name: str, value: float, threshold: float, op: str) -> Gate:
    value = _reparse(value)
    if op == "<=":
        ok = value <= threshold
    elif op == ">=":
        ok = value >= threshold
    elif op == "<":
        ok = value < threshold
    else:
        raise ValueError(f"unknown gate op {op!r}")
    return Gate(name, value, threshold, op, bool(ok))


@dataclass(frozen=True)
class ReportBundle:
    """A finished study: metadata, named CSV tables, and the gate summary."""

    manifest: dict
    tables: dict[str, str]
    summary: dict

    @property
    def passed(self) -> bool:
        return bool(self.summary["passed"])


# ----------------------------------------------------------------------
# Allocation resolution.
# ----------------------------------------------------------------------


def _strip_constraint(scenario: Scenario) -> Scenario:
    if scenario.constraint is None:
        return scenario
    return Scenario(scenario.covariates, scenario.outcomes, scenario.functional)


def _solve_reference(scenario: Scenario, constrained: bool) -> AllocationMap:
    # Always certify via the dual solver; for two-arm unconstrained scenarios
    # the result matches the closed-form Neyman shares to machine precision.
    if constrained and scenario.constraint is not None:
        return solve_constrained(scenario)
    return solve_constrained(_strip_constraint(scenario))


class _AllocResolver:
    """Resolves allocation specs to probability tables, caching solver runs."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self._cache: dict[str, AllocationMap] = {}

    def solved(self, name: str) -> AllocationMap:
        if name not in self._cache:
            self._cache[name] = _solve_reference(self.scenario, name == "constrained")
        return self._cache[name]

    def resolve(self, spec) -> AllocationMap:
        scenario = self.scenario
        if spec == "uniform":
            p = np.full((scenario.k, scenario.n_arms), 1.0 / scenario.n_arms)
            return AllocationMap(p, meta={"solver": "uniform"})
        if spec in ("neyman", "constrained"):
            return self.solved(spec)
        kind = spec["kind"]
        if kind == "table":
            p = np.asarray(spec["p"], dtype=float)
            if p.shape != (scenario.k, scenario.n_arms):
                raise ValidationError(
                    f"allocation table shape {p.shape} does not match "
                    f"(strata, arms) = ({scenario.k}, {scenario.n_arms})"
                )
            if np.any(p < 0) or np.any(p > 1):
                raise ValidationError("allocation table entries must lie in [0, 1]")
            if np.any(p.sum(axis=1) > 1 + 1e-9):
                raise ValidationError("allocation table rows must sum to at most 1")
            return AllocationMap(p, meta={"solver": "table"})
        if kind == "scaled":
            base = self.resolve(spec["base"])
            return AllocationMap(float(spec["factor"]) * base.p,
                                 meta={"solver": "scaled", "base": base.meta})
        raise ValidationError(f"unresolvable allocation spec {spec!r}")


# ----------------------------------------------------------------------
# Design / estimator construction.
# ----------------------------------------------------------------------


def _dedup_labels(labels: list[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for label in labels:
        seen[label] = seen.get(label, 0) + 1
        out.append(label if seen[label] == 1 else f"{label}_{seen[label]}")
    return out


def _build_rule(dspec: dict, resolver: _AllocResolver):
    """Returns (rule, nominal allocation for estimator defaults)."""
    kind = dspec["kind"]
    scenario = resolver.scenario
    if kind == "iid_propensity":
        alloc = resolver.resolve(dspec["alloc"])
        return IidPropensity(alloc), alloc
    if kind == "stratified_blocks":
        alloc = resolver.resolve(dspec["alloc"])
        return StratifiedBlocks(alloc, dspec["block_size"]), alloc
    if kind == "matched_pairs":
        return MatchedPairs(), resolver.resolve("uniform")
    if kind == "two_stage":
        fallback = resolver.resolve(dspec.get("fallback", "uniform"))
        target = resolver.resolve("neyman")
        return TwoStageAdaptive(dspec["pilot_fraction"], fallback), target
    if kind == "alternation":
        return DeterministicAlternation(), resolver.resolve("uniform")
    if kind == "full_treatment":
        arm = dspec["arm"]
        if not 0 <= arm < scenario.n_arms:
            raise ValidationError(f"full_treatment arm {arm} out of range")
        one_hot = np.zeros((scenario.k, scenario.n_arms))
        one_hot[:, arm] = 1.0
        return FullTreatment(arm), AllocationMap(one_hot, meta={"solver": "one_hot"})
    raise ValidationError(f"unknown design kind {kind!r}")


def _build_estimator(espec: dict, resolver: _AllocResolver, nominal: AllocationMap):
    kind = espec["kind"]
    alloc = resolver.resolve(espec["alloc"]) if "alloc" in espec else nominal
    scenario = resolver.scenario
    if kind == "diff_means":
        return DiffMeans()
    if kind == "ipw_ht":
        return IpwHT(alloc)
    if kind == "ipw_hajek":
        return IpwHajek(alloc)
    if kind == "aipw_oracle":
        return AipwOracle(scenario, alloc)
    if kind == "aipw_plugin":
        return AipwPlugin(alloc)
    if kind == "stratified_means":
        return StratifiedMeans()
    raise ValidationError(f"unknown estimator kind {kind!r}")


# ----------------------------------------------------------------------
# Study execution.
# ----------------------------------------------------------------------


def _allocation_tables(cfg: StudyConfig, resolver: _AllocResolver,
                       constrained: bool) -> tuple[dict[str, str], list[Gate], dict]:
    scenario = cfg.scenario
    use_constraint = constrained and scenario.constraint is not None
    solve_scn = scenario if use_constraint else _strip_constraint(scenario)
    amap = resolver.solved("constrained" if use_constraint else "neyman")
    bound = eval_bound_general(scenario, amap.p)
    labels = scenario.covariates.support

    alloc_rows = []
    lam = amap.duals.lam
    for i in range(scenario.k):
        for w in range(scenario.n_arms):
            alloc_rows.append((
                cfg.scenario_label, labels[i], w,
                float(scenario.covariates.probs[i]),
                float(scenario.sigma2_tilde[i, w]),
                float(amap.p[i, w]),
                float(lam[i]),
            ))
    tables = {"allocation.csv": _csv_text(ALLOCATION_HEADER, alloc_rows)}

    kkt_max = kkt_residuals(solve_scn, amap)["max"]
    gates: list[Gate] = []
    headline: dict[str, Any] = {}
    from_duals = bound_from_duals(solve_scn, amap)
    gap = abs(from_duals - bound.v)
    info_term = bound.v - bound.var_of_means
    bounds_rows = [(
        cfg.scenario_label, bound.v, bound.var_of_means, info_term,
        from_duals, gap, kkt_max,
    )]
    tables["bounds.csv"] = _csv_text(BOUNDS_HEADER, bounds_rows)

    if use_constraint:
        mu = amap.duals.mu
        usage = np.einsum(
            "k,kwr,kw->r", scenario.covariates.probs, scenario.constraint.r, amap.p
        )
        dual_rows = [
            (cfg.scenario_label, j, float(mu[j]), float(usage[j]),
             float(scenario.constraint.c[j]))
            for j in range(len(mu))
        ]
        tables["duals.csv"] = _csv_text(DUALS_HEADER, dual_rows)

    gates.append(_gate("kkt_max", kkt_max, KKT_GATE, "<="))
    gates.append(_gate("bound_identity_gap", gap, IDENTITY_GATE, "<="))
    headline["v_star"] = _reparse(bound.v)
    headline["kkt_max"] = _reparse(kkt_max)
    return tables, gates, headline


def _run_allocation_solve(cfg: StudyConfig, resolver: _AllocResolver):
    constrained = cfg.scenario.constraint is not None
    return _allocation_tables(cfg, resolver, constrained)


def _run_risk(cfg: StudyConfig, resolver: _AllocResolver, jobs: int):
    scenario = cfg.scenario
    constrained = scenario.constraint is not None
    tables, gates, headline = _allocation_tables(cfg, resolver, constrained)
    ref = resolver.solved("constrained" if constrained else "neyman")
    v_star = eval_bound_general(scenario, ref.p).v
    sub = least_favorable_submodel(scenario, ref.p)

    study = cfg.study
    design_labels = _dedup_labels([d.get("label", d["kind"]) for d in cfg.designs])
    est_labels = _dedup_labels([e["kind"] for e in cfg.estimators])

    rows = []
    gate_cells = []  # (design_label, est_label, attainment?, report) at theta == 0
    for dspec, dlabel in zip(cfg.designs, design_labels):
        if dspec["kind"] == "full_treatment":
            raise ValidationError(
                f"design {dlabel!r}: full_treatment leaves the other arm empty "
                "and cannot be scored in a risk study"
            )
        rule, nominal = _build_rule(dspec, resolver)
        ests = [_build_estimator(e, resolver, nominal) for e in cfg.estimators]
        iid_at_ref = (
            dspec["kind"] == "iid_propensity"
            and np.allclose(nominal.p, ref.p, rtol=0, atol=1e-12)
        )
        for theta in study["theta_list"]:
            reports = risk_table(ests, sub, theta, rule, study["n"],
                                 study["reps"], cfg.seed, jobs=jobs)
            for espec, elabel, report in zip(cfg.estimators, est_labels, reports):
                rows.append((
                    cfg.scenario_label, dlabel, elabel, study["n"], study["reps"],
                    theta, report.bias, report.variance_times_n,
                    report.mse_times_n, report.mc_std_error,
                ))
                if theta == 0.0:
                    est_at_ref = ("alloc" not in espec and iid_at_ref) or (
                        "alloc" in espec
                        and np.allclose(resolver.resolve(espec["alloc"]).p, ref.p,
                                        rtol=0, atol=1e-12)
                    )
                    attain = (espec["kind"] == "aipw_oracle" and iid_at_ref
                              and est_at_ref)
                    gate_cells.append((dlabel, elabel, attain, report))

    tables["risk.csv"] = _csv_text(RISK_HEADER, rows)
    for dlabel, elabel, attain, report in gate_cells:
        ratio = _reparse(report.variance_times_n) / _reparse(v_star)
        gates.append(_gate(f"floor:{dlabel}:{elabel}", ratio, FLOOR_FACTOR, ">="))
        if attain:
            gates.append(_gate(f"attainment:{dlabel}:{elabel}",
                               abs(ratio - 1.0), ATTAIN_REL, "<="))
    headline["v_star"] = _reparse(v_star)
    return tables, gates, headline


def _run_lan(cfg: StudyConfig, resolver: _AllocResolver, jobs: int):
    scenario = cfg.scenario
    constrained = scenario.constraint is not None
    tables, gates, headline = _allocation_tables(cfg, resolver, constrained)
    ref = resolver.solved("constrained" if constrained else "neyman")
    sub = least_favorable_submodel(scenario, ref.p)

    study = cfg.study
    source = study["i_star"]
    if source == "neyman":
        i_star = eval_bound_general(scenario, resolver.solved("neyman").p).v
    elif source == "constrained":
        i_star = eval_bound_general(scenario, resolver.solved("constrained").p).v
    else:
        i_star = float(source)

    design_labels = _dedup_labels([d.get("label", d["kind"]) for d in cfg.designs])
    rows = []
    per_design: dict[str, list] = {}
    for dspec, dlabel in zip(cfg.designs, design_labels):
        rule, _ = _build_rule(dspec, resolver)
        for n in study["n_list"]:
            report = lan_diagnostics(
                sub, rule, study["h"], n, study["reps"], cfg.seed,
                i_star=i_star, augment=study["augment"], jobs=jobs,
            )
            rows.append((
                cfg.scenario_label, dlabel, study["h"], n, study["reps"],
                report.mean_ell, report.var_ell, report.target_mean,
                report.target_var, report.ks_distance,
                report.mean_abs_remainder, report.augmented,
            ))
            per_design.setdefault(dlabel, []).append(report)

    tables["lan.csv"] = _csv_text(LAN_HEADER, rows)
    for dlabel, reports in per_design.items():
        last = reports[-1]
        mean_tol = MEAN_SIGMAS * np.sqrt(_reparse(last.var_ell) / last.reps)
        gates.append(_gate(
            f"lan_mean:{dlabel}",
            abs(_reparse(last.mean_ell) - _reparse(last.target_mean)),
            _reparse(mean_tol), "<=",
        ))
        if _reparse(last.target_var) > 0:
            gates.append(_gate(
                f"lan_var:{dlabel}",
                abs(_reparse(last.var_ell) / _reparse(last.target_var) - 1.0),
                VAR_REL_GATE, "<=",
            ))
            gates.append(_gate(f"lan_ks:{dlabel}", last.ks_distance, KS_GATE, "<="))
        else:
            gates.append(_gate(f"lan_degenerate_var:{dlabel}",
                               abs(last.var_ell), 1e-12, "<="))
        if len(reports) > 1:
            decs = [_reparse(r.mean_abs_remainder) for r in reports]
            worst = max(b / a if a > 0 else np.inf for a, b in zip(decs, decs[1:]))
            if all(d == 0 for d in decs):
                worst = 0.0
            gates.append(_gate(f"lan_remainder_decay:{dlabel}", worst, 1.0, "<"))
    headline["i_star"] = _reparse(i_star)
    return tables, gates, headline


def run_study(cfg: StudyConfig, jobs: int | None = None) -> ReportBundle:
    """Execute the configured study and assemble the deterministic bundle."""
    jobs = cfg.jobs if jobs is None else jobs
    resolver = _AllocResolver(cfg.scenario)
    kind = cfg.study["kind"]
    if kind == "allocation_solve":
        tables, gates, headline = _run_allocation_solve(cfg, resolver)
    elif kind == "risk":
        tables, gates, headline = _run_risk(cfg, resolver, jobs)
    elif kind == "lan":
        tables, gates, headline = _run_lan(cfg, resolver, jobs)
    else:  # unreachable for parsed configs
        raise ValidationError(f"unknown study kind {kind!r}")

    manifest = {
        "config_sha256": config_digest(cfg),
        "seed": cfg.seed,
        "study": kind,
        "package": {"name": "neymanlab", "version": __version__},
        "libraries": {"numpy": np.__version__, "scipy": _scipy_version()},
        "python": ".".join(map(str, sys.version_info[:3])),
        "tables": sorted(tables),
    }
    summary = {
        "study": kind,
        "seed": cfg.seed,
        "headline": headline,
        "gates": [g.to_json() for g in gates],
        "passed": all(g.passed for g in gates),
    }
    return ReportBundle(manifest, tables, summary)


def _scipy_version() -> str:
    import scipy

    return scipy.__version__


def write_bundle(bundle: ReportBundle, out_dir: str) -> list[str]:
    """Write tables plus manifest.json/summary.json; returns relative paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name in sorted(bundle.tables):
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as fh:
            fh.write(bundle.tables[name])
        written.append(name)
    for name, payload in (("manifest.json", bundle.manifest),
                          ("summary.json", bundle.summary)):
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        written.append(name)
    return written
