"""Strict JSON config parsing: error paths, round trips, digests."""

import json

import pytest

import neymanlab as nl


def minimal_raw(**study):
    return {
        "scenario": {
            "covariates": {"support": ["a", "b"], "probs": [0.5, 0.5]},
            "arms": 2,
            "mu": [[0.0, 1.0], [0.5, 2.0]],
            "sigma2": [[1.0, 0.64], [1.44, 2.25]],
            "functional": {"kind": "ate"},
        },
        "study": study or {"kind": "allocation_solve"},
        "seed": 11,
    }


def parse(raw):
    return nl.parse_config(json.dumps(raw))


def test_minimal_config_parses():
    cfg = parse(minimal_raw())
    assert cfg.seed == 11
    assert cfg.scenario.k == 2
    assert cfg.jobs == 1
    assert cfg.output is None
    assert cfg.scenario_label == "scenario"


def test_invalid_json_is_parse_error():
    with pytest.raises(nl.ParseError):
        nl.parse_config("{not json")


def test_unknown_key_suggests_correction():
    raw = minimal_raw(kind="risk", n=100, reps=10)
    raw["desings"] = []
    with pytest.raises(nl.ParseError, match="designs"):
        parse(raw)


def test_probs_must_sum_to_one_with_path():
    raw = minimal_raw()
    raw["scenario"]["covariates"]["probs"] = [0.5, 0.4]
    with pytest.raises(nl.ValidationError, match="probs"):
        parse(raw)


def test_matrix_shape_error_names_field():
    raw = minimal_raw()
    raw["scenario"]["mu"] = [[0.0, 1.0], [0.5]]
    with pytest.raises(nl.ValidationError, match="mu"):
        parse(raw)


def test_seed_bounds():
    raw = minimal_raw()
    raw["seed"] = -1
    with pytest.raises(nl.ValidationError):
        parse(raw)
    raw["seed"] = 2**64
    with pytest.raises(nl.ValidationError):
        parse(raw)
    raw["seed"] = 2**64 - 1
    assert parse(raw).seed == 2**64 - 1


def test_risk_study_requires_designs_and_estimators():
    raw = minimal_raw(kind="risk", n=100, reps=10)
    with pytest.raises(nl.ValidationError, match="design"):
        parse(raw)
    raw["designs"] = [{"kind": "iid_propensity", "alloc": "neyman"}]
    with pytest.raises(nl.ValidationError, match="estimator"):
        parse(raw)
    raw["estimators"] = [{"kind": "diff_means"}]
    cfg = parse(raw)
    assert cfg.study["theta_list"] == [0.0]


def test_theta_must_be_finite():
    raw = minimal_raw(kind="risk", n=100, reps=10, theta_list=[0.0, float("nan")])
    raw["designs"] = [{"kind": "iid_propensity", "alloc": "neyman"}]
    raw["estimators"] = [{"kind": "diff_means"}]
    with pytest.raises(nl.ValidationError, match="theta"):
        parse(raw)


def test_lan_sizes_must_ascend():
    raw = minimal_raw(kind="lan", h=1.0, n_list=[400, 400], reps=10)
    raw["designs"] = [{"kind": "iid_propensity", "alloc": "neyman"}]
    with pytest.raises(nl.ValidationError, match="n_list"):
        parse(raw)


def test_unknown_estimator_kind_suggestion():
    raw = minimal_raw(kind="risk", n=100, reps=10)
    raw["designs"] = [{"kind": "iid_propensity", "alloc": "neyman"}]
    raw["estimators"] = [{"kind": "hajek"}]
    with pytest.raises(nl.ValidationError, match="ipw_hajek"):
        parse(raw)


def test_alloc_spec_forms():
    raw = minimal_raw(kind="risk", n=100, reps=10)
    raw["estimators"] = [{"kind": "diff_means"}]
    raw["designs"] = [
        {"kind": "iid_propensity", "alloc": "uniform"},
        {"kind": "iid_propensity", "alloc": {"kind": "table", "p": [[0.5, 0.5], [0.3, 0.7]]}},
        {"kind": "iid_propensity", "alloc": {"kind": "scaled", "base": "neyman", "factor": 0.5}},
    ]
    cfg = parse(raw)
    assert len(cfg.designs) == 3
    bad = dict(raw)
    bad["designs"] = [{"kind": "iid_propensity",
                       "alloc": {"kind": "scaled", "base": "neyman", "factor": 0.0}}]
    with pytest.raises(nl.ValidationError, match="factor"):
        parse(bad)


def test_block_size_minimum():
    raw = minimal_raw(kind="risk", n=100, reps=10)
    raw["estimators"] = [{"kind": "diff_means"}]
    raw["designs"] = [{"kind": "stratified_blocks", "alloc": "neyman", "block_size": 1}]
    with pytest.raises(nl.ValidationError, match="block_size"):
        parse(raw)


def test_round_trip_preserves_digest():
    raw = minimal_raw(kind="risk", n=100, reps=10, theta_list=[0.0, 0.5])
    raw["designs"] = [{"kind": "matched_pairs"},
                      {"kind": "two_stage", "pilot_fraction": 0.2}]
    raw["estimators"] = [{"kind": "aipw_oracle", "alloc": "neyman"}]
    raw["output"] = "out/somewhere"
    raw["jobs"] = 2
    cfg1 = parse(raw)
    cfg2 = nl.parse_config(json.dumps(nl.serialize_config(cfg1)))
    assert nl.config_digest(cfg1) == nl.config_digest(cfg2)


def test_round_trip_constrained_general_scenario():
    sc = nl.budget_binary()
    block = nl.serialize_scenario(sc)
    back = nl.parse_scenario(block)
    assert nl.config_digest(
        nl.StudyConfig(back, (), (), {"kind": "allocation_solve"}, 1)
    ) == nl.config_digest(
        nl.StudyConfig(sc, (), (), {"kind": "allocation_solve"}, 1)
    )
    assert back.constraint is not None
    assert back.functional.kind == sc.functional.kind


def test_shipped_configs_parse():
    for name in ("solve_budget", "risk_hetero", "lan_hetero"):
        with open(f"configs/{name}.json") as fh:
            cfg = nl.parse_config(fh.read())
        assert cfg.seed == 20260816
