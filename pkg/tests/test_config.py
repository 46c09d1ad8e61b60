import argparse
import copy
import json

import pytest
import yaml

from lunar_pnt.domain.errors import ConfigError
from lunar_pnt.domain.models import BiasKind, Cooperation, UserKind
from lunar_pnt.infra.cache import JsonResultCache, config_digest
from lunar_pnt.infra.config import (
    BOUNDS_CASES,
    DEFAULT_CONFIG,
    apply_cli_overrides,
    campaign_from_cfg,
    case_variants,
    check_schema,
    load_config,
    resolve_paths,
    scenario_from_cfg,
    simulate_variant,
    validate_config,
    write_config_template,
)
from lunar_pnt.infra.waypoints import load_waypoints_csv


def _cfg(**changes):
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    for dotted, value in changes.items():
        node = cfg
        *head, last = dotted.split("__")
        for k in head:
            node = node[k]
        node[last] = value
    return cfg


def _args(**kw):
    base = dict(seed=None, trials=None, workers=None, full_horizon=False)
    base.update(kw)
    return argparse.Namespace(**base)


class TestLoading:
    def test_missing_path_gives_defaults(self, tmp_path):
        assert load_config(None) == DEFAULT_CONFIG
        assert load_config(str(tmp_path / "nope.yaml")) == DEFAULT_CONFIG

    def test_yaml_merges_over_defaults(self, tmp_path):
        p = tmp_path / "cfg.yaml"
        p.write_text("campaign:\n  trials: 7\nscenario:\n  timing:\n    duration_h: 0.5\n", encoding="utf-8")
        cfg = load_config(str(p))
        assert cfg["campaign"]["trials"] == 7
        assert cfg["campaign"]["seed"] == DEFAULT_CONFIG["campaign"]["seed"]
        assert cfg["scenario"]["timing"]["duration_h"] == 0.5
        assert cfg["scenario"]["timing"]["step_s"] == 1.0
        assert DEFAULT_CONFIG["campaign"]["trials"] == 100

    def test_json_is_accepted(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"filters": {"min_sources": 4}}), encoding="utf-8")
        assert load_config(str(p))["filters"]["min_sources"] == 4

    def test_empty_file_gives_defaults(self, tmp_path):
        p = tmp_path / "cfg.yaml"
        p.write_text("", encoding="utf-8")
        assert load_config(str(p)) == DEFAULT_CONFIG

    def test_unparsable_file(self, tmp_path):
        p = tmp_path / "cfg.yaml"
        p.write_text("campaign: [1, 2\n", encoding="utf-8")
        with pytest.raises(ConfigError) as ei:
            load_config(str(p))
        assert ei.value.path == "<file>"

    def test_non_mapping_file(self, tmp_path):
        p = tmp_path / "cfg.yaml"
        p.write_text("- 1\n- 2\n", encoding="utf-8")
        with pytest.raises(ConfigError) as ei:
            load_config(str(p))
        assert ei.value.path == "<root>"

    def test_template_round_trip(self, tmp_path):
        p = str(tmp_path / "sub" / "config.yaml")
        assert write_config_template(p)
        assert not write_config_template(p)
        with open(p, encoding="utf-8") as f:
            assert yaml.safe_load(f) == DEFAULT_CONFIG
        assert load_config(p) == DEFAULT_CONFIG

    def test_resolve_paths(self, tmp_path):
        cfg = resolve_paths(DEFAULT_CONFIG, str(tmp_path))
        assert cfg["paths"]["out_dir"] == str(tmp_path / "runs")
        assert cfg["paths"]["cache_dir"] == str(tmp_path / "cache")


class TestValidation:
    def test_defaults_validate(self):
        validate_config(copy.deepcopy(DEFAULT_CONFIG))

    def test_schema_version(self):
        with pytest.raises(ConfigError) as ei:
            check_schema(_cfg(schema_version=99))
        assert ei.value.path == "schema_version"

    @pytest.mark.parametrize("field,value,path", [
        ("scenario__timing__step_s", -1.0, "scenario.timing.step_s"),
        ("scenario__timing__duration_h", 0.0001, "scenario.timing.duration_h"),
        ("scenario__cooperation", "some", "scenario.cooperation"),
        ("scenario__priors__bias_prior", "flat", "scenario.priors.bias_prior"),
        ("scenario__static_user", 17, "scenario.static_user"),
        ("campaign__trials", 0, "campaign.trials"),
        ("campaign__divergence_policy", "median", "campaign.divergence_policy"),
        ("filters__min_sources", 2.5, "filters.min_sources"),
    ])
    def test_bad_field_reports_path(self, field, value, path):
        with pytest.raises(ConfigError) as ei:
            validate_config(_cfg(**{field: value}))
        assert ei.value.path == path

    def test_unknown_filter_name(self):
        with pytest.raises(ConfigError) as ei:
            campaign_from_cfg(_cfg(filters__names=["ekf", "ukf"]))
        assert ei.value.path == "filters.names[1]"

    def test_bad_user_waypoint(self):
        cfg = _cfg()
        cfg["scenario"]["users"][0]["waypoints"] = [[1.0, 2.0], "x"]
        with pytest.raises(ConfigError) as ei:
            scenario_from_cfg(cfg)
        assert ei.value.path == "scenario.users[0].waypoints[1]"

    def test_duplicate_user_ids(self):
        cfg = _cfg()
        cfg["scenario"]["users"][1]["id"] = "R1"
        with pytest.raises(ConfigError):
            scenario_from_cfg(cfg)


class TestBuilders:
    def test_default_scenario(self):
        sc = scenario_from_cfg(copy.deepcopy(DEFAULT_CONFIG))
        assert len(sc.users) == 5 and len(sc.satellites) == 4
        assert sc.n_epochs == 7200
        assert sc.cooperation is Cooperation.FULL
        assert sc.sat_bias_model.kind is BiasKind.GMP1
        assert sc.coop_bias_params.sigma == pytest.approx(0.22)

    def test_worst_case_models(self):
        sc = scenario_from_cfg(copy.deepcopy(DEFAULT_CONFIG), case="worst")
        assert sc.sat_bias_model.sigma2_range == pytest.approx(100.0)
        assert sc.coop_bias_params.tau == pytest.approx(8.8)

    def test_static_user_and_reference(self):
        cfg = _cfg(scenario__static_user=1)
        cfg["scenario"]["reference_station"]["enabled"] = True
        sc = scenario_from_cfg(cfg)
        assert sc.users[1].kind is UserKind.STATIC_USER
        assert sc.users[-1].kind is UserKind.REFERENCE_STATION
        assert sc.users[-1].id == "REF"

    def test_waypoints_from_csv(self, tmp_path):
        (tmp_path / "path.csv").write_text("east,north\n10,0\n10,10\n", encoding="utf-8")
        cfg = _cfg()
        cfg["scenario"]["users"][0]["waypoints_csv"] = "path.csv"
        sc = scenario_from_cfg(cfg, root=str(tmp_path))
        assert sc.users[0].waypoints == ((10.0, 0.0), (10.0, 10.0))

    def test_min_sources_reaches_campaign(self):
        assert campaign_from_cfg(_cfg(filters__min_sources=4)).min_sources == 4
        assert campaign_from_cfg(copy.deepcopy(DEFAULT_CONFIG)).min_sources == 3

    def test_mismatch_campaign(self):
        c = campaign_from_cfg(copy.deepcopy(DEFAULT_CONFIG), mismatch=True)
        assert c.mismatch.truth.coop_bias_params.tau == pytest.approx(5.5)
        assert c.mismatch.filter.coop_bias_params.tau == pytest.approx(8.8)
        assert campaign_from_cfg(copy.deepcopy(DEFAULT_CONFIG)).mismatch is None


class TestOverrides:
    def test_seed_trials_workers(self):
        cfg = apply_cli_overrides(DEFAULT_CONFIG, _args(seed=5, trials=3, workers=2))
        assert (cfg["campaign"]["seed"], cfg["campaign"]["trials"], cfg["campaign"]["workers"]) == (5, 3, 2)
        assert DEFAULT_CONFIG["campaign"]["seed"] == 0

    def test_full_horizon(self):
        cfg = apply_cli_overrides(DEFAULT_CONFIG, _args(full_horizon=True))
        assert cfg["scenario"]["timing"]["start_h"] == 0.0
        assert cfg["scenario"]["timing"]["duration_h"] == 12.0

    def test_negative_seed(self):
        with pytest.raises(ConfigError) as ei:
            apply_cli_overrides(DEFAULT_CONFIG, _args(seed=-1))
        assert ei.value.path == "--seed"

    def test_zero_trials(self):
        with pytest.raises(ConfigError) as ei:
            apply_cli_overrides(DEFAULT_CONFIG, _args(trials=0))
        assert ei.value.path == "--trials"


class TestCases:
    def test_bounds_case_variants(self):
        keys = {case: set(case_variants(DEFAULT_CONFIG, case)) for case in BOUNDS_CASES}
        assert keys["sise_models"] == {"wgn", "gmp1", "igmp1", "gmp2"}
        assert keys["sat_vs_hybrid"] == {"satellite", "hybrid", "hybrid_static"}
        assert keys["reference_station"] == {"satellite", "differential", "differential_ranging", "hybrid"}

    def test_variants_build(self):
        for case in BOUNDS_CASES:
            for vcfg in case_variants(DEFAULT_CONFIG, case).values():
                scenario_from_cfg(vcfg)

    def test_sise_variant_is_single_rover(self):
        sc = scenario_from_cfg(case_variants(DEFAULT_CONFIG, "sise_models")["igmp1"])
        assert len(sc.users) == 1
        assert sc.cooperation is Cooperation.NONE
        assert sc.sat_bias_model.kind is BiasKind.IGMP1

    def test_reference_simulate_variant(self):
        vcfg, mismatch = simulate_variant(DEFAULT_CONFIG, "mismatch_reference")
        assert mismatch
        sc = scenario_from_cfg(vcfg)
        assert [u.kind for u in sc.users].count(UserKind.REFERENCE_STATION) == 1

    def test_unknown_cases(self):
        with pytest.raises(ConfigError):
            simulate_variant(DEFAULT_CONFIG, "nowhere")
        with pytest.raises(ConfigError):
            case_variants(DEFAULT_CONFIG, "nowhere")


class TestCache:
    def test_digest_ignores_key_order(self):
        assert config_digest({"a": 1, "b": [1, 2]}) == config_digest({"b": [1, 2], "a": 1})
        assert config_digest({"a": 1}) != config_digest({"a": 2})

    def test_set_persists(self, tmp_path):
        path = str(tmp_path / "c" / "fit.json")
        JsonResultCache(path).set("k", {"tau": 5.5})
        assert JsonResultCache(path).get("k") == {"tau": 5.5}
        assert JsonResultCache(path).get("other") is None

    def test_corrupt_file_starts_empty(self, tmp_path):
        p = tmp_path / "fit.json"
        p.write_text("{not json", encoding="utf-8")
        assert JsonResultCache(str(p)).get("k") is None

    def test_other_schema_is_dropped(self, tmp_path):
        p = tmp_path / "fit.json"
        p.write_text(json.dumps({"schema": 0, "entries": {"k": {"value": {"tau": 1.0}}}}), encoding="utf-8")
        cache = JsonResultCache(str(p))
        assert cache.get("k") is None
        cache.set("j", {"tau": 2.0})
        assert JsonResultCache(str(p)).keys() == ["j"]


class TestWaypoints:
    def test_skips_header_comments_and_blanks(self, tmp_path):
        p = tmp_path / "wp.csv"
        p.write_text("# rover path\nEAST,NORTH\n\n1.5, 2\n// loop back\n-3,4\n", encoding="utf-8")
        assert load_waypoints_csv(str(p)) == [(1.5, 2.0), (-3.0, 4.0)]

    def test_bad_rows(self, tmp_path):
        p = tmp_path / "wp.csv"
        p.write_text("1,2\n3\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_waypoints_csv(str(p))
        p.write_text("1,abc\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_waypoints_csv(str(p))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_waypoints_csv(str(tmp_path / "none.csv"))
