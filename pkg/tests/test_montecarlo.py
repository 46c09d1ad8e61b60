from dataclasses import replace

import numpy as np
import pytest
from conftest import make_scenario_config

from lunar_pnt.app.montecarlo import (
    CampaignResult,
    TrialRunner,
    aggregate_rmse,
    logged_epochs,
    nees_band,
    run_campaign,
    run_mismatch,
    run_trial,
    truth_and_filter_configs,
)
from lunar_pnt.domain.errors import DomainError
from lunar_pnt.domain.models import (
    BiasKind,
    CampaignConfig,
    Gmp1Params,
    MismatchConfig,
    ModelSet,
    SatBiasModel,
    TrialResult,
)
from lunar_pnt.filters.baseline import BaselineEkf


def _result(trial, errors, diverged=False, **more):
    by_filter = {"ekf": np.asarray(errors, dtype=float)}
    by_filter.update({k: np.asarray(v, dtype=float) for k, v in more.items()})
    n = by_filter["ekf"].shape[0]
    return TrialResult(trial=trial, errors=by_filter, diverged={k: diverged for k in by_filter},
                       divergence_epoch={k: 0 if diverged else None for k in by_filter},
                       nees={k: np.ones(n) for k in by_filter}, obs_digest=str(trial),
                       visible_sats=np.zeros(n, dtype=int), gated=np.ones(n, dtype=bool),
                       filter_digests={k: str(trial) for k in by_filter})


@pytest.fixture
def campaign():
    return CampaignConfig(make_scenario_config(), filters=("baseline", "ekf"), trials=2, seed=7,
                          log_decimation=5)


class TestAggregation:
    def test_single_trial(self):
        r = _result(0, [[3.0, 4.0], [1.0, 1.0]])
        out = aggregate_rmse([r])["ekf"]
        np.testing.assert_allclose(out, [np.sqrt(12.5), 1.0])

    def test_duplicated_trials_keep_value(self):
        r = _result(0, [[3.0, 4.0], [1.0, 1.0]])
        np.testing.assert_allclose(aggregate_rmse([r, r, r])["ekf"], aggregate_rmse([r])["ekf"])

    def test_exclude_drops_diverged_trials(self):
        good = _result(0, [[1.0], [1.0]])
        bad = _result(1, [[1e4], [1e4]], diverged=True)
        np.testing.assert_allclose(aggregate_rmse([good, bad], policy="exclude")["ekf"], [1.0, 1.0])
        assert aggregate_rmse([good, bad])["ekf"][0] > 1e3

    def test_all_excluded_gives_nan(self):
        bad = _result(1, [[1e4]], diverged=True)
        assert np.isnan(aggregate_rmse([bad], policy="exclude")["ekf"]).all()

    def test_bad_input(self):
        with pytest.raises(ValueError):
            aggregate_rmse([])
        with pytest.raises(ValueError):
            aggregate_rmse([_result(0, [[1.0]])], policy="median")

    @pytest.mark.parametrize("trials,dof", [(1, 3), (100, 9)])
    def test_nees_band_brackets_dof(self, trials, dof):
        lo, hi = nees_band(trials, dof)
        assert lo < dof < hi

    def test_nees_band_narrows_with_trials(self):
        lo1, hi1 = nees_band(10, 6)
        lo2, hi2 = nees_band(1000, 6)
        assert hi2 - lo2 < hi1 - lo1


class TestTrialRunner:
    def test_logged_epochs_end_on_horizon(self):
        c = CampaignConfig(make_scenario_config(), trials=1, log_decimation=7)
        np.testing.assert_array_equal(logged_epochs(c), [0, 7, 14, 20])

    def test_rerun_is_reproducible(self, campaign):
        a = TrialRunner(campaign).run(1)
        b = TrialRunner(campaign).run(1)
        assert a.obs_digest == b.obs_digest
        for name in campaign.filters:
            np.testing.assert_array_equal(a.errors[name], b.errors[name])

    def test_run_trial_matches_runner(self, campaign):
        a = run_trial(campaign, 0)
        b = TrialRunner(campaign).run(0)
        assert a.obs_digest == b.obs_digest
        np.testing.assert_array_equal(a.errors["ekf"], b.errors["ekf"])

    def test_trials_draw_distinct_noise(self, campaign):
        runner = TrialRunner(campaign)
        assert runner.run(0).obs_digest != runner.run(1).obs_digest

    def test_error_layout(self, campaign):
        r = TrialRunner(campaign).run(0)
        n_epochs = logged_epochs(campaign).size
        for name in campaign.filters:
            assert r.errors[name].shape == (n_epochs, 3)
            assert r.nees[name].shape == (n_epochs,)
        assert r.gated.shape == r.visible_sats.shape == (n_epochs,)

    def test_tiny_threshold_marks_divergence(self):
        c = CampaignConfig(make_scenario_config(), filters=("ekf",), trials=1, divergence_threshold=1e-9)
        r = TrialRunner(c).run(0)
        assert r.diverged["ekf"]
        assert r.divergence_epoch["ekf"] == 0
        np.testing.assert_array_equal(r.errors["ekf"], 1e-9)


class TestCampaign:
    def test_frame_and_summary(self, campaign):
        res = run_campaign(campaign)
        frame = res.to_frame()
        assert {"epoch", "t_s", "filter", "rmse_m", "bcrb_m", "visible_sats", "gated"} <= set(frame.columns)
        assert set(frame["filter"]) == {"baseline", "ekf"}
        assert len(frame) == 2 * logged_epochs(campaign).size
        s = res.summary()
        assert s["trials"] == 2
        assert set(s["divergence_counts"]) == {"baseline", "ekf"}
        assert len(s["obs_digests"]) == 2
        assert res.crn_consistent()

    def test_progress_callback(self, campaign):
        seen = []
        run_campaign(campaign, lambda done, total: seen.append((done, total)))
        assert seen == [(1, 2), (2, 2)]

    def test_mismatch_requires_models(self, campaign):
        with pytest.raises(ValueError):
            run_mismatch(campaign)

    def test_mismatch_carries_both_bounds(self):
        cfg = make_scenario_config()
        truth = ModelSet(SatBiasModel.from_range_std(BiasKind.GMP1, 18_000.0, 5.0), Gmp1Params(5.5, 0.22 ** 2))
        wrong = ModelSet(SatBiasModel.from_range_std(BiasKind.GMP1, 18_000.0, 10.0), Gmp1Params(5.5, 0.44 ** 2))
        c = CampaignConfig(cfg, filters=("ekf",), trials=1, mismatch=MismatchConfig(truth, wrong))
        t_cfg, f_cfg = truth_and_filter_configs(c)
        assert f_cfg.coop_bias_params.sigma2 > t_cfg.coop_bias_params.sigma2
        res = run_mismatch(c)
        assert "bcrb_worst_m" in res.to_frame().columns
        assert np.all(res.bound_series("bcrb_worst") >= res.bound_series("bcrb") * (1 - 1e-6))

    @pytest.mark.slow
    def test_worker_pool_matches_serial(self, campaign):
        serial = run_campaign(campaign)
        pooled = run_campaign(CampaignConfig(campaign.scenario, filters=campaign.filters, trials=2, seed=7,
                                             log_decimation=5, workers=2))
        assert serial.summary()["obs_digests"] == pooled.summary()["obs_digests"]
        for name in campaign.filters:
            np.testing.assert_array_equal(serial.rmse[name], pooled.rmse[name])


class TestUpdateGate:
    def test_campaign_gate_reaches_filters(self, campaign):
        runner = TrialRunner(replace(campaign, min_sources=4))
        assert runner.gate.min_sources == 4
        for name in campaign.filters:
            assert runner.registry.get(name).gate.min_sources == 4

    def test_four_sources_gate_fewer_epochs_than_three(self, campaign):
        # no reference station, so satellites are the only sources
        three = TrialRunner(replace(campaign, min_sources=3)).run(0)
        four = TrialRunner(replace(campaign, min_sources=4)).run(0)
        np.testing.assert_array_equal(three.gated, three.visible_sats >= 3)
        np.testing.assert_array_equal(four.gated, four.visible_sats >= 4)
        assert np.all(four.gated <= three.gated)

    def test_closed_gate_leaves_filters_on_prior(self, campaign):
        opened = TrialRunner(replace(campaign, min_sources=0)).run(0)
        closed = TrialRunner(replace(campaign, min_sources=99)).run(0)
        assert opened.gated.all() and not closed.gated.any()
        assert not np.allclose(opened.errors["ekf"], closed.errors["ekf"])

    def test_closed_gate_reaches_bound(self, campaign):
        res = run_campaign(replace(campaign, min_sources=99))
        assert np.all(np.diff(res.bounds["bcrb"].peb) >= -1e-9)

    def test_negative_min_sources_rejected(self, campaign):
        with pytest.raises(DomainError):
            replace(campaign, min_sources=-1)


class TestCommonRandomNumbers:
    def _campaign_result(self, results):
        n = results[0].errors["ekf"].shape[0]
        return CampaignResult(epochs=np.arange(n), times=np.arange(n, dtype=float), results=results,
                              rmse=aggregate_rmse(results), bounds={}, policy="include", runtime_s=0.0)

    def test_every_filter_consumes_trial_log(self, campaign):
        r = TrialRunner(campaign).run(0)
        assert set(r.filter_digests) == set(campaign.filters)
        assert all(d == r.obs_digest for d in r.filter_digests.values())

    def test_filter_touching_observations_is_flagged(self, campaign, monkeypatch):
        real = BaselineEkf._update

        def shifted(self, est, obs, R):
            obs.values += 1.0
            return real(self, est, obs, R)

        monkeypatch.setattr(BaselineEkf, "_update", shifted)
        res = run_campaign(replace(campaign, min_sources=0))
        r = res.results[0]
        assert r.filter_digests["baseline"] != r.obs_digest
        assert not res.crn_consistent()
        assert res.trials_distinct()

    def test_check_compares_filters_within_trial(self):
        results = [_result(t, [[1.0]], iekf=[[1.0]]) for t in range(3)]
        res = self._campaign_result(results)
        assert res.crn_consistent() and res.trials_distinct()
        results[1].filter_digests["iekf"] = "elsewhere"
        assert not res.crn_consistent()

    def test_missing_filter_digest_is_inconsistent(self):
        r = _result(0, [[1.0]], iekf=[[1.0]])
        del r.filter_digests["iekf"]
        assert not self._campaign_result([r]).crn_consistent()

    def test_repeated_trial_log_is_not_distinct(self):
        res = self._campaign_result([_result(0, [[1.0]]), _result(0, [[2.0]])])
        assert res.crn_consistent()
        assert not res.trials_distinct()

    def test_trial_win_rate(self):
        results = [_result(0, [[2.0]], iekf=[[1.0]]), _result(1, [[1.0]], iekf=[[3.0]]),
                   _result(2, [[4.0]], iekf=[[4.0]]), _result(3, [[5.0]], iekf=[[1.0]])]
        res = self._campaign_result(results)
        assert res.trial_win_rate("iekf", "ekf") == pytest.approx(0.75)
        assert res.trial_win_rate("ekf", "iekf") == pytest.approx(0.5)
