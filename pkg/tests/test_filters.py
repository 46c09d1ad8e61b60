from dataclasses import replace

import numpy as np
import pytest

from lunar_pnt.domain.errors import FilterError
from lunar_pnt.domain.models import EpochGeometry, FilterEstimate, ObservationSet, ProcessModel
from lunar_pnt.domain.policy import IterationPolicy, UpdateGate, gate_update
from lunar_pnt.domain.registry import FilterRegistry
from lunar_pnt.domain.statespace import (
    ObservationModel,
    SparseHessian,
    build_index_map,
    effective_variances,
    simulate_truth,
)
from lunar_pnt.filters.base import factor_innovation, init_estimate, kf_predict, nees
from lunar_pnt.filters.baseline import BaselineEkf, baseline_ekf_update
from lunar_pnt.filters.ekf import ekf_update
from lunar_pnt.filters.ekf2 import AugmentedEkf2, ekf2_update, second_order_terms
from lunar_pnt.filters.iekf import AugmentedIekf, iekf_update

OPEN_GATE = UpdateGate(min_sources=0)


@pytest.fixture
def record(small_cfg, small_scenario):
    return simulate_truth(small_cfg, build_index_map(small_cfg), small_scenario, seed=1, trial=0)


def _run(flt, record, scenario):
    flt.bind(scenario)
    est = flt.initialize(record.states[0], record.imap)
    out = []
    for k, obs in enumerate(record.observations):
        if k > 0:
            est = flt.predict(est)
        est = flt.update(est, obs)
        out.append(est)
    return out


class TestPolicy:
    def test_gate_counts_sources(self):
        gate = UpdateGate()
        assert not gate.allows(2, 0)
        assert gate.allows(2, 1)
        assert gate.allows(4, 0)
        assert gate_update(3, 0)

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            UpdateGate().allows(-1, 0)

    def test_iteration_policy_bounds(self):
        with pytest.raises(ValueError):
            IterationPolicy(max_iter=0)
        with pytest.raises(ValueError):
            IterationPolicy(tol=0.0)


class TestRegistry:
    @pytest.mark.parametrize("name,cls", [("baseline", BaselineEkf), ("IEKF", AugmentedIekf),
                                          ("second_order", AugmentedEkf2)])
    def test_aliases(self, small_cfg, name, cls):
        assert isinstance(FilterRegistry(small_cfg).get(name), cls)

    def test_unknown_filter(self, small_cfg):
        with pytest.raises(KeyError):
            FilterRegistry(small_cfg).get("ukf")

    def test_baseline_uses_reduced_state(self, small_cfg):
        reg = FilterRegistry(small_cfg)
        assert reg.get("baseline").imap.dim < reg.get("ekf").imap.dim


class TestBase:
    def test_predict_needs_scenario(self, small_cfg, record):
        flt = FilterRegistry(small_cfg).get("ekf")
        with pytest.raises(RuntimeError):
            flt.predict(flt.initialize(record.states[0]))

    def test_init_from_truth(self, small_cfg, record):
        imap = build_index_map(small_cfg)
        est = init_estimate(small_cfg, imap, record.states[0], imap)
        for u in imap.users:
            for s in (u.position, u.velocity, u.clock):
                if s is not None:
                    np.testing.assert_array_equal(est.mean[s], record.states[0, s])
        for s in imap.sat_bias:
            np.testing.assert_array_equal(est.mean[s], 0.0)

    def test_init_draw_is_seeded(self, small_cfg, record):
        imap = build_index_map(small_cfg)
        a = init_estimate(small_cfg, imap, record.states[0], imap, np.random.default_rng(3))
        b = init_estimate(small_cfg, imap, record.states[0], imap, np.random.default_rng(3))
        np.testing.assert_array_equal(a.mean, b.mean)
        assert not np.allclose(a.mean[imap.users[0].position], record.states[0, imap.users[0].position])

    def test_baseline_maps_truth_across_layouts(self, small_cfg, record):
        flt = FilterRegistry(small_cfg).get("baseline")
        est = flt.initialize(record.states[0], record.imap)
        p = flt.imap.users[1].position
        np.testing.assert_array_equal(est.mean[p], record.states[0, record.imap.users[1].position])

    def test_nees_identity(self):
        e = np.array([1.0, -2.0, 0.5])
        assert nees(e, np.eye(3)) == pytest.approx(5.25)
        assert nees(e, 4.0 * np.eye(3)) == pytest.approx(5.25 / 4.0)

    def test_indefinite_innovation_raises(self):
        with pytest.raises(FilterError):
            factor_innovation(-np.eye(2), epoch=7)


class TestUpdateFunctions:
    def test_predict_identity(self):
        est = FilterEstimate(np.array([1.0, -2.0]), np.diag([4.0, 9.0]), 3)
        out = kf_predict(est, ProcessModel(np.eye(2), np.zeros((2, 2)), np.zeros(2)))
        np.testing.assert_array_equal(out.mean, est.mean)
        np.testing.assert_array_equal(out.cov, est.cov)
        assert out.epoch == 4

    def test_predict_scalar_gauss_markov(self):
        alpha = np.exp(-1.0 / 5.5)
        q = 0.22 ** 2 * (1.0 - alpha ** 2)
        est = FilterEstimate(np.array([0.1]), np.array([[0.3]]), 0)
        out = kf_predict(est, ProcessModel(np.array([[alpha]]), np.array([[q]]), np.zeros(1)))
        assert out.cov[0, 0] == pytest.approx(alpha ** 2 * 0.3 + q)
        assert out.mean[0] == pytest.approx(alpha * 0.1)

    def test_huge_noise_leaves_state(self, small_cfg, record):
        imap = build_index_map(small_cfg)
        est = init_estimate(small_cfg, imap, record.states[0], imap, np.random.default_rng(5))
        obs = record.observations[0]
        out = ekf_update(est, obs, ObservationModel(imap), 1e24 * np.eye(len(obs)))
        np.testing.assert_allclose(out.mean, est.mean, atol=1e-6)

    def test_single_pass_iekf_is_ekf(self, small_cfg, record):
        imap = build_index_map(small_cfg)
        est = init_estimate(small_cfg, imap, record.states[0], imap, np.random.default_rng(5))
        obs = record.observations[0]
        model = ObservationModel(imap)
        R = np.diag(effective_variances(obs, small_cfg, imap))
        a = ekf_update(est, obs, model, R)
        b = iekf_update(est, obs, model, R, max_iter=1)
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.cov, b.cov)

    @pytest.mark.parametrize("name,fn", [("ekf", ekf_update), ("ekf2", ekf2_update)])
    def test_filter_update_uses_free_function(self, small_cfg, small_scenario, record, name, fn):
        flt = FilterRegistry(small_cfg, OPEN_GATE).get(name).bind(small_scenario)
        est = flt.initialize(record.states[0], record.imap, np.random.default_rng(5))
        obs = record.observations[0]
        R = np.diag(effective_variances(obs, small_cfg, flt.imap))
        a = flt.update(est, obs)
        b = fn(est, obs, flt.model, R)
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.cov, b.cov)


class TestUpdates:
    def test_single_iteration_iekf_equals_ekf(self, small_cfg, small_scenario, record):
        reg = FilterRegistry(small_cfg, OPEN_GATE, IterationPolicy(max_iter=1))
        a = _run(reg.get("ekf"), record, small_scenario)
        b = _run(reg.get("iekf"), record, small_scenario)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.mean, y.mean)
            np.testing.assert_array_equal(x.cov, y.cov)

    @pytest.mark.parametrize("name", ["baseline", "ekf", "iekf", "ekf2"])
    def test_covariance_stays_symmetric_psd(self, small_cfg, small_scenario, record, name):
        flt = FilterRegistry(small_cfg, OPEN_GATE).get(name)
        for est in _run(flt, record, small_scenario):
            np.testing.assert_array_equal(est.cov, est.cov.T)
            assert np.linalg.eigvalsh(est.cov).min() > -1e-9 * np.abs(est.cov).max()
        assert flt.skipped == 0

    def test_closed_gate_skips_every_update(self, small_cfg, small_scenario, record):
        flt = FilterRegistry(small_cfg, UpdateGate(min_sources=99)).get("ekf")
        flt.bind(small_scenario)
        est = flt.initialize(record.states[0])
        out = flt.update(est, record.observations[0])
        assert out is est
        for obs in record.observations[1:]:
            pred = flt.predict(out)
            out = flt.update(pred, obs)
            assert out is pred
        assert flt.skipped == len(record.observations)

    def test_update_shrinks_covariance(self, small_cfg, small_scenario, record):
        flt = FilterRegistry(small_cfg, OPEN_GATE).get("iekf").bind(small_scenario)
        est = flt.initialize(record.states[0])
        out = flt.update(est, record.observations[0])
        assert np.trace(out.cov) < np.trace(est.cov)
        assert out.epoch == 0

    def test_baseline_free_function_matches_filter(self, small_cfg, small_scenario, record):
        flt = BaselineEkf(small_cfg, OPEN_GATE).bind(small_scenario)
        est = flt.initialize(record.states[0], record.imap)
        obs = record.observations[0]
        a = flt.update(est, obs)
        b = baseline_ekf_update(est, obs, small_cfg, flt.imap)
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.cov, b.cov)


class TestSecondOrder:
    def test_terms_match_dense_traces(self, rng):
        dim = 7
        A = rng.normal(size=(dim, dim))
        P = A @ A.T + np.eye(dim)
        blocks = []
        for idx in (np.array([0, 1, 2]), np.array([2, 3, 4, 5]), np.array([6])):
            B = rng.normal(size=(idx.size, idx.size))
            blocks.append(SparseHessian(idx, B + B.T))
        blocks.append(SparseHessian(np.zeros(0, dtype=int), np.zeros((0, 0))))
        corr, S2 = second_order_terms(blocks, P)
        dense = [b.to_dense(dim) for b in blocks]
        for l, Nl in enumerate(dense):
            assert corr[l] == pytest.approx(0.5 * np.trace(Nl @ P))
            for m, Nm in enumerate(dense):
                assert S2[l, m] == pytest.approx(0.5 * np.trace(Nl @ P @ Nm @ P))

    def test_no_curvature_no_terms(self):
        empty = SparseHessian(np.zeros(0, dtype=int), np.zeros((0, 0)))
        corr, S2 = second_order_terms([empty, empty], np.eye(3))
        np.testing.assert_array_equal(corr, 0.0)
        np.testing.assert_array_equal(S2, 0.0)

    def test_ekf2_inflates_innovation_noise(self, small_cfg, small_scenario, record):
        reg = FilterRegistry(small_cfg, OPEN_GATE)
        obs = record.observations[0]
        ekf = reg.get("ekf").bind(small_scenario)
        ekf2 = reg.get("ekf2").bind(small_scenario)
        est = ekf.initialize(record.states[0])
        a = ekf.update(est, obs)
        b = ekf2.update(FilterEstimate(est.mean.copy(), est.cov.copy(), 0), obs)
        assert np.trace(b.cov) >= np.trace(a.cov) - 1e-9 * np.trace(a.cov)

    def test_observation_model_is_shared_shape(self, small_cfg, record):
        imap = build_index_map(small_cfg)
        obs = record.observations[0]
        H = ObservationModel(imap).jacobian(record.states[0], obs.geometry)
        assert H.shape == (len(obs), imap.dim)

    def test_baseline_filter_routes_through_free_function(self, small_cfg, small_scenario, record, monkeypatch):
        import lunar_pnt.filters.baseline as baseline

        calls = []
        real = baseline.baseline_ekf_update

        def spy(est, obs, cfg, imap, model=None, R=None):
            calls.append((obs.epoch, R is not None))
            return real(est, obs, cfg, imap, model, R)

        monkeypatch.setattr(baseline, "baseline_ekf_update", spy)
        flt = BaselineEkf(small_cfg, OPEN_GATE).bind(small_scenario)
        flt.update(flt.initialize(record.states[0], record.imap), record.observations[0])
        assert calls == [(0, True)]


class TestUpdateGate:
    def _with_sources(self, obs, sats, anchors):
        return replace(obs, geometry=replace(obs.geometry, visible_sats=sats, visible_anchors=anchors))

    @pytest.mark.parametrize("name", ["baseline", "ekf", "iekf", "ekf2"])
    def test_four_sources_required_suppresses_three_source_update(self, small_cfg, small_scenario, record, name):
        obs = self._with_sources(record.observations[0], 3, 0)
        three = FilterRegistry(small_cfg, UpdateGate(min_sources=3)).get(name).bind(small_scenario)
        four = FilterRegistry(small_cfg, UpdateGate(min_sources=4)).get(name).bind(small_scenario)
        e3 = three.initialize(record.states[0], record.imap)
        e4 = four.initialize(record.states[0], record.imap)
        out3 = three.update(e3, obs)
        out4 = four.update(e4, obs)
        assert three.skipped == 0 and four.skipped == 1
        assert out4 is e4
        assert np.trace(out3.cov) < np.trace(e3.cov)

    def test_anchor_counts_as_source(self, small_cfg, small_scenario, record):
        obs = self._with_sources(record.observations[0], 3, 1)
        flt = FilterRegistry(small_cfg, UpdateGate(min_sources=4)).get("ekf").bind(small_scenario)
        flt.update(flt.initialize(record.states[0], record.imap), obs)
        assert flt.skipped == 0


class _LinearModel:
    """h(x) = H x + c: no curvature, so every update reduces to the Kalman filter."""

    def __init__(self, H, offset):
        self.H, self.offset = H, offset

    def predict(self, x, geom):
        return self.H @ x + self.offset

    def jacobian(self, x, geom):
        return self.H

    def hessians(self, x, geom):
        return [SparseHessian(np.zeros(0, dtype=int), np.zeros((0, 0))) for _ in range(self.H.shape[0])]


class TestLinearGaussianReduction:
    DIM, OBS, STEPS = 6, 4, 8

    def _updates(self):
        return {
            "ekf": ekf_update,
            "iekf": lambda est, obs, model, R: iekf_update(est, obs, model, R, max_iter=10, tol=1e-12),
            "ekf2": ekf2_update,
            "baseline": lambda est, obs, model, R: baseline_ekf_update(est, obs, None, None, model, R),
        }

    def test_all_updates_match_kalman_filter(self, rng):
        n, m = self.DIM, self.OBS
        F = np.eye(n) + 0.1 * rng.normal(size=(n, n))
        A = rng.normal(size=(n, n))
        pm = ProcessModel(F, 0.01 * (A @ A.T) + 0.01 * np.eye(n), np.zeros(n))
        model = _LinearModel(rng.normal(size=(m, n)), rng.normal(size=m))
        R = np.diag(rng.uniform(0.5, 2.0, m))
        B = rng.normal(size=(n, n))
        x0 = FilterEstimate(rng.normal(size=n), B @ B.T + np.eye(n), 0)
        zs = [rng.normal(size=m) for _ in range(self.STEPS)]

        # textbook Kalman recursion
        x, P = x0.mean.copy(), x0.cov.copy()
        ref = []
        for k, z in enumerate(zs):
            if k > 0:
                x, P = F @ x, F @ P @ F.T + pm.noise_cov
            H = model.H
            K = P @ H.T @ np.linalg.inv(H @ P @ H.T + R)
            x = x + K @ (z - H @ x - model.offset)
            P = (np.eye(n) - K @ H) @ P
            ref.append((x, P))

        for name, update in self._updates().items():
            est = x0
            for k, z in enumerate(zs):
                if k > 0:
                    est = kf_predict(est, pm)
                obs = ObservationSet(EpochGeometry(epoch=k, specs=()), z, np.diag(R))
                est = update(est, obs, model, R)
                np.testing.assert_allclose(est.mean, ref[k][0], rtol=1e-9, atol=1e-9, err_msg=name)
                np.testing.assert_allclose(est.cov, ref[k][1], rtol=1e-9, atol=1e-9, err_msg=name)
