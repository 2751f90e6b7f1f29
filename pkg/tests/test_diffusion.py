import json
import os
from dataclasses import dataclass

import numpy as np
import pytest

from liediff.diffusion import (
    NoiseSchedule,
    TrainConfig,
    _lr_at,
    adam_init,
    adam_step,
    dsm_loss,
    geodesic_walk,
    make_schedule,
    sample,
    sample_batch,
    subsample_schedule,
    train,
    truncate_schedule,
)
from liediff.lie_core import (
    ParamMode,
    RigidTransform,
    Rotation,
    compose,
    group_exp,
    group_log,
    inverse,
)
from liediff.score_net import load_params, net_forward, params_to_bytes

from oracles import chi_mean


@dataclass(frozen=True)
class Record:
    shape_id: int
    pose: RigidTransform


class ZeroRng:
    """Stands in for a Generator; every draw is exactly zero."""

    def standard_normal(self, size):
        return np.zeros(size)


@pytest.fixture
def rng():
    return np.random.default_rng(15)


def toy_config(**overrides):
    base = dict(mode=ParamMode.SO3, n_levels=2, sigma_min=0.499,
                sigma_max=0.501, batch_size=8, noisy_samples_per_datum=8,
                total_steps=2000, lr_init=1e-3, lr_final=1e-4, seed=5,
                width=64, embed_dim=8, n_freq_x=6, n_freq_t=4)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def toy_run():
    """Point mass at the identity, trained at a single effective sigma."""
    losses = []
    params = train(toy_config(), [Record(0, RigidTransform.identity())],
                   callback=lambda step, loss, lr: losses.append(loss))
    return params, losses


class TestMakeSchedule:
    def test_linear_grid(self):
        s = make_schedule(1e-4, 1.0, 100)
        assert s.sigmas[0] == 1e-4 and s.sigmas[-1] == 1.0
        assert np.allclose(np.diff(s.sigmas), np.diff(s.sigmas)[0])
        assert np.array_equal(s.net_indices, np.arange(100))

    def test_two_levels(self):
        s = make_schedule(0.1, 0.9, 2)
        assert np.array_equal(s.sigmas, [0.1, 0.9])

    def test_eps_ratio_rule(self):
        s = make_schedule(1e-3, 1.0, 50)
        i, j = 7, 31
        lhs = s.eps_steps[i] / s.eps_steps[j]
        rhs = s.sigmas[i] ** 2 / s.sigmas[j] ** 2
        assert abs(lhs - rhs) < 1e-12
        assert abs(s.eps_steps[-1] - 0.1) < 1e-15

    @pytest.mark.parametrize("bad", [(0.0, 1.0, 10), (0.5, 0.5, 10),
                                     (1.0, 0.5, 10), (0.1, 1.0, 1)])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            make_schedule(*bad)

    def test_schedule_type_validation(self):
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([0.5, 0.4]), np.array([0.1, 0.1]),
                          np.arange(2))
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([0.4, 0.5]), np.array([0.1, -0.1]),
                          np.arange(2))
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([0.4, 0.5]), np.array([0.1]), np.arange(2))


class TestSubsampleSchedule:
    def test_keeps_endpoints_and_scales_eps(self):
        full = make_schedule(1e-4, 1.0, 100)
        for n, factor in [(50, 2.0), (10, 10.0), (5, 10.0)]:
            sub = subsample_schedule(full, n)
            assert len(sub) == n
            assert sub.sigmas[0] == full.sigmas[0]
            assert sub.sigmas[-1] == full.sigmas[-1]
            assert np.all(np.isin(sub.sigmas, full.sigmas))
            ratio = sub.eps_steps / full.eps_steps[sub.net_indices]
            assert np.allclose(ratio, factor, rtol=1e-12)

    def test_identity_subsample(self):
        full = make_schedule(1e-4, 1.0, 100)
        same = subsample_schedule(full, 100)
        assert np.array_equal(same.sigmas, full.sigmas)
        assert np.array_equal(same.eps_steps, full.eps_steps)

    def test_rejects_bad_counts(self):
        full = make_schedule(1e-4, 1.0, 100)
        for n in (1, 0, 101):
            with pytest.raises(ValueError):
                subsample_schedule(full, n)


class TestTruncateSchedule:
    def test_keeps_low_levels_unchanged(self):
        full = make_schedule(1e-4, 1.0, 100, eps0=0.5)
        cut = truncate_schedule(full, 0.31)
        assert len(cut) == 31
        assert np.array_equal(cut.sigmas, full.sigmas[:31])
        assert np.array_equal(cut.eps_steps, full.eps_steps[:31])
        assert np.array_equal(cut.net_indices, full.net_indices[:31])

    def test_generous_cut_is_identity(self):
        full = make_schedule(1e-4, 1.0, 20)
        cut = truncate_schedule(full, 2.0)
        assert np.array_equal(cut.sigmas, full.sigmas)

    def test_walk_inits_at_truncated_top(self):
        # With zero scores the walkers are pure Exp(z0) plus level noise, so
        # their dispersion must track the schedule's top sigma.
        full = make_schedule(1e-4, 1.0, 100, eps0=0.1)
        cut = truncate_schedule(full, 0.1)
        out = geodesic_walk(lambda x, i, s: np.zeros_like(x), cut,
                            ParamMode.SO3, np.random.default_rng(0), n=400)
        angles = [np.linalg.norm(group_log(w, ParamMode.SO3)) for w in out]
        assert np.mean(angles) < 0.5

    def test_rejects_cut_below_two_levels(self):
        full = make_schedule(1e-4, 1.0, 100)
        with pytest.raises(ValueError, match="fewer than two"):
            truncate_schedule(full, 5e-5)


class TestDsmLoss:
    def test_zero_at_match(self, rng):
        v = rng.normal(size=6)
        assert dsm_loss(v, v) == 0.0

    def test_arithmetic_example(self):
        assert dsm_loss(np.zeros(6), np.ones(6)) == 3.0

    def test_sign_symmetric(self, rng):
        t = rng.normal(size=6)
        assert abs(dsm_loss(t + 0.3, t) - dsm_loss(t - 0.3, t)) < 1e-12

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            dsm_loss(np.zeros(3), np.zeros(6))


class TestAdam:
    @pytest.fixture
    def tiny_params(self, rng):
        from liediff.score_net import init_params
        return init_params(ParamMode.SO3, 2, np.array([0.5, 1.0]), rng,
                           width=4, embed_dim=2, n_freq_x=1, n_freq_t=1)

    def test_first_step_magnitude(self, tiny_params):
        state = adam_init(tiny_params)
        grads = {name: np.zeros_like(a) for name, a in tiny_params.flat()}
        grads["head_b"] = np.array([0.37, 0.0, 0.0])
        new, _ = adam_step(tiny_params, grads, state, lr=0.01)
        delta = new.head_b - tiny_params.head_b
        # Bias correction makes m_hat/sqrt(v_hat) = sign(g) on step one.
        assert abs(abs(delta[0]) - 0.01) < 1e-6
        assert delta[0] < 0

    def test_zero_grads_leave_params(self, tiny_params):
        state = adam_init(tiny_params)
        grads = {name: np.zeros_like(a) for name, a in tiny_params.flat()}
        new, new_state = adam_step(tiny_params, grads, state, lr=0.01)
        assert params_to_bytes(new) == params_to_bytes(tiny_params)
        assert new_state.t == 1

    def test_deterministic(self, tiny_params, rng):
        grads = {name: rng.normal(size=a.shape)
                 for name, a in tiny_params.flat()}
        a, _ = adam_step(tiny_params, grads, adam_init(tiny_params), lr=0.01)
        b, _ = adam_step(tiny_params, grads, adam_init(tiny_params), lr=0.01)
        assert params_to_bytes(a) == params_to_bytes(b)


class TestLrSchedule:
    def test_constant_then_decay(self):
        cfg = toy_config(total_steps=1000, lr_init=1e-3, lr_final=1e-5)
        assert _lr_at(cfg, 0) == 1e-3
        assert _lr_at(cfg, 499) == 1e-3
        assert abs(_lr_at(cfg, 999) - 1e-5) < 1e-12
        mid = _lr_at(cfg, 750)
        assert 1e-5 < mid < 1e-3


class TestTrain:
    def test_zero_steps_returns_init(self):
        cfg = toy_config(total_steps=0)
        data = [Record(0, RigidTransform.identity())]
        a = train(cfg, data)
        b = train(cfg, data)
        assert params_to_bytes(a) == params_to_bytes(b)

    def test_same_seed_bitwise_identical(self):
        cfg = toy_config(total_steps=30)
        data = [Record(0, RigidTransform.identity())]
        a = train(cfg, data)
        b = train(cfg, data)
        assert params_to_bytes(a) == params_to_bytes(b)

    def test_different_seed_differs(self):
        data = [Record(0, RigidTransform.identity())]
        a = train(toy_config(total_steps=30), data)
        b = train(toy_config(total_steps=30, seed=6), data)
        assert params_to_bytes(a) != params_to_bytes(b)

    def test_rejects_empty_dataset(self):
        with pytest.raises(ValueError):
            train(toy_config(total_steps=1), [])

    def test_divergence_guard(self):
        # lr large enough to overflow float64 activations on the next pass.
        cfg = toy_config(total_steps=20, lr_init=1e200, lr_final=1e200)
        data = [Record(0, RigidTransform.identity())]
        with np.errstate(all="ignore"):
            with pytest.raises(RuntimeError, match="diverged"):
                train(cfg, data)

    def test_run_dir_layout(self, tmp_path):
        run = tmp_path / "run"
        cfg = toy_config(total_steps=50, checkpoint_every=20, log_every=10,
                         run_dir=str(run))
        train(cfg, [Record(0, RigidTransform.identity())])
        with open(run / "config.json") as fh:
            snap = json.load(fh)
        assert snap["mode"] == "so3"
        assert snap["total_steps"] == 50
        rows = [line.split() for line in
                (run / "metrics.log").read_text().splitlines()]
        assert len(rows) == 5
        for row in rows:
            assert len(row) == 4
            assert np.isfinite(float(row[1]))
        assert {p.name for p in run.glob("ckpt_*.ldsn")} == \
            {"ckpt_0000020.ldsn", "ckpt_0000040.ldsn", "ckpt_final.ldsn"}
        final = load_params(run / "ckpt_final.ldsn")
        assert final.mode == ParamMode.SO3

    def test_toy_point_mass_learns_score(self, toy_run, rng):
        params, losses = toy_run
        sigma = params.sigmas[1]
        cosines = []
        for _ in range(20):
            z = rng.normal(size=3)
            z *= rng.uniform(0.2, 1.0) / np.linalg.norm(z)
            out = net_forward(params, z, 1, 0)
            target = -z / sigma ** 2
            cosines.append(out @ target / (np.linalg.norm(out)
                                           * np.linalg.norm(target)))
        assert min(cosines) > 0.99

    def test_toy_loss_drops_tenfold(self, toy_run):
        _, losses = toy_run
        assert losses[0] / np.mean(losses[-3:]) >= 10.0


class TestGeodesicWalk:
    def test_zero_score_zero_noise_is_fixed_point(self, rng):
        schedule = make_schedule(1e-4, 1.0, 20)
        init = RigidTransform(Rotation.from_quat(rng.normal(size=4)),
                              rng.uniform(-1, 1, 3))
        out = geodesic_walk(lambda x, i, s: np.zeros_like(x), schedule,
                            ParamMode.SE3, ZeroRng(), n=3, init=init)
        for got in out:
            assert init.rot.angle_to(got.rot) < 1e-15
            assert np.abs(got.trans - init.trans).max() < 1e-15

    def test_analytic_unimodal_target(self, rng):
        # Exact annealed score of a concentrated Gaussian: the walk must land
        # its mass within 3 sigma* of the center.
        sigma_star = 0.2
        schedule = make_schedule(1e-4, 1.0, 200, eps0=0.5)
        center = RigidTransform(Rotation.from_quat(rng.normal(size=4)),
                                np.zeros(3))
        inv_center = inverse(center, ParamMode.SO3)

        def score_fn(x_t, idx, sigma):
            out = np.empty_like(x_t)
            for row in range(x_t.shape[0]):
                x = group_exp(x_t[row], ParamMode.SO3)
                z = group_log(compose(inv_center, x, ParamMode.SO3),
                              ParamMode.SO3)
                out[row] = -z / (sigma_star ** 2 + sigma ** 2)
            return out

        walkers = geodesic_walk(score_fn, schedule, ParamMode.SO3, rng,
                                n=300, substeps=4)
        dists = [center.rot.angle_to(w.rot) for w in walkers]
        assert np.mean(dists) < 3 * sigma_star

    def test_substep_refinement_does_not_hurt(self):
        sigma_star = 0.2
        schedule = make_schedule(1e-4, 1.0, 200, eps0=0.5)

        def score_fn(x_t, idx, sigma):
            return -x_t / (sigma_star ** 2 + sigma ** 2)

        means = {}
        for substeps in (1, 4):
            out = geodesic_walk(score_fn, schedule, ParamMode.SO3,
                                np.random.default_rng(3), n=500,
                                substeps=substeps)
            means[substeps] = np.mean(
                [np.linalg.norm(group_log(w, ParamMode.SO3)) for w in out])
        assert means[4] <= means[1] + 1e-2

    def test_extra_rounds_tighten_the_anneal(self):
        sigma_star = 0.2
        schedule = make_schedule(1e-4, 1.0, 50, eps0=0.1)

        def score_fn(x_t, idx, sigma):
            return -x_t / (sigma_star ** 2 + sigma ** 2)

        means = {}
        for rounds in (1, 4):
            out = geodesic_walk(score_fn, schedule, ParamMode.SO3,
                                np.random.default_rng(5), n=400, rounds=rounds)
            means[rounds] = np.mean(
                [np.linalg.norm(group_log(w, ParamMode.SO3)) for w in out])
        assert means[4] <= means[1] + 1e-2

    def test_rejects_bad_counts(self, rng):
        schedule = make_schedule(1e-4, 1.0, 10)
        with pytest.raises(ValueError):
            geodesic_walk(lambda x, i, s: -x, schedule, ParamMode.SO3, rng,
                          n=0)
        with pytest.raises(ValueError):
            geodesic_walk(lambda x, i, s: -x, schedule, ParamMode.SO3, rng,
                          substeps=0)
        with pytest.raises(ValueError):
            geodesic_walk(lambda x, i, s: -x, schedule, ParamMode.SO3, rng,
                          rounds=0)

    def test_divergent_score_aborts(self, rng):
        schedule = make_schedule(1e-4, 1.0, 10)
        with pytest.raises(RuntimeError, match="diverged"):
            geodesic_walk(lambda x, i, s: np.full_like(x, np.nan), schedule,
                          ParamMode.SO3, rng)


class TestSample:
    @pytest.fixture
    def toy_schedule(self, toy_run):
        params, _ = toy_run
        return make_schedule(params.sigmas[0], params.sigmas[-1], 2)

    def test_deterministic(self, toy_run, toy_schedule):
        params, _ = toy_run
        a = sample(params, 0, toy_schedule, ParamMode.SO3,
                   np.random.default_rng(8))
        b = sample(params, 0, toy_schedule, ParamMode.SO3,
                   np.random.default_rng(8))
        assert np.array_equal(a.rot.q, b.rot.q)
        assert np.array_equal(a.trans, b.trans)

    def test_batch_count(self, toy_run, toy_schedule):
        params, _ = toy_run
        out = sample_batch(params, 0, toy_schedule, ParamMode.SO3,
                           np.random.default_rng(8), n=7)
        assert len(out) == 7

    def test_rejects_mode_mismatch(self, toy_run, toy_schedule):
        params, _ = toy_run
        with pytest.raises(ValueError):
            sample(params, 0, toy_schedule, ParamMode.SE3,
                   np.random.default_rng(0))

    def test_rejects_bad_shape_id(self, toy_run, toy_schedule):
        params, _ = toy_run
        with pytest.raises(ValueError):
            sample(params, 5, toy_schedule, ParamMode.SO3,
                   np.random.default_rng(0))

    def test_rejects_inconsistent_schedule(self, toy_run):
        params, _ = toy_run
        other = make_schedule(1e-3, 2.0, 2)
        with pytest.raises(ValueError):
            sample(params, 0, other, ParamMode.SO3, np.random.default_rng(0))

    def test_subsampled_schedule_accepted(self, toy_run):
        # Conditioning indices refer to the original level table even when
        # sampling on a reduced schedule.
        params, _ = toy_run
        full = make_schedule(params.sigmas[0], params.sigmas[-1], 2)
        assert sample(params, 0, subsample_schedule(full, 2), ParamMode.SO3,
                      np.random.default_rng(1)) is not None


class TestTrainConfigValidation:
    @pytest.mark.parametrize("bad", [
        dict(n_levels=1),
        dict(sigma_min=0.0),
        dict(sigma_min=2.0),
        dict(batch_size=0),
        dict(total_steps=-1),
        dict(lr_init=0.0),
        dict(score_kind="autodiff"),
        dict(loss_weighting="huber"),
    ])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            toy_config(**bad)
