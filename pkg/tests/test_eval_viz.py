"""Spread, translation error, mode coverage, and the Euler-angle export."""

import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation as ScipyRotation

from liediff.eval_viz import (
    build_report,
    euler_zyx,
    mode_coverage,
    mollweide_export,
    rotation_spread,
    translation_error,
)
from liediff.lie_core import ParamMode, RigidTransform, Rotation, so3_exp
from liediff.symsol_synth import equivalent_distance, symmetry_group


def random_rotation(rng):
    return Rotation.from_quat(rng.standard_normal(4))


class TestRotationSpread:
    def test_zero_on_symmetry_modes(self):
        rng = np.random.default_rng(0)
        spec = symmetry_group("cube")
        gt = random_rotation(rng)
        preds = [gt.compose(s) for s in spec.discrete]
        assert rotation_spread(preds, gt, spec) < 1e-7

    def test_mean_of_half_zero_half_four_degrees(self):
        rng = np.random.default_rng(1)
        gt = random_rotation(rng)
        off = so3_exp(np.array([math.radians(4.0), 0.0, 0.0]))
        preds = [gt] * 5 + [gt.compose(off)] * 5
        assert abs(rotation_spread(preds, gt, "tet") - 2.0) < 1e-6

    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(2)
        spec = symmetry_group("icosa")
        gt = random_rotation(rng)
        preds = [random_rotation(rng) for _ in range(20)]
        got = rotation_spread(preds, gt, spec)
        gt_s = ScipyRotation.from_quat(np.roll(gt.q, -1))
        orbit = ScipyRotation.concatenate(
            [gt_s * ScipyRotation.from_quat(np.roll(s.q, -1)) for s in spec.discrete])
        want = np.mean([
            math.degrees((ScipyRotation.from_quat(np.roll(p.q, -1)).inv() * orbit)
                         .magnitude().min())
            for p in preds
        ])
        assert abs(got - want) < 1e-9

    def test_invariant_under_gt_relabeling(self):
        rng = np.random.default_rng(3)
        spec = symmetry_group("tet")
        gt = random_rotation(rng)
        preds = [random_rotation(rng) for _ in range(10)]
        base = rotation_spread(preds, gt, spec)
        relabeled = rotation_spread(preds, gt.compose(spec.discrete[5]), spec)
        assert abs(base - relabeled) < 1e-9

    def test_empty_predictions_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            rotation_spread([], Rotation.identity(), "tet")


class TestTranslationError:
    def test_exact_predictions(self):
        preds = np.tile([0.2, -0.4, 0.9], (6, 1))
        assert translation_error(preds, [0.2, -0.4, 0.9]) == 0.0

    def test_constant_offset(self):
        gt = np.array([0.1, 0.2, 0.3])
        preds = np.tile(gt + [0.3, 0.0, 0.0], (4, 1))
        assert abs(translation_error(preds, gt) - 0.3) < 1e-15

    def test_matches_componentwise_oracle(self):
        rng = np.random.default_rng(4)
        preds = rng.uniform(-1, 1, size=(50, 3))
        gt = rng.uniform(-1, 1, size=3)
        want = sum(math.sqrt(((p - gt) ** 2).sum()) for p in preds) / 50.0
        assert abs(translation_error(preds, gt) - want) < 1e-12

    @pytest.mark.parametrize("preds,gt", [
        (np.zeros((0, 3)), np.zeros(3)),
        (np.zeros((4, 2)), np.zeros(3)),
        (np.zeros((4, 3)), np.zeros(2)),
    ])
    def test_bad_shapes_rejected(self, preds, gt):
        with pytest.raises(ValueError):
            translation_error(preds, gt)


class TestModeCoverage:
    def test_uniform_assignment(self):
        rng = np.random.default_rng(5)
        spec = symmetry_group("tet")
        gt = random_rotation(rng)
        preds = [gt.compose(s) for s in spec.discrete for _ in range(100)]
        fractions = mode_coverage(preds, gt, spec)
        np.testing.assert_allclose(fractions, np.full(12, 1.0 / 12.0), atol=1e-12)

    def test_single_mode_concentration(self):
        rng = np.random.default_rng(6)
        spec = symmetry_group("cube")
        gt = random_rotation(rng)
        preds = [gt.compose(spec.discrete[7])] * 30
        fractions = mode_coverage(preds, gt, spec)
        assert fractions[7] == 1.0
        assert fractions.sum() == 1.0

    def test_fractions_sum_to_one(self):
        rng = np.random.default_rng(7)
        spec = symmetry_group("icosa")
        gt = random_rotation(rng)
        preds = [random_rotation(rng) for _ in range(137)]
        fractions = mode_coverage(preds, gt, spec)
        assert abs(fractions.sum() - 1.0) < 1e-9
        assert fractions.min() >= 0.0

    def test_relabeling_permutes_fractions(self):
        rng = np.random.default_rng(8)
        spec = symmetry_group("tet")
        gt = random_rotation(rng)
        preds = [gt.compose(s).compose(so3_exp(0.05 * rng.standard_normal(3)))
                 for s in spec.discrete for _ in range(3)]
        base = mode_coverage(preds, gt, spec)
        relabeled = mode_coverage(preds, gt.compose(spec.discrete[4]), spec)
        np.testing.assert_allclose(np.sort(base), np.sort(relabeled), atol=1e-12)

    def test_continuous_spec_rejected(self):
        with pytest.raises(ValueError, match="continuous"):
            mode_coverage([Rotation.identity()], Rotation.identity(), "cone")

    def test_empty_predictions_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            mode_coverage([], Rotation.identity(), "tet")


class TestEulerExport:
    def test_identity_row(self, tmp_path):
        path = tmp_path / "id.csv"
        n = mollweide_export([Rotation.identity()], path)
        lines = path.read_text().splitlines()
        assert n == 1
        assert lines[0] == "lon,lat,roll,gimbal_flag"
        assert lines[1] == "0,0,0,0"

    def test_pure_yaw(self, tmp_path):
        path = tmp_path / "yaw.csv"
        mollweide_export([so3_exp(np.array([0.0, 0.0, 1.0]))], path)
        lon, lat, roll, flag = path.read_text().splitlines()[1].split(",")
        assert abs(float(lon) - 1.0) < 1e-15
        assert abs(float(lat)) < 1e-12
        assert abs(float(roll)) < 1e-12
        assert flag == "0"

    def test_row_count(self, tmp_path):
        rng = np.random.default_rng(9)
        rots = [random_rotation(rng) for _ in range(17)]
        path = tmp_path / "n.csv"
        assert mollweide_export(rots, path) == 17
        assert len(path.read_text().splitlines()) == 18

    def test_roundtrip_away_from_lock(self, tmp_path):
        rng = np.random.default_rng(10)
        rots = []
        while len(rots) < 50:
            r = random_rotation(rng)
            if abs(r.as_matrix()[2, 0]) < 0.99:
                rots.append(r)
        path = tmp_path / "rt.csv"
        mollweide_export(rots, path)
        for line, rot in zip(path.read_text().splitlines()[1:], rots):
            yaw, pitch, roll, flag = (float(v) for v in line.split(","))
            assert flag == 0.0
            rebuilt = (so3_exp(np.array([0.0, 0.0, yaw]))
                       .compose(so3_exp(np.array([0.0, pitch, 0.0])))
                       .compose(so3_exp(np.array([roll, 0.0, 0.0]))))
            assert rebuilt.angle_to(rot) < 1e-9

    def test_gimbal_flagging(self, tmp_path):
        near_lock = so3_exp(np.array([0.0, math.pi / 2.0 - 1e-4, 0.0]))
        clear = so3_exp(np.array([0.0, 0.3, 0.0]))
        path = tmp_path / "flag.csv"
        mollweide_export([near_lock, clear], path)
        rows = path.read_text().splitlines()[1:]
        assert rows[0].endswith(",1")
        assert rows[1].endswith(",0")

    def test_euler_against_scipy(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            rot = random_rotation(rng)
            yaw, pitch, roll, flagged = euler_zyx(rot)
            if flagged:
                continue
            want = ScipyRotation.from_quat(np.roll(rot.q, -1)).as_euler("ZYX")
            np.testing.assert_allclose([yaw, pitch, roll], want, atol=1e-12)


class TestBuildReport:
    def test_se3_report_fields(self):
        rng = np.random.default_rng(12)
        gt = RigidTransform(random_rotation(rng), np.array([0.1, 0.2, -0.3]))
        spec = symmetry_group("tet")
        preds = [RigidTransform(gt.rot.compose(s), gt.trans + 0.01)
                 for s in spec.discrete]
        report = build_report({"tet": preds}, {"tet": gt}, ParamMode.SE3)
        assert report.counts["tet"] == 12
        assert report.spread_deg["tet"] < 1e-6
        assert abs(report.trans_err["tet"] - 0.01 * math.sqrt(3)) < 1e-12
        assert abs(report.coverage["tet"].sum() - 1.0) < 1e-9

    def test_so3_report_skips_translation(self):
        rng = np.random.default_rng(13)
        gt = RigidTransform(random_rotation(rng), np.zeros(3))
        preds = [RigidTransform(gt.rot, np.zeros(3))] * 4
        report = build_report({"cube": preds}, {"cube": gt}, ParamMode.SO3)
        assert report.trans_err == {}
        assert report.counts["cube"] == 4

    def test_continuous_shape_gets_no_coverage(self):
        rng = np.random.default_rng(14)
        gt = RigidTransform(random_rotation(rng), np.zeros(3))
        preds = [RigidTransform(gt.rot, np.zeros(3))] * 3
        report = build_report({"cyl": preds}, {"cyl": gt}, ParamMode.SO3)
        assert "cyl" not in report.coverage
        assert report.spread_deg["cyl"] < 1e-6

    def test_json_dict_round(self):
        rng = np.random.default_rng(15)
        gt = RigidTransform(random_rotation(rng), np.zeros(3))
        preds = [RigidTransform(gt.rot, np.zeros(3))] * 2
        report = build_report({"tet": preds}, {"tet": gt}, ParamMode.SO3)
        d = report.to_json_dict()
        assert set(d) == {"spread_deg", "trans_err", "counts", "coverage"}
        assert isinstance(d["coverage"]["tet"], list)
        assert len(d["coverage"]["tet"]) == 12
