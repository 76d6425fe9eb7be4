import math
from dataclasses import replace

import numpy as np
import pytest

from coopfusion.dataset import Dataset
from coopfusion.detector import DetectorParams, OracleDetector
from coopfusion.experiments import (ExperimentSpec, FrameObservation, SchemeRunner, all_subsets,
                                    best_per_cardinality, compare_schemes, densities,
                                    eval_ground_truth, load_observations, read_table, roi_study,
                                    sensor_sweep, write_table)
from coopfusion.fusion import FusionConfig


@pytest.fixture(scope="module")
def obs(small_dataset):
    return load_observations(Dataset(small_dataset))


@pytest.fixture(scope="module")
def area(t_junction):
    return t_junction.detection_area


def visible_to_all(o, ids):
    """Copy of ``o`` whose ground truth keeps only objects with a point in every view."""
    keep = [k for k in range(len(o.ground_truth)) if all(o.counts[s][k] > 0 for s in ids)]
    return replace(o, ground_truth=[o.ground_truth[k] for k in keep],
                   counts={s: c[keep] for s, c in o.counts.items()},
                   far_counts={s: c[keep] for s, c in o.far_counts.items()})


@pytest.mark.parametrize("ids", [(0,), (1, 5), (1, 3, 4, 5)])
def test_perfect_detector_gives_unit_ap(obs, area, ids):
    runner = SchemeRunner(OracleDetector(DetectorParams.perfect()))
    seen = [visible_to_all(o, ids) for o in obs]
    assert sum(len(eval_ground_truth(o, area)) for o in seen) > 0
    res = compare_schemes(seen, area, runner, ("early", "late"), (0.7,), ids)
    assert [r.ap[0.7] for r in res] == [1.0, 1.0]


def test_fast_paths_match_cloud_paths(obs):
    runner = SchemeRunner(OracleDetector(DetectorParams(), seed=3))
    for o in obs:
        for ids in [(0,), (2, 4), tuple(o.clouds)]:
            assert runner.early(o, ids, fast=True) == runner.early(o, ids)
            assert runner.hybrid(o, ids, fast=True) == runner.hybrid(o, ids)


def test_infinite_radius_hybrid_equals_late(small_dataset, area):
    far = load_observations(Dataset(small_dataset), radius=1e9)
    runner = SchemeRunner(OracleDetector(DetectorParams(), seed=1))
    res = compare_schemes(far, area, runner, ("hybrid", "late"))
    assert res[0].ap == res[1].ap
    assert res[0].kbit_per_sensor == pytest.approx(res[1].kbit_per_sensor)


def test_worker_count_does_not_change_observations(small_dataset):
    ds = Dataset(small_dataset)
    a = load_observations(ds, frames=2)
    b = load_observations(ds, frames=2, workers=2)
    for x, y in zip(a, b):
        assert x.ground_truth == y.ground_truth
        for s in x.counts:
            assert np.array_equal(x.counts[s], y.counts[s])
            assert np.array_equal(x.clouds[s].points, y.clouds[s].points)


def test_observation_counts_cover_crop(obs):
    o = obs[0]
    for s, c in o.counts.items():
        assert c.sum() <= len(o.clouds[s])
        assert np.all(o.far_counts[s] <= c)


def test_all_subsets():
    subsets = all_subsets(range(6))
    assert len(subsets) == 63 and len(set(subsets)) == 63
    assert subsets[0] == (0,) and subsets[-1] == (0, 1, 2, 3, 4, 5)
    with pytest.raises(ValueError):
        all_subsets(range(9))


def test_sweep_single_sensor_early_equals_late(obs, area):
    runner = SchemeRunner(OracleDetector(DetectorParams(), seed=2))
    rows = sensor_sweep(obs, area, runner, [(k,) for k in range(6)] + [(0, 1)])
    for r in rows[:6]:
        assert r.ap_early == r.ap_late
    top = best_per_cardinality(rows, top=3)
    assert sorted(top) == [1, 2] and len(top[1]) == 3
    assert [r.ap_early for r in top[1]] == sorted((r.ap_early for r in top[1]), reverse=True)


def test_roi_empty_is_nan(obs):
    runner = SchemeRunner(OracleDetector(DetectorParams()))
    rows = roi_study(obs, (100.0, 100.0, 101.0, 101.0), runner, (1, 5))
    assert [ids for ids, _ in rows] == [(1,), (5,), (1, 5)]
    assert all(math.isnan(ap) for _, ap in rows)


def test_roi_whole_area_matches_compare(obs, area):
    runner = SchemeRunner(OracleDetector(DetectorParams(), seed=4))
    ap_pair = roi_study(obs, area, runner, (1, 5))[-1][1]
    ap_cmp = compare_schemes(obs, area, runner, ("early",), (0.7,), (1, 5))[0].ap[0.7]
    assert ap_pair == ap_cmp


def test_densities_additive(obs, area):
    a = densities(obs, (0,), area)
    b = densities(obs, (1,), area)
    assert np.array_equal(densities(obs, (0, 1), area), a + b)


def test_table_round_trip(tmp_path):
    write_table(tmp_path / "t.tsv", ("a", "b", "c"), [(1, 0.5, (1, 2)), ("x", float("nan"), ())])
    assert read_table(tmp_path / "t.tsv") == [{"a": "1", "b": "0.500000", "c": "1,2"},
                                              {"a": "x", "b": "", "c": ""}]


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(frames=0)
    with pytest.raises(ValueError):
        ExperimentSpec(kappas=(1.0,))


def test_from_frame_subset(small_dataset, t_junction):
    frame = Dataset(small_dataset).frame(0)
    o = FrameObservation.from_frame(frame, t_junction, 20.0, sensor_ids=[2])
    assert list(o.clouds) == [2] and o.radius == 20.0
    runner = SchemeRunner(OracleDetector(DetectorParams()), FusionConfig(hybrid_radius=20.0))
    assert runner.payloads("late", o, [2])[2].n_points == 0
