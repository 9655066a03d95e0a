import json
import math

import numpy as np
import pytest

from kac.errors import KacError
from kac.particle import CollisionEvent
from kac.records import (PopulationSummary, RegressionSummary, build_manifest, events_to_records,
                         validate_output_dir, write_coupling_csv, write_json, write_jsonl, write_moment_csv,
                         write_trajectory_csv)
from kac.statistics import (batch_means, binomial_stderr, frozen_linear_rate, linear_rate_holds, mean_and_stderr,
                            nonincreasing_within)


def test_trajectory_csv_layout(tmp_path):
    snaps = [np.arange(6.0).reshape(2, 3), np.arange(6.0).reshape(2, 3) + 0.1]
    path = write_trajectory_csv(tmp_path / "trajectory.csv", [0.0, 0.5], snaps)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,i,v_1,v_2,v_3"
    assert len(lines) == 5
    assert lines[3].startswith("0.5,0,0.10000000000000001")


def test_moment_csv_is_long_format(tmp_path):
    path = write_moment_csv(tmp_path / "moments.csv", [0.0, 1.0], {4.0: [3.0, 3.5], 2.0: [2.0, 2.0]})
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (4, 3)
    assert list(data[:, 1]) == [2.0, 2.0, 4.0, 4.0]


def test_event_records_drop_rejected_angles():
    events = [CollisionEvent(0.1, 0, 1, 2.0, (1.0, 0.0), 0.3, True),
              CollisionEvent(0.2, 0, 2, 9.0, (0.0, 1.0), math.nan, False)]
    records = events_to_records(events)
    assert records[0].theta == 0.3
    assert records[1].theta is None
    assert json.loads(records[1].model_dump_json())["phi"] == [0.0, 1.0]


def test_output_directory_validation(tmp_path):
    write_coupling_csv(tmp_path / "coupling.csv", [(16.0, 0, 0.5, 1e-3)])
    write_jsonl(tmp_path / "populations.jsonl",
                [PopulationSummary(t=1.0, size=3, signed_mass=1, unsigned_second_moment=4.5)])
    write_json(tmp_path / "regression.json", RegressionSummary(slope=-1.0, intercept=0.2, stderr=0.1, n_points=7))
    write_json(tmp_path / "report.json", {"value": np.float64(1.5), "nan": math.nan})
    (tmp_path / "notes.txt").write_text("ignored")
    assert validate_output_dir(tmp_path) == ["coupling.csv", "populations.jsonl", "regression.json",
                                             "report.json"]


def test_output_directory_rejects_bad_schema(tmp_path):
    (tmp_path / "regression.json").write_text(json.dumps({"slope": -1.0}))
    with pytest.raises(KacError):
        validate_output_dir(tmp_path)


def test_output_directory_rejects_bad_header(tmp_path):
    (tmp_path / "coupling.csv").write_text("K,t\n1,2\n")
    with pytest.raises(KacError):
        validate_output_dir(tmp_path)


def test_manifest_lists_sorted_files():
    manifest = build_manifest("conserve", "success", "abc", 1, 2, "2024-01-01T00:00:00+00:00", 0.5,
                              ["b.csv", "a.json"])
    assert manifest.files == ["a.json", "b.csv"]
    assert manifest.host.cpu_count is None or manifest.host.cpu_count >= 1


def test_mean_and_stderr():
    assert mean_and_stderr([2.0, 4.0]) == pytest.approx((3.0, 1.0))
    mean, se = mean_and_stderr([1.5])
    assert mean == 1.5 and math.isnan(se)


def test_binomial_stderr():
    assert binomial_stderr(0.5, 100) == pytest.approx(0.05)
    assert binomial_stderr(0.0, 10) == 0.0


def test_batch_means_on_constant_series():
    assert batch_means(np.full(64, 2.0)) == (2.0, 0.0)


def test_nonincreasing_within():
    assert nonincreasing_within([3.0, 2.0, 2.1], [0.1, 0.1, 0.1])
    assert not nonincreasing_within([1.0, 2.0], [0.1, 0.1])
    assert nonincreasing_within([1.0, 1.1], [math.nan, 0.1])


def test_frozen_linear_rate_is_checked_on_independent_replicas():
    rng = np.random.default_rng(3)
    times = np.array([0.0, 0.25, 0.5, 1.0, 2.0])

    def ratios(rate, replicas=40):
        noise = rng.normal(0.0, 0.05, size=(replicas, times.size))
        noise[:, 0] = 0.0
        return 1.0 + rate * times + noise

    rate = frozen_linear_rate(times, ratios(0.5))
    assert 0.5 < rate < 0.8
    assert linear_rate_holds(times, ratios(0.5), rate)
    assert not linear_rate_holds(times, ratios(1.5), rate)


def test_frozen_linear_rate_of_flat_ratios_is_zero():
    times = [0.0, 1.0, 2.0]
    flat = np.ones((4, 3))
    assert frozen_linear_rate(times, flat) == 0.0
    assert linear_rate_holds(times, flat, 0.0)
    assert frozen_linear_rate(times, 0.5 * flat) == 0.0
