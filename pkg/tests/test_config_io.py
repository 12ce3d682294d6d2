import csv
import io
import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rayknight import io as rio
from rayknight.config import (OUTPUT_DIR_ENV, WORKERS_ENV, ConfigError, ExperimentConfig,
                              flat_keys)
from rayknight.stats import InsufficientSamplesError


class TestConfig:
    def test_defaults(self):
        c = ExperimentConfig().validate()
        assert (c.model.theta, c.model.gamma) == (1.0, 1.0)
        assert c.probes.x == [0.5, 1.0, 2.0] and c.probes.t == [0.25, 0.5, 1.0]
        assert c.grid.dt == 2.0 ** -14 and c.grid.K is None
        assert c.eps == pytest.approx(4 * math.sqrt(c.grid.dt))
        assert c.run.n_paths == 10_000

    @given(st.floats(0, 5), st.floats(0, 5), st.integers(-20, -4), st.integers(10, 10**6),
           st.one_of(st.none(), st.just(1.0)))
    def test_yaml_round_trip(self, theta, gamma, k, n, K):
        c = ExperimentConfig()
        c.model.theta, c.model.gamma, c.grid.dt, c.run.n_paths = theta, gamma, 2.0 ** k, n
        c.grid.K = K
        back = ExperimentConfig.from_yaml(c.to_yaml())
        assert back == c
        assert back.config_hash() == c.config_hash()

    def test_hash_tracks_content(self):
        a, b = ExperimentConfig(), ExperimentConfig()
        assert a.config_hash() == b.config_hash()
        b.model.gamma = 2.0
        assert a.config_hash() != b.config_hash()

    def test_file_round_trip(self, tmp_path):
        c = ExperimentConfig()
        c.environment.z = {"dt": 0.5, "values": [0.0, 1.0, 0.5]}
        c.save(tmp_path / "c.yaml")
        assert ExperimentConfig.load(tmp_path / "c.yaml") == c

    def test_insufficient_samples(self):
        c = ExperimentConfig().with_overrides({"n_paths": 5})
        with pytest.raises(InsufficientSamplesError, match="insufficient samples"):
            c.validate()

    @pytest.mark.parametrize("over", [
        {"theta": -1.0}, {"gamma": math.nan}, {"x": [1.0, 0.5]}, {"x": [0.0]}, {"dt": 0.0},
        {"eps": 0.001, "dy": 0.01}, {"K": 0.3}, {"workers": 0},
        {"ladder_dts": [0.01, 0.001]}, {"t": [100.0]},
        {"z": {"dt": 0.1}},
    ])
    def test_invalid(self, over):
        with pytest.raises(ConfigError):
            ExperimentConfig().with_overrides(over).validate()

    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_yaml("model: {theta: 1, beta: 2}")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_yaml("extras: {}")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_yaml("[1, 2]")
        with pytest.raises(ConfigError):
            ExperimentConfig().with_overrides({"nope": 1})

    def test_keys_unique_across_sections(self):
        keys = flat_keys()
        assert "n_paths" in keys and "ladder_paths" in keys and "K" in keys

    def test_environment_overrides(self):
        c = ExperimentConfig().with_env({OUTPUT_DIR_ENV: "/tmp/x", WORKERS_ENV: "3"})
        assert c.run.output_dir == "/tmp/x" and c.run.workers == 3
        with pytest.raises(ConfigError):
            ExperimentConfig().with_env({WORKERS_ENV: "many"})


META = {"config_hash": "abc", "version": "v"}


class TestCSV:
    def test_rfc4180_quoting(self, tmp_path):
        p = rio.write_csv(tmp_path / "a.csv", ["name", "value"],
                          [['has,comma', 1.5], ['has "quote"', 2]], META)
        raw = p.read_bytes()
        assert raw.count(b"\r\n") == 4
        assert b'"has,comma"' in raw and b'"has ""quote"""' in raw
        meta, header, rows = rio.read_csv(p)
        assert meta == META
        assert header == ["name", "value"]
        assert rows == [["has,comma", "1.5"], ['has "quote"', "2"]]

    def test_float_round_trip(self):
        text = rio.dumps_csv(["v"], [[0.1 + 0.2]], META)
        rows = list(csv.reader(io.StringIO(text.split("\r\n", 1)[1])))
        assert float(rows[1][0]) == 0.1 + 0.2

    def test_weighted_csv(self, tmp_path):
        p = rio.write_weighted_csv(tmp_path / "w.csv", [1.0, 2.0], [0.5, 1.5], 1.6, META)
        meta, header, rows = rio.read_csv(p)
        assert header == ["stream_id", "value", "weight"]
        assert float(meta["ess"]) == 1.6


class TestJSON:
    def test_stable_and_sorted(self, tmp_path):
        payload = {"b": 1, "a": {"z": float("nan"), "y": [1, 2]}}
        s1 = rio.dumps_json(payload, META)
        s2 = rio.dumps_json(dict(reversed(list(payload.items()))), META)
        assert s1 == s2
        data = json.loads(s1)
        assert list(data) == sorted(data)
        assert data["meta"]["config_hash"] == "abc"
        assert data["a"]["z"] == "nan"

    def test_metadata_has_version(self):
        m = rio.metadata("h")
        assert m["config_hash"] == "h" and m["version"].startswith("rayknight-")


def test_hash_ignores_execution_settings():
    a = ExperimentConfig()
    b = a.with_overrides({"workers": 4, "output_dir": "elsewhere", "plots": True})
    assert a.config_hash() == b.config_hash()
