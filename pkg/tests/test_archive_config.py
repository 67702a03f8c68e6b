from __future__ import annotations

import json

import numpy as np
import pytest

from uagrasp.archive import FORMAT_VERSION, archive_from_dict, dumps, load_archive, save_archive
from uagrasp.config import RunConfig, load_config
from uagrasp.errors import ArchiveVersionError, DataError
from uagrasp.pipeline import Example, scripted_grasp, train
from uagrasp.synth import ShapeSpec, generate_cloud

SMALL = RunConfig(population=40, steps=10, k_q=100, particle_cap=500)


@pytest.fixture(scope="module")
def small_archive(hand):
    cloud = generate_cloud(ShapeSpec("sphere", (0.03,)))
    examples = [Example(cloud, scripted_grasp(hand, cloud, (0, 0, 0), yaw, (0.0, 0.0)), "pinch", "sphere")
                for yaw in (0.0, np.pi)]
    return train(hand, examples, SMALL)


class TestArchive:
    def test_round_trip_bytes(self, small_archive, tmp_path):
        save_archive(tmp_path / "a.json", small_archive)
        first = (tmp_path / "a.json").read_bytes()
        save_archive(tmp_path / "b.json", load_archive(tmp_path / "a.json"))
        assert (tmp_path / "b.json").read_bytes() == first

    def test_round_trip_content(self, small_archive):
        back = archive_from_dict(json.loads(dumps(small_archive)))
        assert back.config == small_archive.config
        (a,), (b,) = small_archive.types, back.types
        assert a.type_id == b.type_id
        np.testing.assert_array_equal(a.b, b.b)
        assert sorted(a.contacts) == sorted(b.contacts)
        for link in a.contacts:
            np.testing.assert_array_equal(a.contacts[link].positions, b.contacts[link].positions)
            np.testing.assert_array_equal(a.contacts[link].weights, b.contacts[link].weights)

    def test_version_mismatch(self, small_archive):
        data = json.loads(dumps(small_archive))
        data["format_version"] = FORMAT_VERSION + 1
        with pytest.raises(ArchiveVersionError):
            archive_from_dict(data)

    def test_unknown_link(self, small_archive):
        data = json.loads(dumps(small_archive))
        contacts = data["types"][0]["contacts"]
        contacts["9"] = next(iter(contacts.values()))
        with pytest.raises(DataError):
            archive_from_dict(data)

    def test_unreadable(self, tmp_path):
        (tmp_path / "x.json").write_text("{not json")
        with pytest.raises(DataError):
            load_archive(tmp_path / "x.json")


class TestConfig:
    def test_defaults(self):
        assert load_config(None) == RunConfig()

    def test_from_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"population": 12, "object_bandwidth": [0.01, 100, 2]}))
        config = load_config(path)
        assert config.population == 12
        assert config.object_bw.sigma_q == 100

    def test_dict_round_trip(self):
        config = RunConfig(workspace=((-1, -1, -1), (1, 1, 1)), selection_steps=(1, 5))
        assert RunConfig.from_dict(json.loads(json.dumps(config.to_dict()))) == config

    def test_unknown_key(self):
        with pytest.raises(DataError, match="popultion"):
            RunConfig.from_dict({"popultion": 5})

    @pytest.mark.parametrize(
        "bad",
        [{"lam": -1.0}, {"population": 0}, {"k_nn": 3}, {"retain": 1.5}, {"object_bandwidth": [0.1, 0, 1]},
         {"workspace": [[1, 0, 0], [0, 1, 1]]}, {"population": 2.5}],
    )
    def test_invalid_values(self, bad):
        with pytest.raises(DataError):
            RunConfig.from_dict(bad)

    def test_not_an_object(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("[1, 2]")
        with pytest.raises(DataError):
            load_config(path)
