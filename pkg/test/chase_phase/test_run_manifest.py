import pytest

from src.chase_phase.common import version_stamp
from src.chase_phase.run_manifest import RunManifest


@pytest.fixture
def manifest(unit_profile) -> RunManifest:
    return RunManifest.for_run(
        "simulate tree",
        {"d": 2, "depth_cap": 8, "runs": 100, "seed": 7, "max_events": None},
        unit_profile,
        "profiles/unit.yaml",
    )


def test_for_run_drops_unset_params(manifest, unit_profile):
    assert manifest.command == "simulate tree"
    assert manifest.params == {"d": 2, "depth_cap": 8, "runs": 100, "seed": 7}
    assert manifest.seed == 7
    assert manifest.profile_path == "profiles/unit.yaml"
    assert manifest.profile_fingerprint == unit_profile.fingerprint()
    assert manifest.version == version_stamp()


def test_params_are_copied(manifest):
    params = manifest.params
    params["d"] = 5
    assert manifest.params["d"] == 2


def test_yaml_round_trip(manifest, temp_dir):
    path = temp_dir / "runs.manifest.yaml"
    path.write_text(manifest.to_yaml(), encoding="utf-8")
    loaded = RunManifest.from_path(path)
    assert loaded == manifest
    assert loaded.seed == 7
    assert loaded.profile_fingerprint == manifest.profile_fingerprint


def test_yaml_has_no_timestamps(manifest):
    assert manifest.to_yaml() == manifest.to_yaml()
    assert set(manifest.to_dict()) == {"command", "params", "profile", "version"}


def test_fingerprint_ignores_version(unit_profile):
    first = RunManifest("phase", {"d": 2}, profile_fingerprint=unit_profile.fingerprint(), version="a")
    second = RunManifest("phase", {"d": 2}, profile_fingerprint=unit_profile.fingerprint(), version="b")
    third = RunManifest("phase", {"d": 3}, profile_fingerprint=unit_profile.fingerprint())
    assert first == second
    assert hash(first) == hash(second)
    assert first != third
    assert first != "phase"


def test_manifest_path(manifest, temp_dir):
    assert manifest.manifest_path(temp_dir / "runs.csv") == temp_dir / "runs.manifest.yaml"


def test_from_path_rejects_other_yaml(temp_dir):
    path = temp_dir / "other.yaml"
    path.write_text("just: text\n", encoding="utf-8")
    with pytest.raises(ValueError):
        RunManifest.from_path(path)


def test_repr(manifest):
    assert repr(manifest).startswith("RunManifest('simulate tree',")
