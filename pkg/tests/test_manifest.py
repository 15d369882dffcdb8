import hashlib

import pytest

import stochastic_lwr as slwr
from stochastic_lwr._manifest import manifest_path, sha256


def test_manifest_path(tmp_path):
    assert manifest_path(tmp_path / "ens.bin") == tmp_path / "ens.bin.manifest.yaml"


def test_sha256(tmp_path):
    (tmp_path / "data.txt").write_bytes(b"traffic")
    assert sha256(tmp_path / "data.txt") == hashlib.sha256(b"traffic").hexdigest()


def test_write_read(tmp_path):
    (tmp_path / "out.csv").write_text("x\n1\n")
    manifest = slwr.RunManifest("solve-fpe", {"config": "model.json"}, {"seed": 3}, {"dt": 0.01, "ncells": 400})
    digest = manifest.add_artifact(tmp_path / "out.csv")
    manifest.stop()
    path = manifest.write(tmp_path / "out.csv")

    assert path.read_text().startswith("# slwr manifest v1")
    read = slwr.RunManifest.read(path)
    assert read.artifacts == {"out.csv": digest}
    assert read.version == slwr.__version__
    assert read.key() == manifest.key()
    assert read.wall_clock == pytest.approx(manifest.wall_clock, abs=1e-6)


def test_key_tracks_inputs():
    first = slwr.RunManifest("simulate", {}, {"seed": 1}, {"nx": 64})
    assert first.key() == slwr.RunManifest("simulate", {}, {"seed": 1}, {"nx": 64}).key()
    assert first.key() != slwr.RunManifest("simulate", {}, {"seed": 2}, {"nx": 64}).key()
    assert first.key() != slwr.RunManifest("simulate", {}, {"seed": 1}, {"nx": 128}).key()
