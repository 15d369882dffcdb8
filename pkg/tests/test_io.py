import textwrap

import h5py
import numpy as np
import pandas as pd
import pytest

import stochastic_lwr as slwr
from stochastic_lwr import _io


def test_write_read_csv(tmp_path):
    frame = pd.DataFrame({"t": [0.0, 0.1], "rho_hat": [1 / 3, 2 / 3], "label": ["a", "b, c"]})
    _io.write_csv(tmp_path / "table.csv", frame, units={"t": "s"}, description="First line.\nSecond, with comma.")

    read, units, description = _io.read_csv(tmp_path / "table.csv")

    pd.testing.assert_frame_equal(read, frame)
    # exact float round trip
    assert read["rho_hat"].iloc[0] == 1 / 3
    assert units == {"t": "s", "rho_hat": "", "label": ""}
    assert description == "First line.\nSecond, with comma."


def test_read_csv_without_description(tmp_path):
    (tmp_path / "table.csv").write_text(
        textwrap.dedent(
            """\
            # slwr csv v1
            ,1/km
            x,rho
            0.5,0.25
            """
        )
    )
    read, units, description = _io.read_csv(tmp_path / "table.csv")
    assert read["rho"].tolist() == [0.25]
    assert units["rho"] == "1/km"
    assert description == ""


@pytest.mark.parametrize(
    ("content", "match"),
    [
        ("x,rho\n0.5,0.25\n", "Cannot read version information"),
        ("# slwr csv v2\n,\nx,rho\n", "v2 is not supported"),
        ("# slwr csv v1\n#----\n# open\n", "not terminated"),
        ("# slwr csv v1\n,,\nx,rho\n0.5,0.25\n", "Units row has 3 entries"),
    ],
)
def test_read_csv_errors(tmp_path, content, match):
    (tmp_path / "bad.csv").write_text(content)
    with pytest.raises(RuntimeError, match=match):
        _io.read_csv(tmp_path / "bad.csv")


def test_yaml(tmp_path):
    data = {"model": "greenshields", "alphas": [0.2, 0.1], "note": "two\nlines", "w1": np.float64(0.5)}
    text = _io.dump_yaml(data, kind="report")
    assert text.startswith("# slwr report v1\n")
    assert "alphas: [0.2, 0.1]" in text
    _io.write_yaml(tmp_path / "report.yaml", data)
    read = _io.read_yaml(tmp_path / "report.yaml")
    assert read == {"model": "greenshields", "alphas": [0.2, 0.1], "note": "two\nlines", "w1": 0.5}


def test_hdf5_group(tmp_path):
    datasets = {"rho": (np.arange(6.0).reshape(2, 3), "1/m", "density samples")}
    _io.to_hdf5(tmp_path / "data.h5", "ensemble", datasets, attrs={"seed": 4})

    with h5py.File(tmp_path / "data.h5") as f:
        group = f["ensemble"]
        assert group.attrs["stochastic_lwr_version"] == slwr.__version__
        assert group["rho"].attrs["unit"] == "1/m"
        assert group["rho"].attrs["description"] == "density samples"

    arrays, attrs = _io.from_hdf5(tmp_path / "data.h5", "ensemble")
    assert np.array_equal(arrays["rho"], datasets["rho"][0])
    assert attrs["seed"] == 4
    with pytest.raises(RuntimeError, match="no group 'density'"):
        _io.from_hdf5(tmp_path / "data.h5", "density")


def test_hdf5_nested_group(tmp_path):
    with h5py.File(tmp_path / "data.h5", "w") as f:
        run = f.create_group("run")
        group = _io.to_hdf5(run, "density", {"p": (np.ones(3), "", "law")})
        assert group.name == "/run/density"
        arrays, _ = _io.from_hdf5(run, "density")
    assert arrays["p"].tolist() == [1.0, 1.0, 1.0]


def test_ensemble_binary(tmp_path):
    data = np.random.default_rng(0).uniform(size=(2, 3, 4))
    _io.write_ensemble_binary(tmp_path / "ens.bin", data, 0.25, 0.1, 2**63 + 5)
    assert (tmp_path / "ens.bin").stat().st_size == 5 + 36 + 8 * data.size

    read, dx, dt, seed = _io.read_ensemble_binary(tmp_path / "ens.bin")
    assert np.array_equal(read, data)
    assert (dx, dt, seed) == (0.25, 0.1, 2**63 + 5)


def test_ensemble_binary_errors(tmp_path):
    (tmp_path / "other.bin").write_bytes(b"NOTSLWR" + bytes(64))
    with pytest.raises(RuntimeError, match="not an SLWR1 ensemble"):
        _io.read_ensemble_binary(tmp_path / "other.bin")

    _io.write_ensemble_binary(tmp_path / "ens.bin", np.zeros((1, 2, 2)), 0.5, 0.1, 0)
    raw = (tmp_path / "ens.bin").read_bytes()
    (tmp_path / "ens.bin").write_bytes(raw[:-8])
    with pytest.raises(RuntimeError, match="payload bytes"):
        _io.read_ensemble_binary(tmp_path / "ens.bin")


def test_checkpoint(tmp_path):
    payload = np.linspace(-1.0, 1.0, 7)
    _io.write_checkpoint(tmp_path / "model.ckpt", (1, 2, 3), (0.5, 2.0), payload)
    ints, floats, read = _io.read_checkpoint(tmp_path / "model.ckpt")
    assert ints == (1, 2, 3)
    assert floats == (0.5, 2.0)
    assert np.array_equal(read, payload)


def test_checkpoint_errors(tmp_path):
    (tmp_path / "other.ckpt").write_bytes(b"SLWR1" + bytes(20))
    with pytest.raises(RuntimeError, match="not an SLWRCKPT1 checkpoint"):
        _io.read_checkpoint(tmp_path / "other.ckpt")

    _io.write_checkpoint(tmp_path / "model.ckpt", (1,), (), np.ones(2))
    raw = (tmp_path / "model.ckpt").read_bytes()
    (tmp_path / "model.ckpt").write_bytes(raw[:-5] + raw[-4:])
    with pytest.raises(RuntimeError, match="Checksum mismatch"):
        _io.read_checkpoint(tmp_path / "model.ckpt")
