"""Artifact file formats shared by all pipeline stages.

CSV tables use a commented header:

- ``# slwr csv v1``
- an optional description, delimited by dashed comment lines
- one row of units (may be empty per column)
- the column names
- data rows.

YAML reports and manifests are written in block style with flow-style lists,
preceded by a version comment. HDF5 datasets carry ``unit`` and
``description`` attributes and the top level records ``stochastic_lwr_version``.
"""

from __future__ import annotations

import csv
import os
import re
import struct
import zlib
from typing import TYPE_CHECKING

import h5py
import numpy as np
import pandas as pd
import yaml

if TYPE_CHECKING:
    from collections.abc import Mapping
    from typing import Any

CSV_VERSION = 1
ENSEMBLE_MAGIC = b"SLWR1"
CHECKPOINT_MAGIC = b"SLWRCKPT1"
_ENSEMBLE_HEADER = struct.Struct("<IIIddQ")


def write_csv(
    filename: str | os.PathLike,
    dataframe: pd.DataFrame,
    units: Mapping[str, str] | None = None,
    description: str = "",
) -> None:
    """Write ``dataframe`` with the commented slwr CSV header.

    Args:
        filename: Name of the generated file. An existing file is overwritten.
        dataframe: Table to write; the index is not written.
        units: Unit string per column; missing columns get an empty unit.
        description: Optional multi-line description.
    """
    units = units or {}
    with open(filename, "w", newline="") as csvfile:
        csvfile.write(f"# slwr csv v{CSV_VERSION}{os.linesep}")
        if description:
            csvfile.write("#" + "-" * 40 + os.linesep)
            for line in description.splitlines():
                csvfile.write(f"# {line}{os.linesep}")
            csvfile.write("#" + "-" * 40 + os.linesep)
        writer = csv.writer(csvfile, delimiter=",", quoting=csv.QUOTE_MINIMAL, lineterminator=os.linesep)
        writer.writerow([units.get(column, "") for column in dataframe.columns])
        # repr round-trips float64 exactly
        dataframe.to_csv(csvfile, index=False, float_format="%.17g", lineterminator=os.linesep)


def read_csv(filename: str | os.PathLike) -> tuple[pd.DataFrame, dict[str, str], str]:
    """Read a slwr CSV file.

    Returns:
        The data table, the units per column and the file description.

    Raises:
        RuntimeError: If the version line or the header structure is invalid.
    """
    with open(filename, newline="") as csvfile:
        first = csvfile.readline()
        version = re.search(r"slwr csv v(\d+)", first)
        if version is None:
            raise RuntimeError(
                f"Cannot read version information from file {filename}. Content of the first line: '{first.strip()}'"
            )
        if int(version.group(1)) != CSV_VERSION:
            raise RuntimeError(f"Reading slwr csv v{version.group(1)} is not supported.")

        description = []
        position = csvfile.tell()
        if csvfile.readline().startswith("#--"):
            while True:
                line = csvfile.readline()
                if line == "":
                    raise RuntimeError("CSV description block is not terminated by a closing dashed line.")
                if line.startswith("#--"):
                    break
                description.append(line.removeprefix("# ").rstrip("\r\n"))
        else:
            csvfile.seek(position)

        reader = csv.reader(csvfile, delimiter=",", quoting=csv.QUOTE_MINIMAL)
        try:
            unit_row = next(reader)
        except StopIteration:
            raise RuntimeError(f"File {filename} ends before the units row.") from None
        dataframe = pd.read_csv(csvfile)

    if len(unit_row) != len(dataframe.columns):
        raise RuntimeError(
            f"Units row has {len(unit_row)} entries but the table has {len(dataframe.columns)} columns."
        )
    units = dict(zip(dataframe.columns, unit_row, strict=True))
    return dataframe, units, "\n".join(description)


class _Dumper(yaml.SafeDumper):
    pass


def _represent_sequence(dumper, value):
    """Display sequences in flow style, ``value: [1, 2, 3]``."""
    return dumper.represent_sequence("tag:yaml.org,2002:seq", value, flow_style=True)


def _represent_string(dumper, value):
    """Write multi-line strings as literal blocks."""
    style = "|" if "\n" in value else ""
    return dumper.represent_scalar("tag:yaml.org,2002:str", value, style=style)


def _represent_float(dumper, value):
    return dumper.represent_float(float(value))


_Dumper.add_representer(list, _represent_sequence)
_Dumper.add_representer(tuple, _represent_sequence)
_Dumper.add_representer(str, _represent_string)
_Dumper.add_representer(np.float64, _represent_float)


def dump_yaml(data: Mapping[str, Any], kind: str = "report") -> str:
    """Serialise ``data`` as versioned slwr YAML text."""
    body = yaml.dump(dict(data), Dumper=_Dumper, default_flow_style=False, sort_keys=False)
    return f"# slwr {kind} v1\n{body}"


def write_yaml(filename: str | os.PathLike, data: Mapping[str, Any], kind: str = "report") -> None:
    """Write ``data`` to ``filename`` as versioned slwr YAML."""
    with open(filename, "w") as f:
        f.write(dump_yaml(data, kind))


def read_yaml(filename: str | os.PathLike) -> dict[str, Any]:
    """Read a slwr YAML file (the version comment is ignored by the parser)."""
    with open(filename) as f:
        return yaml.safe_load(f)


def to_hdf5(
    base: h5py.File | h5py.Group | str | os.PathLike,
    name: str,
    datasets: Mapping[str, tuple[np.ndarray, str, str]],
    attrs: Mapping[str, Any] | None = None,
) -> h5py.Group | None:
    """Store arrays in a new HDF5 group.

    Args:
        base: Open file or group, or a file name (overwritten without notice).
        name: Name of the new group.
        datasets: Mapping from dataset name to ``(array, unit, description)``.
        attrs: Additional group attributes.

    Returns:
        The new group if ``base`` is an open file or group, otherwise ``None``.
    """
    if isinstance(base, str | os.PathLike):
        with h5py.File(base, "w") as f:
            to_hdf5(f, name, datasets, attrs)
            return None

    import stochastic_lwr

    group = base.create_group(name, track_order=True)
    group.attrs["stochastic_lwr_version"] = stochastic_lwr.__version__
    for key, value in (attrs or {}).items():
        group.attrs[key] = value
    for key, (array, unit, description) in datasets.items():
        dset = group.create_dataset(key, data=array)
        dset.attrs["unit"] = unit
        dset.attrs["description"] = description
    return group


def from_hdf5(base: h5py.File | h5py.Group | str | os.PathLike, name: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read a group written by :py:func:`to_hdf5`.

    Returns:
        Arrays per dataset name and the group attributes.
    """
    if isinstance(base, str | os.PathLike):
        with h5py.File(base, "r") as f:
            return from_hdf5(f, name)
    if name not in base:
        raise RuntimeError(f"HDF5 object has no group '{name}'.")
    group = base[name]
    return {key: group[key][()] for key in group}, dict(group.attrs)


def write_ensemble_binary(
    filename: str | os.PathLike, data: np.ndarray, dx: float, dt: float, seed: int
) -> None:
    """Write a realisation × time × space array in the SLWR1 layout."""
    n_real, n_stored, nx = data.shape
    with open(filename, "wb") as f:
        f.write(ENSEMBLE_MAGIC)
        f.write(_ENSEMBLE_HEADER.pack(nx, n_stored, n_real, dx, dt, seed))
        f.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def read_ensemble_binary(filename: str | os.PathLike) -> tuple[np.ndarray, float, float, int]:
    """Read an SLWR1 file.

    Returns:
        ``(data, dx, dt, seed)`` with ``data`` of shape ``(n_real, n_stored, nx)``.

    Raises:
        RuntimeError: If the magic bytes or the payload size do not match.
    """
    with open(filename, "rb") as f:
        magic = f.read(len(ENSEMBLE_MAGIC))
        if magic != ENSEMBLE_MAGIC:
            raise RuntimeError(f"File {filename} is not an SLWR1 ensemble (magic {magic!r}).")
        header = f.read(_ENSEMBLE_HEADER.size)
        if len(header) != _ENSEMBLE_HEADER.size:
            raise RuntimeError(f"File {filename} has a truncated header.")
        nx, n_stored, n_real, dx, dt, seed = _ENSEMBLE_HEADER.unpack(header)
        payload = f.read()
    expected = 8 * nx * n_stored * n_real
    if len(payload) != expected:
        raise RuntimeError(f"File {filename} has {len(payload)} payload bytes, expected {expected}.")
    data = np.frombuffer(payload, dtype="<f8").reshape(n_real, n_stored, nx).astype(float)
    return data, dx, dt, seed


def write_checkpoint(
    filename: str | os.PathLike, header_ints: tuple[int, ...], header_floats: tuple[float, ...], payload: np.ndarray
) -> None:
    """Write an SLWRCKPT1 checkpoint with a trailing CRC32 of everything before it."""
    body = (
        CHECKPOINT_MAGIC
        + struct.pack("<I", len(header_ints))
        + struct.pack(f"<{len(header_ints)}I", *header_ints)
        + struct.pack("<I", len(header_floats))
        + struct.pack(f"<{len(header_floats)}d", *header_floats)
        + struct.pack("<Q", payload.size)
        + np.ascontiguousarray(payload, dtype="<f8").tobytes()
    )
    with open(filename, "wb") as f:
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body)))


def read_checkpoint(filename: str | os.PathLike) -> tuple[tuple[int, ...], tuple[float, ...], np.ndarray]:
    """Read an SLWRCKPT1 checkpoint.

    Raises:
        RuntimeError: On wrong magic, truncation or CRC mismatch.
    """
    with open(filename, "rb") as f:
        raw = f.read()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise RuntimeError(f"File {filename} is not an SLWRCKPT1 checkpoint.")
    if len(raw) < len(CHECKPOINT_MAGIC) + 4:
        raise RuntimeError(f"File {filename} is truncated.")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise RuntimeError(f"Checksum mismatch in checkpoint {filename}.")
    try:
        offset = len(CHECKPOINT_MAGIC)
        (n_ints,) = struct.unpack_from("<I", body, offset)
        offset += 4
        ints = struct.unpack_from(f"<{n_ints}I", body, offset)
        offset += 4 * n_ints
        (n_floats,) = struct.unpack_from("<I", body, offset)
        offset += 4
        floats = struct.unpack_from(f"<{n_floats}d", body, offset)
        offset += 8 * n_floats
        (size,) = struct.unpack_from("<Q", body, offset)
        offset += 8
    except struct.error as exc:
        raise RuntimeError(f"Checkpoint {filename} has a malformed header: {exc}") from exc
    if len(body) - offset != 8 * size:
        raise RuntimeError(f"Checkpoint {filename} payload has {len(body) - offset} bytes, expected {8 * size}.")
    payload = np.frombuffer(body, dtype="<f8", offset=offset, count=size).astype(float)
    return ints, floats, payload
