"""Reading and writing volumes, label tables and dataset manifests.

Two volume formats are supported:

* the phantom container (``.dsmt``): a 25-byte little-endian header
  ``b"DSMT" | version u32 | side u32 | age f64 | sex u8`` followed by
  ``side**3`` float32 voxels in C order;
* NIfTI-1 (``.nii`` / ``.nii.gz``), whose labels come from a sidecar
  table with columns ``subject_id, age, sex, site, split``.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from ..exceptions import FormatError, MetadataError
from .types import VolumeSample

MAGIC = b"DSMT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIdB")

LABEL_COLUMNS = ("subject_id", "age", "sex", "site", "split")
MANIFEST_COLUMNS = ("path", "subject_id", "split")

_SEX_CODES = {"0": 0, "1": 1, "f": 0, "female": 0, "m": 1, "male": 1}


def subject_id_from_path(path) -> str:
    name = Path(path).name
    for suffix in (".nii.gz", ".nii", ".dsmt"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return Path(path).stem


def write_phantom_file(path, sample: VolumeSample):
    voxels = np.asarray(sample.voxels)
    side = voxels.shape[0]
    if voxels.shape != (side,) * 3:
        raise FormatError(f"phantom container needs a cubic volume, got {voxels.shape}")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, side, float(sample.age), int(sample.sex))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(voxels, dtype="<f4").tobytes())


def read_phantom_file(path) -> VolumeSample:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, side, age, sex = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    expected = _HEADER.size + 4 * side ** 3
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    voxels = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape((side,) * 3).astype(np.float32)
    try:
        return VolumeSample(voxels, age, sex, subject_id_from_path(path))
    except MetadataError as exc:
        raise MetadataError(f"{path}: {exc}") from exc


def _parse_sex(value, where):
    code = _SEX_CODES.get(str(value).strip().lower())
    if code is None:
        raise MetadataError(f"{where}: unrecognised sex value {value!r}")
    return code


def read_label_table(path) -> dict:
    """Load a delimited label table (comma or tab) keyed by subject id."""
    text = Path(path).read_text()
    try:
        dialect = csv.Sniffer().sniff(text.splitlines()[0], delimiters=",\t;")
    except (csv.Error, IndexError):
        dialect = csv.excel
    rows = {}
    for row in csv.DictReader(text.splitlines(), dialect=dialect):
        sid = (row.get("subject_id") or "").strip()
        if not sid:
            raise MetadataError(f"{path}: row without subject_id")
        try:
            age = float(row["age"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MetadataError(f"{path}: bad age for {sid!r}") from exc
        rows[sid] = {
            "age": age,
            "sex": _parse_sex(row.get("sex"), f"{path}:{sid}"),
            "site": (row.get("site") or None),
            "split": (row.get("split") or None),
        }
    return rows


def write_label_table(path, records):
    """``records`` are dicts with the keys of ``LABEL_COLUMNS``."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LABEL_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in records:
            writer.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in LABEL_COLUMNS})


def load_nifti(path, labels) -> VolumeSample:
    import nibabel as nib

    if labels is None:
        raise MetadataError(f"{path}: NIfTI volumes need a sidecar label table")
    if not isinstance(labels, dict):
        labels = read_label_table(labels)
    sid = subject_id_from_path(path)
    if sid not in labels:
        raise MetadataError(f"{path}: no label row for subject {sid!r}")
    try:
        img = nib.load(str(path))
        voxels = np.asarray(img.get_fdata(dtype=np.float32))
    except Exception as exc:  # nibabel raises a zoo of exception types on corrupt input
        raise FormatError(f"{path}: unreadable NIfTI ({exc})") from exc
    voxels = np.squeeze(voxels)
    if voxels.ndim != 3 or voxels.size == 0:
        raise FormatError(f"{path}: expected a 3D volume, got shape {voxels.shape}")
    row = labels[sid]
    return VolumeSample(np.nan_to_num(voxels), row["age"], row["sex"], sid, row.get("site"))


def load_volume(path, labels=None) -> VolumeSample:
    """Load a raw (not yet preprocessed) volume.

    ``labels`` is a label-table path or the dict returned by
    ``read_label_table``; it is required for NIfTI and ignored for
    phantom containers, which embed their labels.
    """
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: no such file")
    name = path.name
    if name.endswith(".dsmt"):
        return read_phantom_file(path)
    if name.endswith(".nii") or name.endswith(".nii.gz"):
        return load_nifti(path, labels)
    raise FormatError(f"{path}: unsupported volume format")


def write_manifest(path, rows):
    """``rows``: iterable of ``(relative_path, subject_id, split)``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for row in rows:
            writer.writerow(row)


def read_manifest(path):
    """Return ``[(absolute_path, subject_id, split), ...]``."""
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: manifest not found")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(MANIFEST_COLUMNS) - set(reader.fieldnames):
            raise FormatError(f"{path}: manifest must have columns {MANIFEST_COLUMNS}")
        return [(path.parent / r["path"], r["subject_id"], r["split"] or None) for r in reader]
