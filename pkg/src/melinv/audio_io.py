"""
melinv file I/O
WAV reading/writing, mel-spectrogram and filterbank matrix import/export,
and atomic CSV output
"""

import json
import logging
import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import soundfile as sf
from marshmallow import Schema, ValidationError, fields, post_load, validate
from scipy.io import wavfile

from .errors import AudioIOError, InvalidInputError
from .mel import MelFilterbank, MelGram
from .stft import Signal

logger = logging.getLogger(__name__)

SUPPORTED_SUBTYPES = ("PCM_16", "FLOAT")
CSV_FLOAT_FORMAT = "%.10g"


@contextmanager
def atomic_path(path):
    """Yield a temporary sibling of path; rename it over path on success"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def read_wav(path) -> Signal:
    """
    Read a WAV file as a float64 mono signal

    Multichannel files keep their first channel.

    Raises:
        AudioIOError: File missing or unreadable
    """
    try:
        info = sf.info(str(path))
        data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, OSError, ValueError) as e:
        raise AudioIOError(f"Cannot read {path}: {e}") from e

    if info.subtype not in SUPPORTED_SUBTYPES:
        logger.warning(f"{path} has subtype {info.subtype}; expected one of {SUPPORTED_SUBTYPES}")
    if data.shape[1] > 1:
        logger.warning(f"{path} has {data.shape[1]} channels; using the first")
    if data.shape[0] == 0:
        raise AudioIOError(f"{path} contains no samples")

    try:
        return Signal(data[:, 0].copy(), sample_rate)
    except InvalidInputError as e:
        raise AudioIOError(f"{path}: {e}") from e


def write_wav(path, signal: Signal) -> None:
    """
    Write a 32-bit float WAV atomically

    No PEAK chunk is written; equal samples give equal bytes.
    """
    with atomic_path(path) as tmp:
        try:
            wavfile.write(str(tmp), signal.sample_rate, signal.samples.astype(np.float32))
        except (ValueError, OSError) as e:
            raise AudioIOError(f"Cannot write {path}: {e}") from e


def write_table(path, frame: pd.DataFrame) -> None:
    """Write a CSV with locale-independent, run-to-run identical formatting"""
    with atomic_path(path) as tmp:
        frame.to_csv(tmp, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n", na_rep="")


@dataclass(frozen=True)
class MelSidecar:
    """Geometry that travels with an imported mel matrix"""
    B: int
    T: int
    sample_rate: int
    window: int
    hop: int


class MelSidecarSchema(Schema):
    B = fields.Int(required=True, validate=validate.Range(min=1))
    T = fields.Int(required=True, validate=validate.Range(min=1))
    sample_rate = fields.Int(required=True, validate=validate.Range(min=1))
    window = fields.Int(required=True, validate=validate.Range(min=1))
    hop = fields.Int(required=True, validate=validate.Range(min=1))

    @post_load
    def make_sidecar(self, data, **kwargs):
        return MelSidecar(**data)


class FilterbankSidecarSchema(Schema):
    B = fields.Int(required=True, validate=validate.Range(min=1))
    F = fields.Int(required=True, validate=validate.Range(min=1))
    sample_rate = fields.Int(required=True, validate=validate.Range(min=1))
    f_min = fields.Float(load_default=0.0)
    f_max = fields.Float(load_default=None, allow_none=True)


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def _load_json(path: Path, schema: Schema):
    try:
        with open(path, "r") as f:
            payload = json.load(f)
        return schema.load(payload)
    except (OSError, json.JSONDecodeError) as e:
        raise AudioIOError(f"Cannot read sidecar {path}: {e}") from e
    except ValidationError as e:
        raise AudioIOError(f"Invalid sidecar {path}: {e.messages}") from e


def _dump_json(path: Path, payload: dict) -> None:
    with atomic_path(path) as tmp:
        with open(tmp, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")


def load_mel(path) -> tuple:
    """
    Load a B x T mel matrix from .csv (comma separated rows) or .bin (row-major float64)

    The JSON sidecar next to the matrix is required for .bin and optional for .csv.

    Returns:
        (MelGram, MelSidecar or None)
    """
    path = Path(path)
    sidecar_path = _sidecar_path(path)
    sidecar = _load_json(sidecar_path, MelSidecarSchema()) if sidecar_path.exists() else None

    try:
        if path.suffix == ".csv":
            data = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
        elif path.suffix == ".bin":
            if sidecar is None:
                raise AudioIOError(f"{path} needs a sidecar {sidecar_path}")
            data = np.fromfile(path, dtype="<f8")
            if data.size != sidecar.B * sidecar.T:
                raise AudioIOError(f"{path} holds {data.size} values, sidecar declares {sidecar.B}x{sidecar.T}")
            data = data.reshape(sidecar.B, sidecar.T)
        else:
            raise AudioIOError(f"Unsupported mel matrix format {path.suffix!r}; use .csv or .bin")
    except (OSError, ValueError) as e:
        raise AudioIOError(f"Cannot read mel matrix {path}: {e}") from e

    if sidecar is not None and data.shape != (sidecar.B, sidecar.T):
        raise AudioIOError(f"{path} has shape {data.shape}, sidecar declares ({sidecar.B}, {sidecar.T})")
    try:
        return MelGram(data), sidecar
    except InvalidInputError as e:
        raise AudioIOError(f"{path}: {e}") from e


def save_mel(path, M: MelGram, sidecar: Optional[MelSidecar] = None) -> None:
    """Inverse of load_mel"""
    path = Path(path)
    if path.suffix == ".csv":
        with atomic_path(path) as tmp:
            np.savetxt(tmp, M.data, delimiter=",", fmt="%.17g")
    elif path.suffix == ".bin":
        if sidecar is None:
            raise AudioIOError("Binary mel export needs a sidecar")
        with atomic_path(path) as tmp:
            M.data.astype("<f8").tofile(tmp)
    else:
        raise AudioIOError(f"Unsupported mel matrix format {path.suffix!r}; use .csv or .bin")

    if sidecar is not None:
        _dump_json(_sidecar_path(path), MelSidecarSchema().dump(sidecar))


def save_filterbank(path, fb: MelFilterbank) -> None:
    """Write E as CSV with a '# key=value' header, or as .bin plus JSON sidecar"""
    path = Path(path)
    meta = {"B": fb.n_mels, "F": fb.n_bins, "sample_rate": fb.sample_rate,
            "f_min": fb.f_min, "f_max": fb.f_max}
    if path.suffix == ".csv":
        header = " ".join(f"{key}={value}" for key, value in meta.items())
        with atomic_path(path) as tmp:
            np.savetxt(tmp, fb.E, delimiter=",", fmt="%.17g", header=header, comments="# ")
    elif path.suffix == ".bin":
        with atomic_path(path) as tmp:
            np.ascontiguousarray(fb.E).astype("<f8").tofile(tmp)
        _dump_json(_sidecar_path(path), meta)
    else:
        raise AudioIOError(f"Unsupported filterbank format {path.suffix!r}; use .csv or .bin")


def _parse_header(line: str) -> dict:
    pairs = (item.split("=", 1) for item in line.lstrip("#").split() if "=" in item)
    return {key: value for key, value in pairs}


def load_filterbank(path) -> MelFilterbank:
    """
    Load a third-party filterbank written by save_filterbank or an equivalent tool

    Raises:
        AudioIOError: Malformed file, or a matrix that is not a valid filterbank
    """
    path = Path(path)
    try:
        if path.suffix == ".csv":
            with open(path, "r") as f:
                first = f.readline()
            meta = FilterbankSidecarSchema().load(_parse_header(first))
            weights = np.loadtxt(path, delimiter=",", ndmin=2, comments="#", dtype=np.float64)
        elif path.suffix == ".bin":
            meta = _load_json(_sidecar_path(path), FilterbankSidecarSchema())
            weights = np.fromfile(path, dtype="<f8")
            if weights.size != meta["B"] * meta["F"]:
                raise AudioIOError(f"{path} holds {weights.size} values, sidecar declares {meta['B']}x{meta['F']}")
            weights = weights.reshape(meta["B"], meta["F"])
        else:
            raise AudioIOError(f"Unsupported filterbank format {path.suffix!r}; use .csv or .bin")
    except ValidationError as e:
        raise AudioIOError(f"Invalid filterbank header in {path}: {e.messages}") from e
    except (OSError, ValueError) as e:
        raise AudioIOError(f"Cannot read filterbank {path}: {e}") from e

    if weights.shape != (meta["B"], meta["F"]):
        raise AudioIOError(f"{path} has shape {weights.shape}, header declares ({meta['B']}, {meta['F']})")
    try:
        return MelFilterbank(weights, meta["sample_rate"], meta["f_min"], meta["f_max"])
    except InvalidInputError as e:
        raise AudioIOError(f"{path}: {e}") from e
