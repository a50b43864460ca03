"""WSS time series container and the on-disk case layout.

A case directory holds ``mesh.obj``, ``tokens.json``, ``wss.bin`` and,
for transient cases only, ``waveform.csv``. ``wss.bin`` is a single JSON
header line (T, N, dtype, layout) followed by the raw little-endian
payload in t-major, n-major, xyz order. Writes are atomic (temp file +
rename).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .mesh import TriMesh, load_obj, save_obj
from .waveform import Waveform, load_waveform_csv, save_waveform_csv

__all__ = [
    "WssSeries",
    "CaseRecord",
    "write_wss_bin",
    "read_wss_bin",
    "save_tokens_json",
    "load_tokens_json",
    "write_case",
    "read_case",
    "list_cases",
]


@dataclass(frozen=True)
class WssSeries:
    """Time-major per-vertex WSS vectors, values[t, i] in Pa."""

    values: np.ndarray  # (T, N, 3)
    times: np.ndarray  # (T,) seconds

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        t = np.asarray(self.times, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3:
            raise ValidationError(f"values must be (T, N, 3), got {v.shape}")
        if t.shape != (v.shape[0],):
            raise ValidationError("times length must match frame count")
        if not np.isfinite(v).all():
            raise ValidationError("WSS values must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "times", t)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.values.shape[1]

    def magnitudes(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=2)


@dataclass
class CaseRecord:
    """One dataset case: geometry, optional waveform, and WSS labels."""

    case_id: str
    tokens: np.ndarray  # (n_modes, 3) GHD coefficients
    mesh: TriMesh
    kind: str  # "steady" | "transient"
    waveform: Waveform | None
    labels: WssSeries

    def __post_init__(self):
        if self.kind not in ("steady", "transient"):
            raise ValidationError(f"unknown case kind {self.kind!r}")
        if self.kind == "steady":
            if self.waveform is not None:
                raise ValidationError("steady case must not carry a waveform")
            if self.labels.n_frames != 1:
                raise ValidationError("steady case labels must have exactly 1 frame")
        else:
            if self.waveform is None:
                raise ValidationError("transient case needs a waveform")
            if self.labels.n_frames != self.waveform.n_samples:
                raise ValidationError("label frame count must match waveform samples")


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_wss_bin(path, series: WssSeries) -> None:
    header = {
        "T": series.n_frames,
        "N": series.n_vertices,
        "dtype": "f32",
        "layout": "t-major n-major xyz",
    }
    payload = series.values.astype("<f4").tobytes(order="C")
    blob = (json.dumps(header) + "\n").encode() + payload
    _atomic_write_bytes(Path(path), blob)


def read_wss_bin(path, times: np.ndarray | None = None) -> WssSeries:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ValidationError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:nl])
        t, n = int(header["T"]), int(header["N"])
        dtype = header["dtype"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: bad header") from exc
    if dtype != "f32":
        raise ValidationError(f"{path}: unsupported dtype {dtype!r}")
    payload = raw[nl + 1 :]
    expected = t * n * 3 * 4
    if len(payload) != expected:
        raise ValidationError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype="<f4").reshape(t, n, 3).astype(np.float64)
    if times is None:
        times = np.arange(t, dtype=np.float64)
    return WssSeries(values, times)


def save_tokens_json(path, tokens: np.ndarray) -> None:
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[1] != 3:
        raise ValidationError(f"tokens must be (n, 3), got {tokens.shape}")
    doc = {"n": tokens.shape[0], "coeffs": tokens.tolist()}
    _atomic_write_bytes(Path(path), json.dumps(doc).encode())


def load_tokens_json(path) -> np.ndarray:
    doc = json.loads(Path(path).read_text())
    coeffs = np.asarray(doc["coeffs"], dtype=np.float64)
    if coeffs.shape != (int(doc["n"]), 3):
        raise ValidationError(f"{path}: coeffs shape {coeffs.shape} != (n={doc['n']}, 3)")
    return coeffs


def write_case(case_dir, record: CaseRecord) -> None:
    d = Path(case_dir)
    d.mkdir(parents=True, exist_ok=True)
    save_obj(d / "mesh.obj", record.mesh)
    save_tokens_json(d / "tokens.json", record.tokens)
    if record.waveform is not None:
        save_waveform_csv(d / "waveform.csv", record.waveform)
    write_wss_bin(d / "wss.bin", record.labels)


def read_case(case_dir) -> CaseRecord:
    d = Path(case_dir)
    mesh = load_obj(d / "mesh.obj")
    tokens = load_tokens_json(d / "tokens.json")
    wf_path = d / "waveform.csv"
    if wf_path.exists():
        waveform = load_waveform_csv(wf_path)
        times = waveform.times
        kind = "transient"
    else:
        waveform = None
        times = np.zeros(1)
        kind = "steady"
    labels = read_wss_bin(d / "wss.bin", times=times)
    return CaseRecord(d.name, tokens, mesh, kind, waveform, labels)


def list_cases(dataset_dir) -> list[Path]:
    root = Path(dataset_dir)
    return sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("case_"))
