"""File formats: RIFF/WAVE audio, manifest and report CSV, JSON summaries,
YAML dataset configs and grayscale PNG previews.

Every writer goes through a temporary file in the destination directory and
an atomic rename, so an interrupted run never leaves a half-written file
under its final name.
"""
from __future__ import annotations

import contextlib
import csv
import io
import json
import logging
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
import yaml

from .core import (AmplitudeModel, BlendPlan, ConfigError, ModulationPlan, NoiseModel, ParameterError,
                   SignalBuffer)
from .synth import (MIXED_SEGMENT_S, STATISTICAL_SEGMENT_S, STRUCTURAL_NOISE, ClassConfig, DatasetKind,
                    DatasetSpec, default_classes)
from .texture import FileScore, ScoreReport

log = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(Exception):
    """Base class for WAV decoding failures."""


class WavParseError(WavError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnsupportedWavFormat(WavError):
    pass


class ConfigValidationError(ConfigError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class ManifestError(ValueError):
    pass


class ReportSchemaError(ValueError):
    pass


@contextlib.contextmanager
def atomic_write(path: PathLike, mode: str = "wb", **kwargs):
    """Open a temp file beside ``path``; rename over ``path`` on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


# WAV ------------------------------------------------------------------------

def encode_wav(signal: SignalBuffer, format: str = "float32") -> bytes:
    """Mono little-endian RIFF/WAVE bytes.

    ``float32`` writes a WAVE_FORMAT_IEEE_FLOAT ``fmt `` chunk (18 bytes,
    cbSize 0) followed by a ``fact`` chunk; ``pcm16`` writes the canonical
    16-byte PCM ``fmt `` chunk. Samples must lie in [-1, 1].
    """
    x = signal.samples
    if x.size and np.max(np.abs(x)) > 1.0:
        raise ParameterError("samples exceed [-1, 1]; normalize before writing")
    rate = signal.sample_rate_hz
    if format == "float32":
        data = x.astype("<f4").tobytes()
        fmt = struct.pack("<HHIIHHH", WAVE_FORMAT_IEEE_FLOAT, 1, rate, rate * 4, 4, 32, 0)
        extra = b"fact" + struct.pack("<II", 4, x.size)
    elif format == "pcm16":
        q = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        data = q.tobytes()
        fmt = struct.pack("<HHIIHH", WAVE_FORMAT_PCM, 1, rate, rate * 2, 2, 16)
        extra = b""
    else:
        raise ParameterError(f"unknown WAV format {format!r}; use 'float32' or 'pcm16'")
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + extra
    body += b"data" + struct.pack("<I", len(data)) + data
    if len(data) % 2:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def write_wav(signal: SignalBuffer, path: PathLike, format: str = "float32") -> None:
    payload = encode_wav(signal, format)
    with atomic_write(path, "wb") as fh:
        fh.write(payload)


def _decode_samples(raw: bytes, tag: int, bits: int, channels: int, offset: int) -> np.ndarray:
    if tag == WAVE_FORMAT_PCM:
        if bits == 16:
            x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
        elif bits == 24:
            b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
            v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
            v = np.where(v >= 1 << 23, v - (1 << 24), v)
            x = v.astype(np.float64) / float(1 << 23)
        elif bits == 32:
            x = np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
        elif bits == 8:
            x = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
        else:
            raise UnsupportedWavFormat(f"{bits}-bit PCM is not supported")
    elif tag == WAVE_FORMAT_IEEE_FLOAT:
        if bits == 32:
            x = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        elif bits == 64:
            x = np.frombuffer(raw, dtype="<f8").copy()
        else:
            raise UnsupportedWavFormat(f"{bits}-bit float is not supported")
    else:
        raise UnsupportedWavFormat(f"WAVE format tag 0x{tag:04x} is not supported")
    if channels > 1:
        x = x.reshape(-1, channels).mean(axis=1)
    if not np.all(np.isfinite(x)):
        raise WavParseError("non-finite sample values", offset)
    return x


def decode_wav(blob: bytes) -> SignalBuffer:
    """Parse RIFF/WAVE bytes; multi-channel audio is averaged to mono."""
    if len(blob) < 12:
        raise WavParseError("file too short for a RIFF header", len(blob))
    if blob[0:4] != b"RIFF":
        raise WavParseError(f"expected 'RIFF', found {blob[0:4]!r}", 0)
    if blob[8:12] != b"WAVE":
        raise WavParseError(f"expected 'WAVE', found {blob[8:12]!r}", 8)
    pos = 12
    fmt = None
    while pos + 8 <= len(blob):
        cid = blob[pos:pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        start = pos + 8
        if cid == b"fmt ":
            if size < 16 or start + size > len(blob):
                raise WavParseError(f"'fmt ' chunk of {size} bytes is truncated or too small", pos)
            tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", blob, start)
            if tag == WAVE_FORMAT_EXTENSIBLE:
                if size < 40:
                    raise WavParseError("WAVE_FORMAT_EXTENSIBLE 'fmt ' chunk too small", pos)
                (tag,) = struct.unpack_from("<H", blob, start + 24)
            if channels < 1 or rate < 1 or block_align < 1:
                raise WavParseError("invalid channel count, rate or block alignment", start)
            fmt = (tag, channels, rate, block_align, bits)
        elif cid == b"data":
            if fmt is None:
                raise WavParseError("'data' chunk before 'fmt ' chunk", pos)
            if start + size > len(blob):
                raise WavParseError(
                    f"'data' chunk declares {size} bytes but only {len(blob) - start} remain", pos)
            tag, channels, rate, block_align, bits = fmt
            if size % block_align:
                raise WavParseError(f"data size {size} is not a multiple of block size {block_align}", pos)
            if block_align != channels * ((bits + 7) // 8):
                raise UnsupportedWavFormat(f"block align {block_align} does not match {channels}x{bits}-bit")
            x = _decode_samples(blob[start:start + size], tag, bits, channels, start)
            return SignalBuffer(x, rate)
        pos = start + size + (size & 1)
    if fmt is None:
        raise WavParseError("no 'fmt ' chunk found", pos)
    raise WavParseError("no 'data' chunk found", pos)


def read_wav(path: PathLike) -> SignalBuffer:
    return decode_wav(Path(path).read_bytes())


# Manifest -------------------------------------------------------------------

MANIFEST_FIELDS = ("path", "class_name", "seed", "kind", "duration_s", "sample_rate_hz")


@dataclass(frozen=True)
class ManifestRow:
    path: str
    class_name: str
    seed: int
    kind: str
    duration_s: float
    sample_rate_hz: int


@dataclass
class Manifest:
    """Rows of generated or scored files; relative paths resolve against ``root``."""

    rows: list
    root: Optional[Path] = None

    def __post_init__(self):
        seen = set()
        for row in self.rows:
            if row.path in seen:
                raise ManifestError(f"duplicate manifest path {row.path!r}")
            seen.add(row.path)

    def resolve(self, row: ManifestRow) -> Path:
        p = Path(row.path)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p

    def __len__(self):
        return len(self.rows)


def write_manifest(manifest: Manifest, path: PathLike) -> None:
    with atomic_write(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for r in manifest.rows:
            writer.writerow([r.path, r.class_name, r.seed, r.kind, repr(float(r.duration_s)), r.sample_rate_hz])


def read_manifest(path: PathLike) -> Manifest:
    path = Path(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ManifestError(f"{path}: header is missing column(s) {sorted(missing)}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                rows.append(ManifestRow(rec["path"], rec["class_name"], int(rec["seed"]), rec["kind"],
                                        float(rec["duration_s"]), int(rec["sample_rate_hz"])))
            except (TypeError, ValueError) as exc:
                raise ManifestError(f"{path}, row {lineno}: {exc}") from None
    return Manifest(rows, root=path.parent)


# Dataset config -------------------------------------------------------------

SPEC_KEYS = {"kind", "samples_per_class", "duration_s", "sample_rate_hz", "master_seed", "classes"}
CLASS_KEYS = {"name", "frequencies_hz", "frequencies_khz", "amplitude_transition", "modulation",
              "modulation_speed", "envelope_shape", "noise", "amplitude_model", "blend", "segment_s",
              "jitter_hz", "n_harmonics"}
DEFAULT_KIND = DatasetKind.mixed


def _expect(value, kinds, key):
    if isinstance(value, bool) or not isinstance(value, kinds):
        names = "/".join(k.__name__ for k in (kinds if isinstance(kinds, tuple) else (kinds,)))
        raise ConfigValidationError(key, f"expected {names}, got {type(value).__name__} {value!r}")
    return value


def _number(value, key):
    return float(_expect(value, (int, float), key))


def _integer(value, key):
    return int(_expect(value, int, key))


def _warn_unknown(mapping: dict, allowed: set, where: str):
    for k in sorted(set(mapping) - allowed):
        log.warning("unknown config key %s%s ignored", where, k)


def _build(cls, mapping, key):
    _expect(mapping, dict, key)
    allowed = {f.name for f in fields(cls)}
    _warn_unknown(mapping, allowed, f"{key}.")
    kwargs = {}
    for name, value in mapping.items():
        if name not in allowed:
            continue
        if isinstance(value, list):
            kwargs[name] = tuple(_number(v, f"{key}.{name}") for v in value)
        else:
            kwargs[name] = _number(value, f"{key}.{name}")
    try:
        return cls(**kwargs)
    except (ParameterError, TypeError, ValueError) as exc:
        raise ConfigValidationError(key, str(exc)) from None


def _class_from_mapping(raw, index: int, kind: DatasetKind, fallback: Optional[ClassConfig]) -> ClassConfig:
    key = f"classes[{index}]"
    _expect(raw, dict, key)
    _warn_unknown(raw, CLASS_KEYS, f"{key}.")
    kw = {}
    if fallback is not None:
        kw = {f.name: getattr(fallback, f.name) for f in fields(ClassConfig)}
    else:
        kw["segment_s"] = {DatasetKind.statistical: STATISTICAL_SEGMENT_S,
                           DatasetKind.mixed: MIXED_SEGMENT_S}.get(kind, 0.05)
        if kind is DatasetKind.structural:
            kw["noise"] = STRUCTURAL_NOISE
    name = raw.get("name", kw.get("class_name", f"Class {index + 1}"))
    kw["class_name"] = str(name)
    key = f"classes[{index}] ({kw['class_name']})"
    if "frequencies_khz" in raw:
        kw["frequencies_hz"] = tuple(1000.0 * _number(v, f"{key}.frequencies_khz")
                                     for v in _expect(raw["frequencies_khz"], list, f"{key}.frequencies_khz"))
    if "frequencies_hz" in raw:
        kw["frequencies_hz"] = tuple(_number(v, f"{key}.frequencies_hz")
                                     for v in _expect(raw["frequencies_hz"], list, f"{key}.frequencies_hz"))
    if "frequencies_hz" not in kw:
        raise ConfigValidationError(f"{key}.frequencies_khz", "class frequencies are required")
    for name in ("amplitude_transition", "modulation_speed", "envelope_shape"):
        if name in raw:
            kw[name] = _expect(raw[name], str, f"{key}.{name}")
    for name in ("segment_s", "jitter_hz"):
        if name in raw:
            kw[name] = _number(raw[name], f"{key}.{name}")
    if "n_harmonics" in raw:
        kw["n_harmonics"] = _integer(raw["n_harmonics"], f"{key}.n_harmonics")
    for name, cls in (("noise", NoiseModel), ("amplitude_model", AmplitudeModel)):
        if name in raw:
            base = asdict(kw[name]) if name in kw else {}
            base.update(_expect(raw[name], dict, f"{key}.{name}"))
            kw[name] = _build(cls, base, f"{key}.{name}")
    for name, cls in (("modulation", ModulationPlan), ("blend", BlendPlan)):
        if name in raw:
            kw[name] = None if raw[name] is None else _build(cls, raw[name], f"{key}.{name}")
    try:
        return ClassConfig(**kw)
    except (ConfigError, ValueError) as exc:
        raise ConfigValidationError(key, str(exc)) from None


def spec_from_mapping(raw: Optional[dict]) -> DatasetSpec:
    """Build a DatasetSpec from parsed config data, filling documented defaults."""
    if raw is None:
        log.warning("empty dataset config; using defaults for every key")
        raw = {}
    _expect(raw, dict, "<root>")
    _warn_unknown(raw, SPEC_KEYS, "")
    try:
        kind = DatasetKind(raw.get("kind", DEFAULT_KIND.value))
    except ValueError:
        raise ConfigValidationError("kind", f"must be one of {[k.value for k in DatasetKind]}, "
                                            f"got {raw.get('kind')!r}") from None
    spec_kw = {}
    if "samples_per_class" in raw:
        spec_kw["samples_per_class"] = _integer(raw["samples_per_class"], "samples_per_class")
    if "duration_s" in raw:
        spec_kw["duration_s"] = _number(raw["duration_s"], "duration_s")
    if "sample_rate_hz" in raw:
        spec_kw["sample_rate_hz"] = _integer(raw["sample_rate_hz"], "sample_rate_hz")
    if "master_seed" in raw:
        spec_kw["master_seed"] = _integer(raw["master_seed"], "master_seed")

    defaults = default_classes(kind)
    if "classes" in raw:
        classes = [
            _class_from_mapping(c, i, kind, defaults[i] if i < len(defaults) else None)
            for i, c in enumerate(_expect(raw["classes"], list, "classes"))
        ]
    else:
        classes = list(defaults)
    try:
        spec = DatasetSpec(kind=kind, classes=tuple(classes), **spec_kw)
    except ConfigError as exc:
        bad = next((i for i, c in enumerate(classes) if f"class {c.class_name!r}" in str(exc)), None)
        raise ConfigValidationError(f"classes[{bad}]" if bad is not None else "<root>", str(exc)) from None
    return spec


def read_config(path: PathLike) -> DatasetSpec:
    """Parse a YAML dataset config (see ``configs/*.yaml`` for the layout)."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigValidationError("<root>", f"not valid YAML: {exc}") from None
    return spec_from_mapping(raw)


def builtin_config_path(name: str):
    """Path-like handle to a shipped config, e.g. ``"mixed_default"``."""
    return resources.files("sonartex").joinpath("configs", f"{name}.yaml")


def spec_to_mapping(spec: DatasetSpec) -> dict:
    classes = []
    for c in spec.classes:
        classes.append({
            "name": c.class_name,
            "frequencies_hz": list(c.frequencies_hz),
            "amplitude_transition": c.amplitude_transition.value,
            "modulation": None if c.modulation is None else asdict(c.modulation),
            "modulation_speed": c.modulation_speed,
            "envelope_shape": c.envelope_shape.value,
            "noise": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(c.noise).items()},
            "amplitude_model": asdict(c.amplitude_model),
            "blend": None if c.blend is None else asdict(c.blend),
            "segment_s": c.segment_s,
            "jitter_hz": c.jitter_hz,
            "n_harmonics": c.n_harmonics,
        })
    return {
        "kind": spec.kind.value,
        "samples_per_class": spec.samples_per_class,
        "duration_s": spec.duration_s,
        "sample_rate_hz": spec.sample_rate_hz,
        "master_seed": spec.master_seed,
        "classes": classes,
    }


def dump_config(spec: DatasetSpec) -> str:
    return yaml.safe_dump(spec_to_mapping(spec), sort_keys=False)


# Score reports --------------------------------------------------------------

REPORT_FIELDS = ("dataset", "class", "file", "stats", "strts", "error")


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def report_csv(report: ScoreReport) -> str:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf)
    writer.writerow(REPORT_FIELDS)
    for f in report.files:
        writer.writerow([f.dataset, f.class_name, f.file, _fmt(f.stats), _fmt(f.strts), f.error])
    return buf.getvalue()


def report_json(report: ScoreReport) -> str:
    groups = [
        {"dataset": g.dataset, "class": g.class_name, "n": g.n,
         "stats": {"mean": g.stats_mean, "std": g.stats_std},
         "strts": {"mean": g.strts_mean, "std": g.strts_std}}
        for g in report.summaries()
    ]
    files = [
        {"dataset": f.dataset, "class": f.class_name, "file": f.file,
         "stats": None if math.isnan(f.stats) else f.stats,
         "strts": None if math.isnan(f.strts) else f.strts,
         "error": f.error}
        for f in report.files
    ]
    return json.dumps({"groups": groups, "files": files}, indent=2) + "\n"


def write_report(report: ScoreReport, path: PathLike, format: str = "csv") -> None:
    if format == "csv":
        text = report_csv(report)
    elif format == "json":
        text = report_json(report)
    else:
        raise ValueError(f"unknown report format {format!r}; use 'csv' or 'json'")
    with atomic_write(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)


def read_report(path: PathLike) -> ScoreReport:
    """Read a per-file score CSV written by :func:`write_report`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        if header[:5] != REPORT_FIELDS[:5]:
            raise ReportSchemaError(f"{path}: expected columns {list(REPORT_FIELDS)}, found {list(header)}")
        files = []
        for lineno, rec in enumerate(reader, start=2):
            try:
                stats = float(rec["stats"]) if rec["stats"] else float("nan")
                strts = float(rec["strts"]) if rec["strts"] else float("nan")
            except ValueError as exc:
                raise ReportSchemaError(f"{path}, row {lineno}: {exc}") from None
            files.append(FileScore(rec["dataset"], rec["class"], rec["file"], stats, strts,
                                   rec.get("error") or ""))
    return ScoreReport(files)


# Matrices and images --------------------------------------------------------

def write_matrix_csv(matrix: np.ndarray, path: PathLike) -> None:
    buf = io.StringIO()
    np.savetxt(buf, np.atleast_2d(matrix), delimiter=",", fmt="%.9g")
    with atomic_write(path, "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def read_matrix_csv(path: PathLike) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))


def to_gray8(matrix: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255; a flat matrix maps to all zeros."""
    m = np.asarray(matrix, dtype=np.float64)
    lo, hi = float(m.min()), float(m.max())
    if hi <= lo:
        return np.zeros(m.shape, dtype=np.uint8)
    return np.round((m - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_png(matrix: np.ndarray, path: PathLike) -> tuple:
    """Save ``matrix`` as an 8-bit grayscale PNG; matrix row 0 is the top row.

    Returns ``(width, height)``.
    """
    from PIL import Image

    img = Image.fromarray(to_gray8(matrix))
    with atomic_write(path, "wb") as fh:
        img.save(fh, format="PNG")
    return img.size
