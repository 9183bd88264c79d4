import json
import logging
import struct
import wave

import numpy as np
import pytest
from PIL import Image
from scipy.io import wavfile

from conftest import FS
from sonartex.core import ParameterError, SignalBuffer
from sonartex.store import (ConfigValidationError, Manifest, ManifestError, ManifestRow, ReportSchemaError,
                            UnsupportedWavFormat, WavParseError, atomic_write, builtin_config_path, decode_wav,
                            dump_config, encode_wav, read_config, read_manifest, read_matrix_csv, read_report,
                            read_wav, report_json, spec_from_mapping, write_manifest, write_matrix_csv, write_png,
                            write_report, write_wav)
from sonartex.synth import default_spec
from sonartex.texture import FileScore, ScoreReport


@pytest.fixture
def signal(rng):
    x = rng.uniform(-1, 1, FS * 5)
    x[:2] = [-1.0, 1.0]
    return SignalBuffer(x, FS)


def test_float32_round_trip_exact(signal, tmp_path):
    p = tmp_path / "a.wav"
    write_wav(signal, p)
    back = read_wav(p)
    assert back.sample_rate_hz == FS
    assert np.array_equal(back.samples, signal.samples.astype(np.float32).astype(np.float64))


def test_float32_layout(signal):
    blob = encode_wav(signal)
    assert blob[:4] == b"RIFF" and blob[8:12] == b"WAVE"
    assert struct.unpack_from("<I", blob, 16)[0] == 18
    assert struct.unpack_from("<H", blob, 20)[0] == 3
    assert blob[38:42] == b"fact"
    data_at = blob.index(b"data")
    assert struct.unpack_from("<I", blob, data_at + 4)[0] == 640000
    assert struct.unpack_from("<I", blob, 4)[0] == len(blob) - 8


def test_pcm16_round_trip_within_quantization(signal, tmp_path):
    p = tmp_path / "b.wav"
    write_wav(signal, p, format="pcm16")
    back = read_wav(p).samples
    assert np.max(np.abs(back - signal.samples)) <= 1 / 32768 + 1e-12
    assert back[1] == 32767 / 32768


def test_scipy_reads_our_files(signal, tmp_path):
    for fmt, dtype in (("float32", np.float32), ("pcm16", np.int16)):
        p = tmp_path / f"{fmt}.wav"
        write_wav(signal, p, format=fmt)
        rate, data = wavfile.read(p)
        assert rate == FS and data.dtype == dtype and data.size == len(signal)


def test_reads_scipy_written_file(tmp_path):
    x = (np.sin(np.arange(1000) / 7) * 0.5).astype(np.float32)
    wavfile.write(tmp_path / "s.wav", 22050, x)
    back = read_wav(tmp_path / "s.wav")
    assert back.sample_rate_hz == 22050 and np.array_equal(back.samples, x.astype(np.float64))


def test_stereo_pcm_averaged(tmp_path):
    left = np.array([1000, -2000, 3000], dtype="<i2")
    right = np.array([3000, 2000, -1000], dtype="<i2")
    with wave.open(str(tmp_path / "st.wav"), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(8000)
        w.writeframes(np.column_stack([left, right]).tobytes())
    back = read_wav(tmp_path / "st.wav")
    np.testing.assert_allclose(back.samples, (left + right.astype(float)) / 2 / 32768)


def test_out_of_range_rejected(tmp_path):
    with pytest.raises(ParameterError):
        write_wav(SignalBuffer([0.0, 1.5], FS), tmp_path / "x.wav")
    assert not (tmp_path / "x.wav").exists()


def test_truncated_data_reports_offset(signal):
    blob = encode_wav(signal)[:-100]
    with pytest.raises(WavParseError) as exc:
        decode_wav(blob)
    assert exc.value.offset == blob.index(b"data")


@pytest.mark.parametrize("blob", [b"", b"RIFX" + bytes(40), b"RIFF\x00\x00\x00\x00WAVX" + bytes(30)])
def test_malformed_headers(blob):
    with pytest.raises(WavParseError):
        decode_wav(blob)


def test_unsupported_format_tag():
    fmt = struct.pack("<HHIIHH", 0x0055, 1, 8000, 8000, 1, 8)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", 2) + b"\x00\x00"
    with pytest.raises(UnsupportedWavFormat):
        decode_wav(b"RIFF" + struct.pack("<I", len(body)) + body)


def test_unknown_write_format(signal):
    with pytest.raises(ParameterError):
        encode_wav(signal, "mp3")


def test_builtin_mixed_config_matches_table():
    spec = read_config(builtin_config_path("mixed_default"))
    assert spec == default_spec("mixed")


@pytest.mark.parametrize("name", ["statistical_default", "structural_default"])
def test_builtin_configs_match_defaults(name):
    kind = name.split("_")[0]
    assert read_config(builtin_config_path(name)) == default_spec(kind)


def test_dump_config_round_trips(tmp_path):
    spec = default_spec("structural", samples_per_class=3, master_seed=9)
    (tmp_path / "c.yaml").write_text(dump_config(spec))
    assert read_config(tmp_path / "c.yaml") == spec


def test_empty_config_warns_and_defaults(tmp_path, caplog):
    (tmp_path / "e.yaml").write_text("")
    with caplog.at_level(logging.WARNING):
        spec = read_config(tmp_path / "e.yaml")
    assert "empty" in caplog.text
    assert spec == default_spec("mixed")


def test_nyquist_violation_names_class():
    raw = {"kind": "mixed", "classes": [{"name": "Loud", "frequencies_khz": [2, 4, 8, 17],
                                         "amplitude_transition": "KtoRayleigh"}]}
    with pytest.raises(ConfigValidationError) as exc:
        spec_from_mapping(raw)
    assert "Loud" in str(exc.value) and exc.value.key == "classes[0]"


def test_type_mismatch_names_key():
    with pytest.raises(ConfigValidationError) as exc:
        spec_from_mapping({"kind": "statistical", "samples_per_class": "many"})
    assert exc.value.key == "samples_per_class"
    with pytest.raises(ConfigValidationError) as exc:
        spec_from_mapping({"kind": "statistical", "classes": [{"frequencies_khz": [1, "x", 3]}]})
    assert "frequencies_khz" in exc.value.key


def test_unknown_key_warns(caplog):
    with caplog.at_level(logging.WARNING):
        spec_from_mapping({"kind": "statistical", "colour": "blue"})
    assert "colour" in caplog.text


def test_bad_kind():
    with pytest.raises(ConfigValidationError) as exc:
        spec_from_mapping({"kind": "acoustic"})
    assert exc.value.key == "kind"


def _manifest(n_classes=4, per_class=10):
    rows = [ManifestRow(f"c{c}/f{i:05d}.wav", f"Class {c + 1}", c * 100 + i, "mixed", 5.0, FS)
            for c in range(n_classes) for i in range(per_class)]
    return Manifest(rows)


def test_manifest_round_trip(tmp_path):
    m = _manifest()
    write_manifest(m, tmp_path / "m.csv")
    back = read_manifest(tmp_path / "m.csv")
    assert back.rows == m.rows and len(back) == 40
    assert back.resolve(back.rows[0]) == tmp_path / "c0/f00000.wav"


def test_manifest_rejects_duplicates():
    row = ManifestRow("a.wav", "A", 0, "mixed", 5.0, FS)
    with pytest.raises(ManifestError):
        Manifest([row, row])


def test_manifest_bad_header(tmp_path):
    (tmp_path / "m.csv").write_text("file,label\na.wav,A\n")
    with pytest.raises(ManifestError):
        read_manifest(tmp_path / "m.csv")


def _report():
    files = [FileScore("mix", "A", "a1.wav", 4.0, 2.0), FileScore("mix", "A", "a2.wav", 4.5, 2.5),
             FileScore("mix", "B", "b1.wav", 3.0, 4.0), FileScore("mix", "B", "bad.wav", error="boom")]
    return ScoreReport(files)


def test_report_summaries():
    s = _report().summaries()
    assert [(g.dataset, g.class_name, g.n) for g in s] == [("mix", "", 3), ("mix", "A", 2), ("mix", "B", 1)]
    assert s[0].stats_mean == pytest.approx(11.5 / 3, abs=1e-12)
    assert s[1].strts_std == pytest.approx(np.std([2.0, 2.5], ddof=1), abs=1e-12)
    assert s[2].stats_std == 0.0


def test_report_csv_round_trip(tmp_path):
    rep = _report()
    write_report(rep, tmp_path / "r.csv")
    back = read_report(tmp_path / "r.csv")
    assert [f.file for f in back.files] == [f.file for f in rep.files]
    assert back.files[0].stats == 4.0 and back.files[3].error == "boom" and np.isnan(back.files[3].stats)


def test_report_json_means_exact():
    rep = _report()
    doc = json.loads(report_json(rep))
    for g, ref in zip(doc["groups"], rep.summaries()):
        assert abs(g["stats"]["mean"] - ref.stats_mean) < 1e-12
        assert abs(g["strts"]["mean"] - ref.strts_mean) < 1e-12
    assert doc["files"][3]["stats"] is None


def test_report_schema_mismatch(tmp_path):
    (tmp_path / "r.csv").write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ReportSchemaError):
        read_report(tmp_path / "r.csv")


def test_atomic_write_cleans_up_on_failure(tmp_path):
    target = tmp_path / "out.bin"
    target.write_bytes(b"old")
    with pytest.raises(RuntimeError):
        with atomic_write(target) as fh:
            fh.write(b"partial")
            raise RuntimeError("interrupted")
    assert target.read_bytes() == b"old"
    assert [p.name for p in tmp_path.iterdir()] == ["out.bin"]


def test_atomic_write_success_leaves_no_temp(tmp_path):
    with atomic_write(tmp_path / "ok.txt", "w") as fh:
        fh.write("hi")
    assert [p.name for p in tmp_path.iterdir()] == ["ok.txt"]


def test_png_dimensions_and_orientation(tmp_path):
    m = np.zeros((3, 5))
    m[0, :] = 1.0  # first row bright
    assert write_png(m, tmp_path / "m.png") == (5, 3)
    img = np.asarray(Image.open(tmp_path / "m.png"))
    assert img.shape == (3, 5) and img.dtype == np.uint8
    assert np.all(img[0] == 255) and np.all(img[1:] == 0)


def test_png_flat_matrix(tmp_path):
    write_png(np.full((4, 4), 7.0), tmp_path / "f.png")
    assert np.all(np.asarray(Image.open(tmp_path / "f.png")) == 0)


def test_matrix_csv_round_trip(tmp_path, rng):
    m = rng.standard_normal((6, 4))
    write_matrix_csv(m, tmp_path / "m.csv")
    np.testing.assert_allclose(read_matrix_csv(tmp_path / "m.csv"), m, rtol=1e-8)
