"""``sonartex`` command line: generate, score, ssm, spectrogram, report.

Exit codes: 0 success, 1 invalid arguments or configuration, 2 runtime or
I/O failure. Logs and progress go to stderr; results go to files or stdout.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .core import ConfigError, ParameterError
from .dsp import SpectrogramConfig, log_mel, resample
from .store import (ConfigValidationError, Manifest, ManifestError, ManifestRow, ReportSchemaError, WavError,
                    builtin_config_path, dump_config, read_config, read_manifest, read_report, read_wav,
                    write_matrix_csv, write_png, write_report)
from .synth import DatasetWriteError, generate_dataset
from .texture import ScoreReport, StaTSParams, batch_score, self_similarity

log = logging.getLogger("sonartex")

CONFIG_SCHEMA_VERSION = 1
WORKERS_ENV = "SONARTEX_WORKERS"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with code 1 rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text} must be a positive integer")
    return value


def _resolve_config_path(text: str) -> Path:
    path = Path(text)
    if path.is_file():
        return path
    builtin = builtin_config_path(text)
    if builtin.is_file():
        return Path(str(builtin))
    raise UsageError(f"config file not found: {text}")


def _progress(iterable, total):
    step = max(1, total // 20)
    for i, item in enumerate(iterable, start=1):
        if i % step == 0 or i == total:
            print(f"\r{i}/{total}", end="", file=sys.stderr, flush=True)
        yield item
    print(file=sys.stderr)


def cmd_generate(args) -> int:
    spec = read_config(_resolve_config_path(args.config))
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.samples_per_class is not None:
        overrides["samples_per_class"] = args.samples_per_class
    spec = replace(spec, **overrides)
    log.info("resolved dataset config:\n%s", dump_config(spec))
    t0 = time.perf_counter()
    manifest = generate_dataset(spec, args.out, workers=args.workers, wav_format=args.wav_format,
                                progress=None if args.quiet else _progress)
    print(f"generated {len(manifest)} files ({len(spec.classes)} classes x {spec.samples_per_class}) "
          f"kind={spec.kind.value} duration={spec.duration_s:g}s seed={spec.master_seed} "
          f"manifest={Path(args.out) / 'manifest.csv'} elapsed={time.perf_counter() - t0:.1f}s")
    return EXIT_OK


def cmd_score(args) -> int:
    params = StaTSParams(frame_len=args.frame_len, hop=args.hop, n_bins=args.bins,
                         convergence_eps=args.convergence_eps, edge_quantile=args.edge_quantile)
    log.info("resolved score params: %s target_rate=%d workers=%d", params, args.rate, args.workers)
    if args.manifest:
        manifest = read_manifest(args.manifest)
    else:
        rows = [ManifestRow(path=p, class_name="", seed=0, kind=args.dataset or "input", duration_s=0.0,
                            sample_rate_hz=0) for p in args.input]
        manifest = Manifest(rows)
    report = batch_score(manifest, params, dataset=args.dataset, workers=args.workers, target_hz=args.rate)
    for f in report.failures():
        log.warning("could not score %s: %s", f.file, f.error)
    if args.out:
        write_report(report, args.out, args.format)
    else:
        from .store import report_csv, report_json
        sys.stdout.write(report_csv(report) if args.format == "csv" else report_json(report))
    print(_summary_text(_dataset_rows(report)), file=sys.stderr)
    if report.files and len(report.failures()) == len(report.files):
        log.error("every input failed to score")
        return EXIT_RUNTIME
    return EXIT_OK


def _load_signal(path, rate):
    sig = read_wav(path)
    if rate and sig.sample_rate_hz != rate:
        sig = resample(sig, rate)
    return sig


def _export(matrix, outs, png_matrix=None):
    for out in outs:
        out = Path(out)
        if out.suffix.lower() == ".png":
            w, h = write_png(matrix if png_matrix is None else png_matrix, out)
            print(f"{out}: {w}x{h} png")
        elif out.suffix.lower() == ".csv":
            write_matrix_csv(matrix, out)
            print(f"{out}: {matrix.shape[0]}x{matrix.shape[1]} csv")
        else:
            raise UsageError(f"output must end in .png or .csv: {out}")


def cmd_ssm(args) -> int:
    for out in args.out:
        if Path(out).suffix.lower() not in (".png", ".csv"):
            raise UsageError(f"output must end in .png or .csv: {out}")
    sig = _load_signal(args.input, args.rate)
    ssm = self_similarity(sig, args.frame_len, args.hop)
    _export(ssm.values, args.out)
    return EXIT_OK


def cmd_spectrogram(args) -> int:
    for out in args.out:
        if Path(out).suffix.lower() not in (".png", ".csv"):
            raise UsageError(f"output must end in .png or .csv: {out}")
    cfg = SpectrogramConfig(window_len=args.window, hop=args.hop, n_mels=args.mels, sample_rate_hz=args.rate)
    sig = _load_signal(args.input, cfg.sample_rate_hz)
    spec = log_mel(sig, cfg)
    # PNG: one column per frame, row 0 = lowest mel band.
    _export(spec.values, args.out, png_matrix=spec.values.T)
    return EXIT_OK


def _dataset_rows(report: ScoreReport) -> list:
    rows = []
    for g in report.summaries():
        if g.class_name == "":
            rows.append(g)
    return rows


def _summary_text(rows) -> str:
    header = ("Dataset", "N", "StrTS", "StaTS")
    body = [(g.dataset, str(g.n), f"{g.strts_mean:.2f} ± {g.strts_std:.2f}", f"{g.stats_mean:.2f} ± {g.stats_std:.2f}")
            for g in rows]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header, *body]]
    return "\n".join(lines)


def merge_reports(reports) -> ScoreReport:
    """Union of per-file rows keyed by (dataset, file); later duplicates are dropped."""
    seen = set()
    files = []
    for rep in reports:
        for f in rep.files:
            key = (f.dataset, f.file)
            if key in seen:
                continue
            seen.add(key)
            files.append(f)
    return ScoreReport(files)


def cmd_report(args) -> int:
    merged = merge_reports(read_report(p) for p in args.scores)
    rows = _dataset_rows(merged)
    print(_summary_text(rows))
    if args.out:
        import csv
        import io

        from .store import atomic_write

        buf = io.StringIO(newline="")
        writer = csv.writer(buf)
        writer.writerow(["dataset", "n", "strts_mean", "strts_std", "stats_mean", "stats_std"])
        for g in rows:
            writer.writerow([g.dataset, g.n, repr(g.strts_mean), repr(g.strts_std),
                             repr(g.stats_mean), repr(g.stats_std)])
        with atomic_write(args.out, "w", newline="", encoding="utf-8") as fh:
            fh.write(buf.getvalue())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sonartex", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"sonartex {__version__} (config schema {CONFIG_SCHEMA_VERSION})")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    workers = dict(type=_positive_int, default=_default_workers(),
                   help=f"worker processes (default ${WORKERS_ENV} or 1)")

    g = sub.add_parser("generate", help="synthesize a dataset and its manifest")
    g.add_argument("--config", required=True,
                   help="YAML dataset config, or a shipped name: mixed_default, statistical_default, "
                        "structural_default")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
    g.add_argument("--samples-per-class", type=_positive_int, help="overrides the config")
    g.add_argument("--workers", **workers)
    g.add_argument("--wav-format", choices=("float32", "pcm16"), default="float32")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("score", help="StaTS / StrTS for a manifest or WAV files")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", help="manifest CSV from `generate`")
    src.add_argument("--input", nargs="+", help="WAV files")
    s.add_argument("--dataset", help="dataset label (default: manifest kind, or 'input')")
    s.add_argument("--frame-len", type=_positive_int, default=StaTSParams.frame_len)
    s.add_argument("--hop", type=_positive_int, default=StaTSParams.hop)
    s.add_argument("--bins", type=_positive_int, default=StaTSParams.n_bins)
    s.add_argument("--convergence-eps", type=float, default=StaTSParams.convergence_eps)
    s.add_argument("--edge-quantile", type=float, default=StaTSParams.edge_quantile,
                   help="histogram range quantile; 0 = global min/max")
    s.add_argument("--rate", type=_positive_int, default=32000, help="resample inputs to this rate")
    s.add_argument("--out", help="report path (default: stdout)")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--workers", **workers)
    s.set_defaults(func=cmd_score)

    m = sub.add_parser("ssm", help="self-similarity matrix as PNG and/or CSV")
    m.add_argument("--input", required=True)
    m.add_argument("--out", required=True, action="append", help=".png or .csv; repeatable")
    m.add_argument("--frame-len", type=_positive_int, default=2048)
    m.add_argument("--hop", type=_positive_int, default=512)
    m.add_argument("--rate", type=_positive_int, default=32000)
    m.set_defaults(func=cmd_ssm)

    sp = sub.add_parser("spectrogram", help="log-mel spectrogram as PNG and/or CSV")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True, action="append", help=".png or .csv; repeatable")
    sp.add_argument("--window", type=_positive_int, default=SpectrogramConfig.window_len)
    sp.add_argument("--hop", type=_positive_int, default=SpectrogramConfig.hop)
    sp.add_argument("--mels", type=_positive_int, default=SpectrogramConfig.n_mels)
    sp.add_argument("--rate", type=_positive_int, default=SpectrogramConfig.sample_rate_hz)
    sp.set_defaults(func=cmd_spectrogram)

    r = sub.add_parser("report", help="merge score CSVs into a per-dataset summary")
    r.add_argument("--scores", nargs="+", required=True, help="score CSVs from `score`")
    r.add_argument("--out", help="summary CSV path")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sonartex: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigValidationError, ConfigError, ParameterError, ReportSchemaError, ManifestError) as exc:
        print(f"sonartex: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DatasetWriteError, WavError, OSError) as exc:
        print(f"sonartex: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
