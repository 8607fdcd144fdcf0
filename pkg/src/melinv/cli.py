"""
melinv command-line front end
Batch reconstruction, metrics, method comparison, corpus synthesis and
mel-spectrogram export
"""

import argparse
import itertools
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import pandas as pd
from marshmallow import Schema, ValidationError, fields, post_load, validate, validates_schema

from .algorithms import ALGORITHMS, INIT_MODES, AlgoConfig, run_algorithm
from .audio_io import (CSV_FLOAT_FORMAT, MelSidecar, load_filterbank, load_mel, read_wav,
                       save_mel, write_table, write_wav)
from .corpus import write_corpus
from .errors import AudioIOError, ConfigurationError, InvalidInputError, MelInvError
from .logconfig import configure_logging
from .mel import DEFAULT_LSQ_ITERS, MagnitudeGram, MelFilterbank, MelGram, build_mel_filterbank, mel_compress
from .metrics import MetricReport, fit_length, paired_comparison, score_reconstruction
from .settings import DEFAULT_PRESET, PRESETS, Settings, get_preset
from .stft import Signal, StftConfig, istft, stft

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

SUMMARY_COLUMNS = ["clip_id", "algorithm", "scm_db", "sc_db", "objective", "wall_clock_ms", "error"]
METRICS_COLUMNS = ["clip_id", "scm_db", "sc_db", "error"]
SWEEP_CLIP_COLUMNS = ["rho", "lambda", "clip_id", "scm_db", "sc_db", "objective", "error"]
SWEEP_COLUMNS = ["rho", "lambda", "clips", "failed", "mean_scm_db", "median_scm_db",
                 "mean_sc_db", "median_sc_db"]


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Geometry:
    """Sample rate, STFT configuration and filterbank shared by every clip of a run"""
    sample_rate: int
    config: StftConfig
    filterbank: MelFilterbank


def resolve_geometry(preset: str = DEFAULT_PRESET, sample_rate: Optional[int] = None,
                     window_ms: Optional[float] = None, hop_ms: Optional[float] = None,
                     n_mels: Optional[int] = None, f_min: Optional[float] = None,
                     f_max: Optional[float] = None, filterbank: Optional[str] = None) -> Geometry:
    """
    Preset values, overridden by whichever flags were given

    Raises:
        ConfigurationError: The combination does not describe a valid geometry
    """
    try:
        base = get_preset(preset)
    except ValueError as e:
        raise ConfigurationError(str(e)) from e

    rate = sample_rate or base.sample_rate
    window = int(round(window_ms * rate / 1000.0)) if window_ms is not None else base.window_length
    hop = int(round(hop_ms * rate / 1000.0)) if hop_ms is not None else base.hop_length

    try:
        config = StftConfig(window_length=window, hop_length=hop)
        if filterbank is not None:
            fb = load_filterbank(filterbank)
            if fb.n_bins != config.n_bins:
                raise ConfigurationError(f"Filterbank {filterbank} has {fb.n_bins} bins, "
                                         f"STFT geometry gives {config.n_bins}")
            if fb.sample_rate != rate:
                raise ConfigurationError(f"Filterbank {filterbank} is for {fb.sample_rate} Hz, run uses {rate} Hz")
        else:
            fb = build_mel_filterbank(
                n_mels or base.n_mels, config.n_bins, rate,
                f_min if f_min is not None else base.f_min,
                f_max if f_max is not None else base.f_max,
            )
    except (InvalidInputError, AudioIOError) as e:
        raise ConfigurationError(str(e)) from e

    return Geometry(rate, config, fb)


# ---------------------------------------------------------------------------
# Run specification
# ---------------------------------------------------------------------------

@dataclass
class RunSpec:
    """Everything one invert run needs, validated by RunSpecSchema"""
    inputs: list
    algorithm: str
    out_dir: str
    preset: str = DEFAULT_PRESET
    sample_rate: Optional[int] = None
    window_ms: Optional[float] = None
    hop_ms: Optional[float] = None
    n_mels: Optional[int] = None
    f_min: Optional[float] = None
    f_max: Optional[float] = None
    filterbank: Optional[str] = None
    iters: Optional[int] = None
    rho: Optional[float] = None
    lam: Optional[float] = None
    alpha: Optional[float] = None
    mu: Optional[float] = None
    seed: int = 0
    init: str = "random_phase"
    trace_every: Optional[int] = None
    mel_in: Optional[str] = None
    sweep: Optional[str] = None
    jobs: int = 1
    timing: bool = True
    cascade_iters: int = DEFAULT_LSQ_ITERS

    def geometry(self) -> Geometry:
        return resolve_geometry(self.preset, self.sample_rate, self.window_ms, self.hop_ms,
                                self.n_mels, self.f_min, self.f_max, self.filterbank)

    def algo_config(self) -> AlgoConfig:
        try:
            return AlgoConfig.for_algorithm(self.algorithm, iters=self.iters, rho=self.rho, lam=self.lam,
                                            alpha=self.alpha, mu=self.mu, seed=self.seed,
                                            trace_every=self.trace_every)
        except InvalidInputError as e:
            raise ConfigurationError(str(e)) from e


def _positive(**kwargs):
    return validate.Range(min=0, min_inclusive=False, **kwargs)


class RunSpecSchema(Schema):
    inputs = fields.List(fields.Str(), load_default=list)
    algorithm = fields.Str(required=True, validate=validate.OneOf(ALGORITHMS))
    out_dir = fields.Str(required=True)
    preset = fields.Str(load_default=DEFAULT_PRESET, validate=validate.OneOf(sorted(PRESETS)))
    sample_rate = fields.Int(allow_none=True, load_default=None, validate=validate.Range(min=1))
    window_ms = fields.Float(allow_none=True, load_default=None, validate=_positive())
    hop_ms = fields.Float(allow_none=True, load_default=None, validate=_positive())
    n_mels = fields.Int(allow_none=True, load_default=None, validate=validate.Range(min=1))
    f_min = fields.Float(allow_none=True, load_default=None, validate=validate.Range(min=0))
    f_max = fields.Float(allow_none=True, load_default=None, validate=_positive())
    filterbank = fields.Str(allow_none=True, load_default=None)
    iters = fields.Int(allow_none=True, load_default=None, validate=validate.Range(min=0))
    rho = fields.Float(allow_none=True, load_default=None, validate=_positive())
    lam = fields.Float(allow_none=True, load_default=None, validate=validate.Range(min=0))
    alpha = fields.Float(allow_none=True, load_default=None, validate=validate.Range(min=0))
    mu = fields.Float(allow_none=True, load_default=None, validate=_positive())
    seed = fields.Int(load_default=0)
    init = fields.Str(load_default="random_phase", validate=validate.OneOf(INIT_MODES))
    trace_every = fields.Int(allow_none=True, load_default=None, validate=validate.Range(min=1))
    mel_in = fields.Str(allow_none=True, load_default=None)
    sweep = fields.Str(allow_none=True, load_default=None)
    jobs = fields.Int(load_default=1, validate=validate.Range(min=1))
    timing = fields.Bool(load_default=True)
    cascade_iters = fields.Int(load_default=DEFAULT_LSQ_ITERS, validate=validate.Range(min=1))

    @validates_schema
    def check_paths(self, data, **kwargs):
        missing = [path for path in data.get("inputs", []) if not Path(path).exists()]
        for key in ("mel_in", "sweep", "filterbank"):
            if data.get(key) is not None and not Path(data[key]).exists():
                missing.append(data[key])
        if missing:
            raise ValidationError(f"Paths do not exist: {missing}")
        if not data.get("inputs") and data.get("mel_in") is None:
            raise ValidationError("Give WAV inputs or --mel-in")
        if data.get("algorithm") in ("pg-gla", "admm-gla") and not data.get("inputs"):
            raise ValidationError(f"{data['algorithm']} reconstructs the phase of a reference; give WAV inputs")

    @post_load
    def make_spec(self, data, **kwargs):
        return RunSpec(**data)


class SweepGridSchema(Schema):
    rho = fields.List(fields.Float(validate=_positive()), required=True, validate=validate.Length(min=1))
    lam = fields.List(fields.Float(validate=validate.Range(min=0)), required=True, data_key="lambda",
                      validate=validate.Length(min=1))


def load_run_spec(values: dict) -> RunSpec:
    try:
        return RunSpecSchema().load(values)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid run specification: {e.messages}") from e


def load_sweep_grid(path) -> list:
    """(rho, lambda) pairs of a JSON grid file, rho-major in file order"""
    try:
        with open(path, "r") as f:
            grid = SweepGridSchema().load(json.load(f))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"Cannot read sweep grid {path}: {e}") from e
    except ValidationError as e:
        raise ConfigurationError(f"Invalid sweep grid {path}: {e.messages}") from e
    return list(itertools.product(grid["rho"], grid["lam"]))


# ---------------------------------------------------------------------------
# Clips
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClipJob:
    clip_id: str
    wav: Optional[Path] = None
    mel: Optional[Path] = None


@dataclass
class PreparedClip:
    """Mel target, optional reference magnitude and signal length of one clip"""
    clip_id: str
    mel: MelGram
    reference: Optional[MagnitudeGram]
    length: Optional[int]
    sample_rate: int


@dataclass
class ClipOutcome:
    clip_id: str
    scm_db: Optional[float] = None
    sc_db: Optional[float] = None
    objective: Optional[float] = None
    wall_clock_ms: float = 0.0
    error: Optional[str] = None
    trace: Optional[pd.DataFrame] = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.error is None

    @classmethod
    def from_report(cls, report: MetricReport, wall_clock_ms: float,
                    trace: Optional[pd.DataFrame] = None) -> "ClipOutcome":
        return cls(report.clip_id, report.scm_db, report.sc_db, report.objective, wall_clock_ms, trace=trace)


def expand_paths(paths, suffixes: tuple) -> list:
    """Files named directly, plus matching files inside named directories, by filename"""
    found = []
    for entry in paths:
        entry = Path(entry)
        if entry.is_dir():
            found.extend(p for p in entry.iterdir() if p.is_file() and p.suffix.lower() in suffixes)
        else:
            found.append(entry)
    return sorted(set(found), key=lambda p: (p.name, str(p)))


def collect_clips(spec: RunSpec) -> list:
    """
    Clip jobs in filename order

    With --mel-in, each mel file is a clip; a WAV input with the same stem is
    its reference.
    """
    wavs = expand_paths(spec.inputs, (".wav",))
    if spec.mel_in is None:
        jobs = [ClipJob(p.stem, wav=p) for p in wavs]
    else:
        by_stem = {p.stem: p for p in wavs}
        jobs = [ClipJob(p.stem, wav=by_stem.get(p.stem), mel=p)
                for p in expand_paths([spec.mel_in], (".csv", ".bin"))]

    if not jobs:
        raise ConfigurationError("No input clips found")
    ids = [job.clip_id for job in jobs]
    duplicates = sorted({clip_id for clip_id in ids if ids.count(clip_id) > 1})
    if duplicates:
        raise ConfigurationError(f"Duplicate clip ids: {duplicates}")
    return jobs


def _read_checked(path: Path, sample_rate: int) -> Signal:
    signal = read_wav(path)
    if signal.sample_rate != sample_rate:
        raise AudioIOError(f"{path} is sampled at {signal.sample_rate} Hz, configuration expects {sample_rate} Hz")
    return signal


def prepare_clip(job: ClipJob, geometry: Geometry) -> PreparedClip:
    """Load or compute the mel target of one clip"""
    config, fb = geometry.config, geometry.filterbank
    signal = _read_checked(job.wav, geometry.sample_rate) if job.wav is not None else None
    reference = MagnitudeGram(stft(signal, config).magnitude()) if signal is not None else None
    length = len(signal) if signal is not None else None

    if job.mel is None:
        return PreparedClip(job.clip_id, mel_compress(reference, fb), reference, length, geometry.sample_rate)

    mel, sidecar = load_mel(job.mel)
    if sidecar is not None:
        expected = (geometry.sample_rate, config.window_length, config.hop_length)
        if (sidecar.sample_rate, sidecar.window, sidecar.hop) != expected:
            raise AudioIOError(f"{job.mel} was computed with sample_rate/window/hop "
                               f"{(sidecar.sample_rate, sidecar.window, sidecar.hop)}, run uses {expected}")
    if mel.shape[0] != fb.n_mels:
        raise AudioIOError(f"{job.mel} has {mel.shape[0]} mel bins, filterbank has {fb.n_mels}")
    if signal is not None and config.frame_count(length) != mel.n_frames:
        raise AudioIOError(f"{job.mel} has {mel.n_frames} frames, {job.wav} spans {config.frame_count(length)}")
    if signal is None and config.signal_length(mel.n_frames) < 1:
        raise AudioIOError(f"{job.mel} has too few frames ({mel.n_frames}) to span a signal")

    return PreparedClip(job.clip_id, mel, reference, length, geometry.sample_rate)


def reconstruct(clip: PreparedClip, spec: RunSpec, algo: AlgoConfig, geometry: Geometry) -> tuple:
    """
    Run the chosen algorithm on one prepared clip

    Returns:
        (reconstructed Signal, ClipOutcome)
    """
    start = time.perf_counter()
    Z, trace = run_algorithm(spec.algorithm, clip.mel, geometry.filterbank, geometry.config, algo,
                             clip.length, clip.reference, spec.init, spec.timing,
                             lsq_iters=spec.cascade_iters)
    xhat = istft(Z, sample_rate=clip.sample_rate)
    report = score_reconstruction(clip.clip_id, xhat, clip.mel, geometry.filterbank, geometry.config,
                                  clip.reference, trace.final().objective)
    elapsed = (time.perf_counter() - start) * 1000.0 if spec.timing else 0.0
    return xhat, ClipOutcome.from_report(report, elapsed, trace.to_frame())


def _invert_one(job: ClipJob, spec: RunSpec, algo: AlgoConfig, geometry: Geometry) -> ClipOutcome:
    out_dir = Path(spec.out_dir)
    logger.info(f"Reconstructing {job.clip_id} with {spec.algorithm}")
    try:
        clip = prepare_clip(job, geometry)
        xhat, outcome = reconstruct(clip, spec, algo, geometry)
        write_wav(out_dir / f"{job.clip_id}.wav", xhat)
        write_table(out_dir / f"{job.clip_id}.trace.csv", outcome.trace)
    except Exception as e:
        logger.error(f"Clip {job.clip_id} failed: {e}")
        return ClipOutcome(job.clip_id, error=str(e))

    logger.info(f"Finished {job.clip_id}: scm={outcome.scm_db:.2f} dB")
    return outcome


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def summary_frame(outcomes: list, algorithm: str) -> pd.DataFrame:
    rows = [[o.clip_id, algorithm, o.scm_db, o.sc_db, o.objective, o.wall_clock_ms, o.error]
            for o in outcomes]
    frame = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
    return frame.astype({"scm_db": float, "sc_db": float, "objective": float, "wall_clock_ms": float})


def mean_trace_frame(outcomes: list) -> pd.DataFrame:
    """Per-iteration mean and median SCM over successful clips"""
    traces = [o.trace for o in outcomes if o.ok and o.trace is not None]
    if not traces:
        return pd.DataFrame(columns=["iteration", "mean_scm_db", "median_scm_db", "mean_sc_db"])
    combined = pd.concat(traces, ignore_index=True)
    return combined.groupby("iteration", sort=True).agg(
        mean_scm_db=("scm_db", "mean"),
        median_scm_db=("scm_db", "median"),
        mean_sc_db=("sc_db", "mean"),
    ).reset_index()


def summary_stats_frame(summary: pd.DataFrame) -> pd.DataFrame:
    """Five-number summary (plus mean) of the final metrics"""
    rows = []
    for metric in ("scm_db", "sc_db"):
        values = summary[metric].dropna()
        if values.empty:
            continue
        rows.append({
            "metric": metric,
            "count": int(values.size),
            "min": values.min(),
            "q1": values.quantile(0.25),
            "median": values.median(),
            "q3": values.quantile(0.75),
            "max": values.max(),
            "mean": values.mean(),
        })
    return pd.DataFrame(rows, columns=["metric", "count", "min", "q1", "median", "q3", "max", "mean"])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def run_invert(spec: RunSpec, settings: Optional[Settings] = None) -> int:
    """
    Reconstruct every clip of a run and write its artifacts

    Returns:
        Exit status: 0 when every clip succeeded, 1 otherwise
    """
    settings = settings or Settings()
    geometry = spec.geometry()
    algo = spec.algo_config()
    jobs = collect_clips(spec)
    width = settings.worker_count(spec.jobs)
    out_dir = Path(spec.out_dir)

    if spec.sweep is not None:
        return _run_sweep(spec, jobs, algo, geometry, width)

    logger.info(f"Inverting {len(jobs)} clips with {spec.algorithm} ({algo.iters} iterations, {width} workers)")
    with ThreadPoolExecutor(max_workers=width) as pool:
        outcomes = list(pool.map(lambda job: _invert_one(job, spec, algo, geometry), jobs))

    summary = summary_frame(outcomes, spec.algorithm)
    write_table(out_dir / "summary.csv", summary)
    write_table(out_dir / "mean_trace.csv", mean_trace_frame(outcomes))
    write_table(out_dir / "summary_stats.csv", summary_stats_frame(summary))

    failed = sum(not o.ok for o in outcomes)
    if failed:
        logger.error(f"{failed} of {len(outcomes)} clips failed")
        return EXIT_FAILURE
    logger.info(f"Wrote artifacts for {len(outcomes)} clips to {out_dir}")
    return EXIT_OK


def _sweep_one(clip, spec: RunSpec, algo: AlgoConfig, geometry: Geometry) -> ClipOutcome:
    if isinstance(clip, ClipOutcome):
        return clip
    try:
        _, outcome = reconstruct(clip, spec, algo, geometry)
        return outcome
    except Exception as e:
        logger.error(f"Clip {clip.clip_id} failed at rho={algo.rho} lambda={algo.lam}: {e}")
        return ClipOutcome(clip.clip_id, error=str(e))


def _prepare_or_fail(job: ClipJob, geometry: Geometry):
    try:
        return prepare_clip(job, geometry)
    except Exception as e:
        logger.error(f"Clip {job.clip_id} failed: {e}")
        return ClipOutcome(job.clip_id, error=str(e))


def _run_sweep(spec: RunSpec, jobs: list, algo: AlgoConfig, geometry: Geometry, width: int) -> int:
    """Every (rho, lambda) grid point over every clip"""
    grid = load_sweep_grid(spec.sweep)
    out_dir = Path(spec.out_dir)
    clip_rows, grid_rows = [], []
    failed = 0

    logger.info(f"Sweeping {len(grid)} grid points over {len(jobs)} clips")
    with ThreadPoolExecutor(max_workers=width) as pool:
        prepared = list(pool.map(lambda job: _prepare_or_fail(job, geometry), jobs))
        for rho, lam in grid:
            point = replace(algo, rho=rho, lam=lam)
            outcomes = list(pool.map(lambda clip: _sweep_one(clip, spec, point, geometry), prepared))
            failed += sum(not o.ok for o in outcomes)

            for o in outcomes:
                clip_rows.append([rho, lam, o.clip_id, o.scm_db, o.sc_db, o.objective, o.error])
            scm_values = pd.Series([o.scm_db for o in outcomes if o.ok], dtype=float)
            sc_values = pd.Series([o.sc_db for o in outcomes if o.ok and o.sc_db is not None], dtype=float)
            grid_rows.append([rho, lam, int(scm_values.size), len(outcomes) - int(scm_values.size),
                              scm_values.mean(), scm_values.median(), sc_values.mean(), sc_values.median()])
            logger.info(f"rho={rho} lambda={lam}: median scm={scm_values.median():.2f} dB")

    clips = pd.DataFrame(clip_rows, columns=SWEEP_CLIP_COLUMNS).astype(
        {"scm_db": float, "sc_db": float, "objective": float})
    write_table(out_dir / "sweep_clips.csv", clips)
    write_table(out_dir / "sweep.csv", pd.DataFrame(grid_rows, columns=SWEEP_COLUMNS))

    if failed:
        logger.error(f"{failed} clip runs failed during the sweep")
        return EXIT_FAILURE
    return EXIT_OK


def score_pair(reconstructed: Path, reference: Path, geometry: Geometry) -> tuple:
    """
    SCM and SC of a reconstructed WAV against its reference WAV

    The reconstruction is trimmed or zero-padded to the reference length when
    the two differ by at most one window.
    """
    config = geometry.config
    rec = read_wav(reconstructed)
    ref = _read_checked(reference, geometry.sample_rate)
    if rec.sample_rate != ref.sample_rate:
        raise AudioIOError(f"{reconstructed} is sampled at {rec.sample_rate} Hz, reference at {ref.sample_rate} Hz")
    if abs(len(rec) - len(ref)) > config.window_length:
        raise AudioIOError(f"{reconstructed} has {len(rec)} samples, reference has {len(ref)}")

    A = MagnitudeGram(stft(ref, config).magnitude())
    M = mel_compress(A, geometry.filterbank)
    xhat = Signal(fit_length(rec.samples, len(ref)), rec.sample_rate)
    report = score_reconstruction(reference.stem, xhat, M, geometry.filterbank, config, A)
    return report.scm_db, report.sc_db


def run_metrics(reconstructed, reference, geometry: Geometry, out) -> int:
    """
    Score reconstructed WAVs against references, paired by filename stem

    Either argument may be a single file or a directory.
    """
    rec_paths = expand_paths([reconstructed], (".wav",))
    ref_paths = expand_paths([reference], (".wav",))
    single = Path(reconstructed).is_file() and Path(reference).is_file()
    ref_by_stem = {p.stem: p for p in ref_paths}

    rows = []
    for path in rec_paths:
        ref = ref_paths[0] if single else ref_by_stem.get(path.stem)
        try:
            if ref is None:
                raise AudioIOError(f"No reference for {path.name}")
            scm_db, sc_db = score_pair(path, ref, geometry)
            rows.append([path.stem, scm_db, sc_db, None])
        except MelInvError as e:
            logger.error(f"Scoring {path.name} failed: {e}")
            rows.append([path.stem, None, None, str(e)])

    if not rows:
        raise ConfigurationError(f"No reconstructed WAV files in {reconstructed}")
    frame = pd.DataFrame(rows, columns=METRICS_COLUMNS).astype({"scm_db": float, "sc_db": float})
    write_table(out, frame)
    return EXIT_FAILURE if frame["error"].notna().any() else EXIT_OK


def run_compare(summary_a, summary_b, metric: str = "scm_db", out=None) -> int:
    """Paired t-test of one metric between two summary tables, clips matched by clip_id"""
    try:
        a = pd.read_csv(summary_a, dtype={"clip_id": str})
        b = pd.read_csv(summary_b, dtype={"clip_id": str})
    except (OSError, ValueError) as e:
        raise ConfigurationError(f"Cannot read summary tables: {e}") from e
    for name, table in (("A", a), ("B", b)):
        if "clip_id" not in table or metric not in table:
            raise ConfigurationError(f"Summary {name} lacks clip_id or {metric}")

    merged = a[["clip_id", metric]].merge(b[["clip_id", metric]], on="clip_id", suffixes=("_a", "_b"))
    merged = merged.dropna().sort_values("clip_id")
    try:
        report = paired_comparison(merged[f"{metric}_a"], merged[f"{metric}_b"])
    except InvalidInputError as e:
        logger.error(f"Comparison failed: {e}")
        return EXIT_FAILURE

    frame = pd.DataFrame([{"metric": metric, **asdict(report)}])
    if out is not None:
        write_table(out, frame)
    else:
        frame.to_csv(sys.stdout, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"{metric}: mean difference {report.mean_diff:.3f} over {report.n} clips (p={report.p_value:.3g})")
    return EXIT_OK


def run_mel_export(inputs, geometry: Geometry, out_dir, fmt: str = "csv") -> int:
    """Write the mel-spectrogram of each WAV in the import format --mel-in reads"""
    paths = expand_paths(inputs, (".wav",))
    if not paths:
        raise ConfigurationError("No input WAV files found")
    config = geometry.config
    failed = 0
    for path in paths:
        try:
            signal = _read_checked(path, geometry.sample_rate)
            M = mel_compress(MagnitudeGram(stft(signal, config).magnitude()), geometry.filterbank)
            sidecar = MelSidecar(M.shape[0], M.n_frames, geometry.sample_rate,
                                 config.window_length, config.hop_length)
            save_mel(Path(out_dir) / f"{path.stem}.{fmt}", M, sidecar)
        except MelInvError as e:
            logger.error(f"Mel export of {path.name} failed: {e}")
            failed += 1
    return EXIT_FAILURE if failed else EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _geometry_parent() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group("analysis geometry")
    group.add_argument("--preset", default=DEFAULT_PRESET, choices=sorted(PRESETS), help="Geometry preset")
    group.add_argument("--sample-rate", type=int, help="Expected sampling rate in Hz")
    group.add_argument("--window-ms", type=float, help="Window length in milliseconds")
    group.add_argument("--hop-ms", type=float, help="Hop length in milliseconds")
    group.add_argument("--mels", type=int, help="Number of mel bins")
    group.add_argument("--fmin", type=float, help="Lowest mel band edge in Hz")
    group.add_argument("--fmax", type=float, help="Highest mel band edge in Hz")
    group.add_argument("--filterbank", help="Imported filterbank matrix (.csv or .bin)")
    return parser


def _logging_parent() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
                        type=str.upper, help="Override MELINV_LOG_LEVEL")
    return parser


def build_parser() -> argparse.ArgumentParser:
    geometry, logging_opts = _geometry_parent(), _logging_parent()
    parser = argparse.ArgumentParser(prog="melinv", description="Phase and magnitude reconstruction from mel-spectrograms")
    commands = parser.add_subparsers(dest="command", required=True)

    invert = commands.add_parser("invert", parents=[geometry, logging_opts], help="Reconstruct audio")
    invert.add_argument("inputs", nargs="*", help="WAV files or directories")
    invert.add_argument("--algo", default="admm-joint", choices=ALGORITHMS, help="Reconstruction algorithm")
    invert.add_argument("--iters", type=int, help="Iteration count (default 500)")
    invert.add_argument("--rho", type=float, help="ADMM penalty parameter")
    invert.add_argument("--lambda", dest="lam", type=float, help="Mel-fit weight")
    invert.add_argument("--alpha", type=float, help="Inertial coefficient of ipalm-joint")
    invert.add_argument("--mu", type=float, help="Step size of pg-gla")
    invert.add_argument("--seed", type=int, default=0, help="Random-phase seed")
    invert.add_argument("--init", default="random_phase", choices=INIT_MODES, help="Initial phase")
    invert.add_argument("--trace-every", type=int, help="Trace period in iterations")
    invert.add_argument("--out-dir", help="Artifact directory (default MELINV_OUT_DIR)")
    invert.add_argument("--mel-in", help="Mel matrix file or directory to invert")
    invert.add_argument("--sweep", help="JSON grid of rho and lambda values")
    invert.add_argument("--jobs", type=int, default=1, help="Worker pool width (MELINV_THREADS overrides)")
    invert.add_argument("--no-timing", dest="timing", action="store_false",
                        help="Write 0 in timing columns so tables are identical across runs")
    invert.add_argument("--cascade-iters", type=int, default=DEFAULT_LSQ_ITERS,
                        help="Iteration cap of the cascade's mel-to-full-band solve")

    metrics = commands.add_parser("metrics", parents=[geometry, logging_opts], help="Score reconstructions")
    metrics.add_argument("--reconstructed", required=True, help="Reconstructed WAV file or directory")
    metrics.add_argument("--reference", required=True, help="Reference WAV file or directory")
    metrics.add_argument("--out", help="Output CSV (default <out-dir>/metrics.csv)")

    compare = commands.add_parser("compare", parents=[logging_opts], help="Paired t-test of two summaries")
    compare.add_argument("summary_a")
    compare.add_argument("summary_b")
    compare.add_argument("--metric", default="scm_db", choices=["scm_db", "sc_db"])
    compare.add_argument("--out", help="Output CSV (default stdout)")

    synth = commands.add_parser("synth", parents=[logging_opts], help="Write the synthetic corpus")
    synth.add_argument("out_dir")
    synth.add_argument("--count", type=int, default=10)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--duration", type=float, default=1.0)
    synth.add_argument("--sample-rate", type=int, default=16000)

    mel = commands.add_parser("mel", parents=[geometry, logging_opts], help="Export mel-spectrograms")
    mel.add_argument("inputs", nargs="+", help="WAV files or directories")
    mel.add_argument("--out-dir", required=True)
    mel.add_argument("--format", default="csv", choices=["csv", "bin"])

    return parser


def _geometry_from_args(args) -> Geometry:
    return resolve_geometry(args.preset, args.sample_rate, args.window_ms, args.hop_ms,
                            args.mels, args.fmin, args.fmax, args.filterbank)


def _cmd_invert(args, settings: Settings) -> int:
    spec = load_run_spec({
        "inputs": args.inputs, "algorithm": args.algo, "out_dir": args.out_dir or settings.OUT_DIR,
        "preset": args.preset, "sample_rate": args.sample_rate, "window_ms": args.window_ms,
        "hop_ms": args.hop_ms, "n_mels": args.mels, "f_min": args.fmin, "f_max": args.fmax,
        "filterbank": args.filterbank, "iters": args.iters, "rho": args.rho, "lam": args.lam,
        "alpha": args.alpha, "mu": args.mu, "seed": args.seed, "init": args.init,
        "trace_every": args.trace_every, "mel_in": args.mel_in, "sweep": args.sweep,
        "jobs": args.jobs, "timing": args.timing, "cascade_iters": args.cascade_iters,
    })
    return run_invert(spec, settings)


def _cmd_metrics(args, settings: Settings) -> int:
    for path in (args.reconstructed, args.reference):
        if not Path(path).exists():
            raise ConfigurationError(f"Path does not exist: {path}")
    out = args.out or str(Path(settings.OUT_DIR) / "metrics.csv")
    return run_metrics(args.reconstructed, args.reference, _geometry_from_args(args), out)


def _cmd_compare(args, settings: Settings) -> int:
    return run_compare(args.summary_a, args.summary_b, args.metric, args.out)


def _cmd_synth(args, settings: Settings) -> int:
    try:
        write_corpus(args.out_dir, args.count, args.seed, args.duration, args.sample_rate)
    except InvalidInputError as e:
        raise ConfigurationError(str(e)) from e
    return EXIT_OK


def _cmd_mel(args, settings: Settings) -> int:
    return run_mel_export(args.inputs, _geometry_from_args(args), args.out_dir, args.format)


COMMANDS = {
    "invert": _cmd_invert,
    "metrics": _cmd_metrics,
    "compare": _cmd_compare,
    "synth": _cmd_synth,
    "mel": _cmd_mel,
}


def main(argv=None) -> int:
    """Entry point of `python -m melinv`"""
    args = build_parser().parse_args(argv)

    try:
        settings = Settings()
    except ValueError as e:
        print(f"melinv: {e}", file=sys.stderr)
        return EXIT_USAGE

    configure_logging(args.log_level or settings.LOG_LEVEL, settings.COLOR_LOGS)
    for problem in settings.validate_environment():
        logger.warning(problem)

    try:
        return COMMANDS[args.command](args, settings)
    except ConfigurationError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_USAGE
    except MelInvError as e:
        logger.error(str(e))
        return EXIT_FAILURE
