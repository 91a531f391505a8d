"""Pitch-contour evaluation and SNR-controlled test sets.

Converted audio has no ground-truth alignment with its source, so both
pitch metrics are alignment-based:

``f0rmse``
    Each contour (frames voiced in *both* tracks) is min-max normalized
    independently, then compared by RMSE.  Invariant to affine scaling
    of either contour; lower is better.

``f0corr``
    The voiced subsequences of the two tracks are aligned with dynamic
    time warping on log-f0 and scored by the Pearson correlation of the
    aligned pairs; higher is better.

Both return ``None`` with a reason when undefined (no voiced overlap or
zero variance) instead of inventing a number; aggregate reports carry
the undefined cases explicitly.

Robustness evaluation runs on SNR-controlled mixtures: each clean test
clip is mixed with a test-split background at a level cycling through
the requested SNRs, so any clip count splits across levels as evenly as
arithmetic allows.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__ as package_version
from .alignment import align
from .audio import AudioClip, read_wav, write_wav
from .dsp import MixResult, mix_at_snr
from .errors import CompositionError, ParameterError
from .pitch import FrameTrack

log = logging.getLogger(__name__)

TESTSET_SCHEMA = 1
REPORT_SCHEMA = 1


@dataclass(frozen=True)
class MetricValue:
    """A metric that may be undefined; ``reason`` says why when it is."""

    value: float | None
    reason: str = ""

    @property
    def defined(self) -> bool:
        return self.value is not None


def _overlap(source: FrameTrack, converted: FrameTrack) -> tuple[np.ndarray, np.ndarray]:
    n = min(len(source), len(converted))
    mask = source.vuv[:n] & converted.vuv[:n]
    return source.f0_hz[:n][mask], converted.f0_hz[:n][mask]


def _minmax(contour: np.ndarray) -> np.ndarray:
    lo = contour.min()
    span = contour.max() - lo
    if span <= 0:
        return np.zeros_like(contour)
    return (contour - lo) / span


def f0rmse(source: FrameTrack, converted: FrameTrack) -> MetricValue:
    """Root mean squared error of independently min-max normalized
    contours over frames voiced in both tracks.

    A constant contour normalizes to zeros; two constant contours give
    0 regardless of their levels.  Undefined when no frame is voiced in
    both tracks.
    """
    a, b = _overlap(source, converted)
    if a.size == 0:
        return MetricValue(None, "no frames voiced in both tracks")
    err = _minmax(a) - _minmax(b)
    return MetricValue(float(np.sqrt(np.mean(err**2))))


def f0corr(source: FrameTrack, converted: FrameTrack, space: str = "log") -> MetricValue:
    """Pearson correlation of DTW-aligned voiced contours.

    The voiced subsequences are taken independently from each track,
    aligned by dynamic time warping (absolute difference on log2 f0 by
    default, linear Hz with ``space="hz"``), and correlated over the
    aligned pairs.  Undefined when either track has fewer than two
    voiced frames or an aligned contour has zero variance.
    """
    if space not in ("log", "hz"):
        raise ParameterError(f"unknown contour space '{space}'")
    x = source.f0_hz[source.vuv]
    y = converted.f0_hz[converted.vuv]
    if x.size < 2 or y.size < 2:
        return MetricValue(None, "fewer than two voiced frames in a track")
    if space == "log":
        x = np.log2(x)
        y = np.log2(y)
    ax, ay, _ = align(x, y)
    sx = ax.std()
    sy = ay.std()
    if sx <= 0 or sy <= 0:
        return MetricValue(None, "aligned contour has zero variance")
    corr = float(np.mean((ax - ax.mean()) * (ay - ay.mean())) / (sx * sy))
    return MetricValue(min(1.0, max(-1.0, corr)))


def centered_cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Mean per-frame cosine between two feature matrices, each centered
    over time first.

    Centering removes the constant component every frame shares, so the
    score reflects how well the frame-to-frame trajectory survives a
    perturbation instead of saturating near 1 whenever features have a
    large common mean.  Frames beyond the shorter matrix are ignored.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ParameterError("feature matrices must be 2-D with matching width")
    n = min(a.shape[0], b.shape[0])
    if n == 0:
        raise ParameterError("cannot compare empty feature matrices")
    a = a[:n] - a[:n].mean(axis=0, keepdims=True)
    b = b[:n] - b[:n].mean(axis=0, keepdims=True)
    num = (a * b).sum(axis=1)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1) + 1e-12
    return float(np.mean(num / den))


# -- SNR-controlled test sets ------------------------------------------------


@dataclass(frozen=True)
class NoisyItem:
    """One evaluation input: a clean clip and its controlled mixture."""

    clip_id: str
    clean: AudioClip
    mixture: AudioClip
    snr_db: float
    measured_snr_db: float


@dataclass
class NoisyTestSet:
    """SNR-controlled mixtures with their clean sources."""

    items: list[NoisyItem]
    seed: int
    levels: tuple[float, ...]

    def count_per_level(self) -> dict[float, int]:
        counts = {level: 0 for level in self.levels}
        for item in self.items:
            counts[item.snr_db] += 1
        return counts


def build_noisy_testset(
    clean_clips: list[tuple[str, AudioClip]],
    bgm_pool: list[AudioClip],
    seed: int,
    levels: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0),
) -> NoisyTestSet:
    """Mix each clean clip at a level cycling through ``levels``.

    Clip ``i`` gets ``levels[i % len(levels)]``, so level counts differ
    by at most one for any clip count.  Background tracks and crop
    offsets are drawn from a generator seeded with ``seed``; the same
    inputs and seed always compose the same test set.
    """
    if not levels:
        raise CompositionError("at least one SNR level is required")
    if not clean_clips:
        raise CompositionError("cannot build a test set from zero clips")
    if not bgm_pool:
        raise CompositionError("test-split background pool is empty")
    rng = np.random.default_rng(seed)
    items = []
    for i, (clip_id, clean) in enumerate(clean_clips):
        level = float(levels[i % len(levels)])
        bgm = bgm_pool[int(rng.integers(len(bgm_pool)))]
        result: MixResult = mix_at_snr(clean, bgm, level, rng)
        items.append(
            NoisyItem(clip_id, clean, result.mixture, level, result.measured_snr_db)
        )
    return NoisyTestSet(items, seed, tuple(float(v) for v in levels))


def save_testset(testset: NoisyTestSet, out_dir: str | Path) -> Path:
    """Write mixtures, clean references, and an index JSONL."""
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    index = out_dir / "testset.jsonl"
    with index.open("w") as fh:
        fh.write(
            json.dumps(
                {
                    "schema_version": TESTSET_SCHEMA,
                    "seed": testset.seed,
                    "levels": list(testset.levels),
                },
                sort_keys=True,
            )
            + "\n"
        )
        for i, item in enumerate(testset.items):
            clean_path = out_dir / "audio" / f"{i:04d}_clean.wav"
            mix_path = out_dir / "audio" / f"{i:04d}_mix.wav"
            write_wav(clean_path, item.clean)
            write_wav(mix_path, item.mixture)
            fh.write(
                json.dumps(
                    {
                        "clip_id": item.clip_id,
                        "clean": clean_path.name,
                        "mixture": mix_path.name,
                        "snr_db": item.snr_db,
                        "measured_snr_db": item.measured_snr_db,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return index


def load_testset(index_path: str | Path) -> NoisyTestSet:
    """Read a test set written by :func:`save_testset`."""
    index_path = Path(index_path)
    if not index_path.exists():
        raise CompositionError(f"test set index not found: {index_path}")
    audio_dir = index_path.parent / "audio"
    with index_path.open() as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("schema_version") != TESTSET_SCHEMA:
        raise CompositionError(f"'{index_path}' is not a supported test set index")
    header = lines[0]
    items = []
    for record in lines[1:]:
        clean_samples, rate = read_wav(audio_dir / record["clean"])
        mix_samples, _ = read_wav(audio_dir / record["mixture"])
        items.append(
            NoisyItem(
                record["clip_id"],
                AudioClip(clean_samples, rate, source_id=record["clean"]),
                AudioClip(mix_samples, rate, source_id=record["mixture"]),
                float(record["snr_db"]),
                float(record["measured_snr_db"]),
            )
        )
    return NoisyTestSet(items, int(header["seed"]), tuple(float(v) for v in header["levels"]))


# -- aggregate evaluation -----------------------------------------------------


@dataclass
class MetricReport:
    """Aggregate pitch metrics over a test set."""

    f0rmse: float | None
    f0corr: float | None
    per_snr: dict[float, dict[str, float | None]]
    n_scored: int
    undefined: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA,
            "f0rmse": self.f0rmse,
            "f0corr": self.f0corr,
            "per_snr": {f"{k:g}": v for k, v in sorted(self.per_snr.items())},
            "n_scored": self.n_scored,
            "undefined": self.undefined,
            "failures": self.failures,
            "seed": self.seed,
            "tool_versions": _tool_versions(),
        }


def _tool_versions() -> dict[str, str]:
    import scipy
    import torch

    return {
        "melosvc": package_version,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "torch": torch.__version__,
    }


def _mean_or_none(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def evaluate(
    track_fn,
    testset: NoisyTestSet,
    reference_fn,
    space: str = "log",
) -> MetricReport:
    """Score a system over a noisy test set.

    ``track_fn(mixture_clip)`` must return the system's output pitch
    track for a mixture (for a conversion system: the converted audio's
    track); ``reference_fn(clean_clip)`` the reference track of the
    clean source.  Per-item exceptions are recorded as failures and do
    not abort the run.
    """
    rmse_values: list[float] = []
    corr_values: list[float] = []
    per_snr: dict[float, dict[str, list[float]]] = {
        level: {"f0rmse": [], "f0corr": []} for level in testset.levels
    }
    undefined: list[dict] = []
    failures: list[dict] = []
    scored = 0
    for item in testset.items:
        try:
            reference = reference_fn(item.clean)
            track = track_fn(item.mixture)
            rmse = f0rmse(reference, track)
            corr = f0corr(reference, track, space=space)
        except Exception as exc:
            log.warning("evaluation failed for '%s': %s", item.clip_id, exc)
            failures.append({"clip_id": item.clip_id, "error": str(exc)})
            continue
        scored += 1
        for name, metric in (("f0rmse", rmse), ("f0corr", corr)):
            if metric.defined:
                per_snr[item.snr_db][name].append(metric.value)
                (rmse_values if name == "f0rmse" else corr_values).append(metric.value)
            else:
                undefined.append(
                    {"clip_id": item.clip_id, "metric": name, "reason": metric.reason}
                )
    return MetricReport(
        f0rmse=_mean_or_none(rmse_values),
        f0corr=_mean_or_none(corr_values),
        per_snr={
            level: {name: _mean_or_none(vals) for name, vals in by_name.items()}
            for level, by_name in per_snr.items()
        },
        n_scored=scored,
        undefined=undefined,
        failures=failures,
        seed=testset.seed,
    )


def save_report(report: MetricReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- layer weight reporting ----------------------------------------------------


def layer_weight_table(checkpoints: dict[str, dict]) -> tuple[list[str], np.ndarray]:
    """Final layer weights per labelled checkpoint.

    Returns ``(labels, weights)`` with one row per checkpoint; rows are
    the effective weights, front-end first.
    """
    labels = sorted(checkpoints)
    rows = []
    width = None
    for label in labels:
        history = checkpoints[label].get("layer_weight_history") or []
        if not history:
            raise ParameterError(f"checkpoint '{label}' has no layer weight history")
        row = np.asarray(history[-1], dtype=np.float64)
        if width is None:
            width = row.shape[0]
        elif row.shape[0] != width:
            raise ParameterError("checkpoints have different layer counts")
        rows.append(row)
    return labels, np.stack(rows)


def write_layer_weight_report(
    checkpoints: dict[str, dict],
    csv_path: str | Path,
    png_path: str | Path | None = None,
) -> None:
    """CSV (and optional grouped-bar PNG) of final layer weights.

    Layer 0 is the convolutional front-end; 1..L the Transformer
    layers.  Comparing a pretrained-frozen run against a fine-tuned one
    shows where the melody information moved.
    """
    labels, weights = layer_weight_table(checkpoints)
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w") as fh:
        fh.write("label,layer,weight\n")
        for label, row in zip(labels, weights):
            for layer, value in enumerate(row):
                fh.write(f"{label},{layer},{value:.8f}\n")
    if png_path is None:
        return
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n_layers = weights.shape[1]
    x = np.arange(n_layers)
    width = 0.8 / max(len(labels), 1)
    fig, ax = plt.subplots(figsize=(8, 4))
    for i, (label, row) in enumerate(zip(labels, weights)):
        ax.bar(x + i * width - 0.4 + width / 2, row, width, label=label)
    ax.set_xlabel("backbone layer (0 = conv front-end)")
    ax.set_ylabel("weight")
    ax.set_xticks(x)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
