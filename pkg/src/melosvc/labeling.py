"""Ground-truth pitch labels by multi-estimator fusion.

A single pitch estimator has tool-specific failure modes (octave
errors, dropouts), so labels are fused from three independent
estimators per frame: voicing by majority vote, pitch by the median of
the voiced estimates.  When exactly two estimators agree a frame is
voiced, their geometric mean is used, which is the natural midpoint on
a log-frequency axis.

Labels are cached per clip content hash, so re-running labelling on an
unchanged corpus is a no-op and moving files does not invalidate the
cache.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioClip, content_hash, ingest
from .dsp import speed_perturb
from .errors import AlignmentError, LabelError, ParameterError
from .manifest import ManifestEntry
from .pitch import DEFAULT_EXTRACTORS, FrameTrack, get_extractor

log = logging.getLogger(__name__)

CACHE_SCHEMA = 1


def median_fuse(tracks: list[FrameTrack]) -> FrameTrack:
    """Fuse exactly three frame tracks into one label track.

    A frame is voiced when at least two estimators voice it.  Its pitch
    is the median of the three estimates when all agree it is voiced,
    and the geometric mean of the two voiced estimates when one
    estimator abstains.  The result is invariant to the order of the
    inputs and stays within the range spanned by them.
    """
    if len(tracks) != 3:
        raise ParameterError(f"median fusion expects exactly 3 tracks, got {len(tracks)}")
    length = len(tracks[0])
    hop = tracks[0].hop_samples
    for t in tracks[1:]:
        if len(t) != length:
            raise AlignmentError(f"track lengths disagree: {length} vs {len(t)}")
        if t.hop_samples != hop:
            raise AlignmentError(f"track hops disagree: {hop} vs {t.hop_samples}")
    f0 = np.stack([t.f0_hz for t in tracks])
    vuv = np.stack([t.vuv for t in tracks])
    votes = vuv.sum(axis=0)
    fused_vuv = votes >= 2

    med = np.median(f0, axis=0)
    # With one abstention the abstainer contributes f0 = 0; the product
    # of the remaining two voiced values survives the mask below.
    prod = np.where(vuv, f0, 1.0).prod(axis=0)
    geo = np.sqrt(np.maximum(prod, 0.0))
    fused_f0 = np.where(votes == 3, med, np.where(votes == 2, geo, 0.0))
    return FrameTrack(np.where(fused_vuv, fused_f0, 0.0), fused_vuv, hop_samples=hop)


def label_clip(clip: AudioClip, extractor_names: tuple[str, ...] = DEFAULT_EXTRACTORS) -> FrameTrack:
    """Run the named estimators on a clean clip and fuse their tracks."""
    if len(extractor_names) != 3:
        raise ParameterError("labelling uses exactly three estimators")
    tracks = [get_extractor(name).extract(clip) for name in extractor_names]
    return median_fuse(tracks)


def entry_key(entry: ManifestEntry) -> str:
    """Stable dataset key for a manifest entry, speed copies included."""
    if entry.speed == 1.0:
        return entry.vocal_path
    return f"{entry.vocal_path}@x{entry.speed:g}"


def load_entry_clip(entry: ManifestEntry) -> AudioClip:
    """Ingest a manifest entry's vocal, materializing speed copies."""
    clip = ingest(entry.vocal_path)
    if entry.speed != 1.0:
        clip = speed_perturb(clip, entry.speed)
    return clip


@dataclass
class LabelResult:
    """Fused tracks keyed by :func:`entry_key` plus per-clip failures."""

    tracks: dict[str, FrameTrack]
    failed: list[tuple[str, str]]


def _cache_path(cache_dir: Path, digest: str) -> Path:
    return cache_dir / f"{digest}.npz"


def _load_cached(path: Path, extractor_names: tuple[str, ...]) -> FrameTrack | None:
    try:
        with np.load(path, allow_pickle=False) as data:
            if int(data["schema"]) != CACHE_SCHEMA:
                return None
            if str(data["extractors"]) != ",".join(extractor_names):
                return None
            return FrameTrack(data["f0"], data["vuv"], hop_samples=int(data["hop"]))
    except Exception:
        log.warning("ignoring unreadable label cache file %s", path)
        return None


def label_corpus(
    entries: list[ManifestEntry],
    cache_dir: str | Path,
    extractor_names: tuple[str, ...] = DEFAULT_EXTRACTORS,
) -> LabelResult:
    """Label every entry, reusing cached tracks by clip content hash.

    Clips that fail to load or label are reported in ``failed`` and
    excluded from the returned mapping; one bad file does not abort a
    corpus run.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    tracks: dict[str, FrameTrack] = {}
    failed: list[tuple[str, str]] = []
    index_path = cache_dir / "index.jsonl"
    index_rows = []
    for entry in entries:
        key = entry_key(entry)
        try:
            clip = load_entry_clip(entry)
            digest = content_hash(clip)
            path = _cache_path(cache_dir, digest)
            track = _load_cached(path, extractor_names) if path.exists() else None
            if track is None:
                track = label_clip(clip, extractor_names)
                np.savez(
                    path,
                    f0=track.f0_hz,
                    vuv=track.vuv,
                    hop=track.hop_samples,
                    extractors=",".join(extractor_names),
                    schema=CACHE_SCHEMA,
                )
            tracks[key] = track
            index_rows.append({"key": key, "hash": digest, "frames": len(track)})
        except Exception as exc:
            log.warning("labelling failed for '%s': %s", key, exc)
            failed.append((key, str(exc)))
    with index_path.open("w") as fh:
        for row in sorted(index_rows, key=lambda r: r["key"]):
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    if failed and not tracks:
        raise LabelError(f"labelling failed for all {len(failed)} clips")
    return LabelResult(tracks, failed)
