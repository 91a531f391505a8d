"""Dataset manifests: corpus scanning, deterministic splits, JSONL I/O.

Two corpus layouts are supported:

``stems``
    Song-level directories each holding a clean vocal stem and a
    background (accompaniment) stem::

        root/<song_id>/vocal.wav
        root/<song_id>/bgm.wav

    Songs are split into train/valid/test by ratio.  Background stems
    follow their song, so test-split backgrounds never leak into
    training augmentation.

``clean``
    Singer-level directories of clean vocal clips::

        root/<singer_id>/<clip>.wav

    A fixed number of singers is held out as the test split and the
    remaining clips are split train/valid by ratio.  Held-out singers
    never appear in train or valid.

Splits are deterministic: entities are sorted by id, then permuted by a
seeded generator, so the same corpus and seed always produce the same
manifest.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ManifestError, ParameterError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

SPLITS = ("train", "valid", "test")
ROLES = ("extractor_corpus", "in_set", "out_set")
LAYOUTS = ("stems", "clean")


@dataclass(frozen=True)
class ManifestEntry:
    """One clip of a corpus.

    ``bgm_path`` is the song's accompaniment stem when the layout
    provides one, else ``None``.  ``speed`` marks speed-perturbed copies
    (1.0 for originals).
    """

    vocal_path: str
    singer_id: str
    split: str
    role: str = "extractor_corpus"
    bgm_path: str | None = None
    speed: float = 1.0

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ManifestError(f"unknown split '{self.split}'")
        if self.role not in ROLES:
            raise ManifestError(f"unknown role '{self.role}'")
        if self.speed <= 0:
            raise ManifestError(f"speed must be positive, got {self.speed}")


@dataclass(frozen=True)
class DatasetSpec:
    """Split policy for :func:`build_manifest`.

    ``split_ratios`` must sum to 1 (within 1e-9); for the ``clean``
    layout the test share is realized by holding out whole singers
    (``holdout_singers`` of them) rather than by ratio.
    """

    seed: int
    split_ratios: dict[str, float] = field(
        default_factory=lambda: {"train": 2 / 3, "valid": 7 / 30, "test": 1 / 10}
    )
    holdout_singers: int = 4
    role: str = "extractor_corpus"

    def __post_init__(self):
        unknown = set(self.split_ratios) - set(SPLITS)
        if unknown:
            raise ParameterError(f"unknown split names {sorted(unknown)}")
        total = sum(self.split_ratios.values())
        if abs(total - 1.0) > 1e-9:
            raise ParameterError(f"split ratios must sum to 1, got {total!r}")
        if any(v < 0 for v in self.split_ratios.values()):
            raise ParameterError("split ratios must be non-negative")
        if self.role not in ROLES:
            raise ParameterError(f"unknown role '{self.role}'")


def _largest_remainder_counts(n: int, ratios: dict[str, float]) -> dict[str, int]:
    """Integer allocation of ``n`` items that respects ratio rounding.

    Floors each quota, then hands remaining items to the largest
    fractional remainders, ties broken by the fixed split order.
    """
    order = [s for s in SPLITS if s in ratios]
    quotas = {s: n * ratios[s] for s in order}
    counts = {s: int(np.floor(quotas[s])) for s in order}
    left = n - sum(counts.values())
    remainders = sorted(order, key=lambda s: (-(quotas[s] - counts[s]), order.index(s)))
    for s in remainders[:left]:
        counts[s] += 1
    return counts


def _scan_stems(root: Path) -> list[tuple[str, Path, Path]]:
    songs = []
    for song_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        vocal = song_dir / "vocal.wav"
        bgm = song_dir / "bgm.wav"
        if vocal.exists() and bgm.exists():
            songs.append((song_dir.name, vocal, bgm))
        else:
            log.warning("skipping '%s': expected vocal.wav and bgm.wav", song_dir)
    return songs


def _scan_clean(root: Path) -> dict[str, list[Path]]:
    singers = {}
    for singer_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        clips = sorted(singer_dir.glob("*.wav"))
        if clips:
            singers[singer_dir.name] = clips
        else:
            log.warning("skipping '%s': no wav clips", singer_dir)
    return singers


def build_manifest(corpus_root: str | Path, layout: str, spec: DatasetSpec) -> list[ManifestEntry]:
    """Scan a corpus directory and assign deterministic splits.

    An empty or missing corpus yields an empty manifest with a warning
    rather than an error, so callers can compose corpora optional-first.
    """
    if layout not in LAYOUTS:
        raise ParameterError(f"unknown layout '{layout}' (expected one of {LAYOUTS})")
    root = Path(corpus_root)
    if not root.is_dir():
        log.warning("corpus root '%s' does not exist; manifest is empty", root)
        return []
    rng = np.random.default_rng(spec.seed)
    entries: list[ManifestEntry] = []

    if layout == "stems":
        songs = _scan_stems(root)
        if not songs:
            log.warning("no songs found under '%s'", root)
            return []
        perm = rng.permutation(len(songs))
        counts = _largest_remainder_counts(len(songs), spec.split_ratios)
        assigned = []
        for split in SPLITS:
            assigned.extend([split] * counts.get(split, 0))
        for pos, split in zip(perm, assigned):
            song_id, vocal, bgm = songs[pos]
            entries.append(
                ManifestEntry(
                    vocal_path=str(vocal),
                    singer_id=song_id,
                    split=split,
                    role=spec.role,
                    bgm_path=str(bgm),
                )
            )
    else:
        singers = _scan_clean(root)
        if not singers:
            log.warning("no singers found under '%s'", root)
            return []
        names = sorted(singers)
        if spec.holdout_singers >= len(names):
            raise ManifestError(
                f"cannot hold out {spec.holdout_singers} of {len(names)} singers"
            )
        perm = rng.permutation(len(names))
        held_out = {names[i] for i in perm[: spec.holdout_singers]}
        ratios = {k: v for k, v in spec.split_ratios.items() if k != "test"}
        total = sum(ratios.values())
        if total <= 0:
            raise ParameterError("clean layout requires positive train/valid ratios")
        ratios = {k: v / total for k, v in ratios.items()}
        for singer in names:
            clips = singers[singer]
            if singer in held_out:
                for clip in clips:
                    entries.append(
                        ManifestEntry(str(clip), singer, "test", spec.role)
                    )
                continue
            sub = rng.permutation(len(clips))
            counts = _largest_remainder_counts(len(clips), ratios)
            assigned = []
            for split in SPLITS:
                assigned.extend([split] * counts.get(split, 0))
            for pos, split in zip(sub, assigned):
                entries.append(ManifestEntry(str(clips[pos]), singer, split, spec.role))

    entries.sort(key=lambda e: e.vocal_path)
    validate_manifest(entries)
    return entries


def with_speed_copies(
    entries: list[ManifestEntry], factors: tuple[float, ...]
) -> list[ManifestEntry]:
    """Add speed-perturbed copies of every train-split entry.

    Copies carry the factor in their ``speed`` field; materialization
    happens at load time, not at manifest time.
    """
    out = list(entries)
    for factor in factors:
        if factor <= 0:
            raise ParameterError(f"speed factor must be positive, got {factor}")
        if factor == 1.0:
            continue
        for entry in entries:
            if entry.split != "train":
                continue
            out.append(
                ManifestEntry(
                    entry.vocal_path,
                    entry.singer_id,
                    entry.split,
                    entry.role,
                    entry.bgm_path,
                    speed=factor,
                )
            )
    out.sort(key=lambda e: (e.vocal_path, e.speed))
    return out


def validate_manifest(entries: list[ManifestEntry]) -> None:
    """Check cross-entry consistency.

    Raises if any singer appears both in the test split and a training
    split, or if the same (path, speed) pair occurs twice.
    """
    test_singers = {e.singer_id for e in entries if e.split == "test"}
    train_singers = {e.singer_id for e in entries if e.split != "test" and e.role != "in_set"}
    overlap = test_singers & train_singers
    if overlap:
        raise ManifestError(
            f"singers appear in both test hold-out and train/valid: {sorted(overlap)}"
        )
    seen = set()
    for e in entries:
        key = (e.vocal_path, e.speed)
        if key in seen:
            raise ManifestError(f"duplicate manifest entry: {key}")
        seen.add(key)


def save_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    """Write entries as JSON lines, one record per clip."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for entry in entries:
            record = {"schema_version": SCHEMA_VERSION, **asdict(entry)}
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Read a JSONL manifest, validating schema version and consistency."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    entries = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            version = record.pop("schema_version", None)
            if version != SCHEMA_VERSION:
                raise ManifestError(
                    f"{path}:{lineno}: unsupported schema version {version!r}"
                )
            try:
                entries.append(ManifestEntry(**record))
            except TypeError as exc:
                raise ManifestError(f"{path}:{lineno}: bad record: {exc}") from exc
    validate_manifest(entries)
    return entries
