"""Semi-automatic dataset pipeline: harvest person crops with the detector,
stage them for human triage, record label decisions, and emit balanced
train/test manifests.

Storage layout under the store root:

    records.jsonl   one line per staged segment (immutable after creation)
    audit.jsonl     append-only label events; current labels replay from here
    crops/          raw extended-region pixels, PNG for harvested segments

A label is durable once its audit line hits disk, so a crash between
decisions loses nothing.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from PIL import Image

from .detector import detect_persons
from .errors import GeometryError, ManifestError, RiderScopeError, SegmentNotFound, StoreError
from .geometry import BoundingBox, extend_region
from .imaging import Frame, extract_crop, preprocess_crop, save_png
from .labels import CLASS_LABELS, NON_RIDER, RIDER, UNLABELED
from .trainer import TrainingSet, split_dataset

logger = logging.getLogger(__name__)

RECORD_SCHEMA_VERSION = 1

ORIGIN_HARVESTED = "harvested"
ORIGIN_WEB_IMPORT = "web_import"

__all__ = [
    "SegmentRecord",
    "SegmentStore",
    "DatasetManifest",
    "HarvestSummary",
    "harvest_segments",
    "import_web_images",
    "build_manifest",
    "write_manifest",
    "read_manifest",
    "training_set_from_records",
    "verify_store",
]


@dataclass(frozen=True)
class SegmentRecord:
    """One staged image segment with provenance and label state."""

    segment_id: str
    source_frame_id: str
    interaction_id: str
    box: BoundingBox | None
    extended_box: BoundingBox | None
    frame_size: tuple[int, int] | None
    crop_path: str
    label: str = UNLABELED
    origin: str = ORIGIN_HARVESTED
    labeled_by: str | None = None
    labeled_at: str | None = None
    suggestion: float | None = None
    created_at: str = ""

    def to_json_dict(self) -> dict:
        return {
            "v": RECORD_SCHEMA_VERSION,
            "segment_id": self.segment_id,
            "source_frame_id": self.source_frame_id,
            "interaction_id": self.interaction_id,
            "box": self.box.as_list() if self.box else None,
            "extended_box": self.extended_box.as_list() if self.extended_box else None,
            "frame_size": list(self.frame_size) if self.frame_size else None,
            "crop_path": self.crop_path,
            "label": self.label,
            "origin": self.origin,
            "labeled_by": self.labeled_by,
            "labeled_at": self.labeled_at,
            "suggestion": self.suggestion,
            "created_at": self.created_at,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SegmentRecord":
        return cls(
            segment_id=doc["segment_id"],
            source_frame_id=doc["source_frame_id"],
            interaction_id=doc["interaction_id"],
            box=BoundingBox.from_list(doc["box"]) if doc.get("box") else None,
            extended_box=BoundingBox.from_list(doc["extended_box"]) if doc.get("extended_box") else None,
            frame_size=tuple(doc["frame_size"]) if doc.get("frame_size") else None,
            crop_path=doc["crop_path"],
            label=doc.get("label", UNLABELED),
            origin=doc.get("origin", ORIGIN_HARVESTED),
            labeled_by=doc.get("labeled_by"),
            labeled_at=doc.get("labeled_at"),
            suggestion=doc.get("suggestion"),
            created_at=doc.get("created_at", ""),
        )


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def harvested_segment_id(frame_id: str, box: BoundingBox) -> str:
    key = f"{frame_id}|{box.x:.2f}|{box.y:.2f}|{box.w:.2f}|{box.h:.2f}"
    return "seg-" + hashlib.sha1(key.encode("utf-8")).hexdigest()[:16]


class SegmentStore:
    """Single-writer segment store over a directory; readers see a live index."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.records_path = self.root / "records.jsonl"
        self.audit_path = self.root / "audit.jsonl"
        self.crops_dir = self.root / "crops"
        self._lock = threading.Lock()
        self._records: dict[str, SegmentRecord] = {}
        self._audit_count = 0
        try:
            self.crops_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StoreError(f"store root {self.root} is not writable: {exc}") from exc
        self._load()

    def _load(self) -> None:
        if self.records_path.exists():
            with self.records_path.open("r", encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        record = SegmentRecord.from_json_dict(json.loads(line))
                    except (KeyError, ValueError) as exc:
                        raise StoreError(f"{self.records_path}:{line_no}: bad record: {exc}") from exc
                    self._records[record.segment_id] = record
        if self.audit_path.exists():
            with self.audit_path.open("r", encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        event = json.loads(line)
                        self._apply_label(event["segment_id"], event["label"],
                                          event.get("labeled_by"), event.get("labeled_at"))
                    except (KeyError, ValueError) as exc:
                        raise StoreError(f"{self.audit_path}:{line_no}: bad audit event: {exc}") from exc
                    self._audit_count += 1

    def _apply_label(self, segment_id: str, label: str, labeled_by, labeled_at) -> SegmentRecord:
        record = self._records.get(segment_id)
        if record is None:
            raise SegmentNotFound(f"unknown segment id: {segment_id}")
        if label not in CLASS_LABELS:
            raise StoreError(f"invalid label {label!r}; expected one of {CLASS_LABELS}")
        updated = replace(record, label=label, labeled_by=labeled_by, labeled_at=labeled_at)
        self._records[segment_id] = updated
        return updated

    def _append(self, path: Path, doc: dict) -> None:
        with path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(doc) + "\n")
            fh.flush()

    # -- mutations ----------------------------------------------------------

    def add_segment(self, record: SegmentRecord) -> bool:
        """Stage a new segment; returns False when the id already exists."""
        with self._lock:
            if record.segment_id in self._records:
                return False
            self._append(self.records_path, record.to_json_dict())
            self._records[record.segment_id] = record
            return True

    def record_label(self, segment_id: str, label: str, labeled_by: str,
                     client_timestamp: str | None = None) -> SegmentRecord:
        """Persist a label decision atomically and append its audit event."""
        with self._lock:
            if segment_id not in self._records:
                raise SegmentNotFound(f"unknown segment id: {segment_id}")
            labeled_at = _utc_now()
            event = {
                "v": RECORD_SCHEMA_VERSION,
                "segment_id": segment_id,
                "label": label,
                "labeled_by": labeled_by,
                "labeled_at": labeled_at,
            }
            if client_timestamp is not None:
                event["client_timestamp"] = client_timestamp
            updated = self._apply_label(segment_id, label, labeled_by, labeled_at)
            self._append(self.audit_path, event)
            self._audit_count += 1
            return updated

    # -- queries -------------------------------------------------------------

    def get(self, segment_id: str) -> SegmentRecord:
        record = self._records.get(segment_id)
        if record is None:
            raise SegmentNotFound(f"unknown segment id: {segment_id}")
        return record

    def __contains__(self, segment_id: str) -> bool:
        return segment_id in self._records

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[SegmentRecord]:
        return list(self._records.values())

    def unlabeled_records(self) -> list[SegmentRecord]:
        return [r for r in self._records.values() if r.label == UNLABELED]

    def counts(self) -> dict[str, int]:
        out = {UNLABELED: 0, RIDER: 0, NON_RIDER: 0}
        for record in self._records.values():
            out[record.label] += 1
        return out

    def reviewer_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for record in self._records.values():
            if record.label != UNLABELED and record.labeled_by:
                out[record.labeled_by] = out.get(record.labeled_by, 0) + 1
        return out

    @property
    def audit_entries(self) -> int:
        return self._audit_count

    def crop_file(self, segment_id: str) -> Path:
        return self.root / self.get(segment_id).crop_path


@dataclass
class HarvestSummary:
    frames: int = 0
    staged: int = 0
    duplicates: int = 0
    dropped_regions: int = 0
    detector_errors: int = 0


def _default_interaction(frame_id: str) -> str:
    return frame_id.split("/", 1)[0]


def harvest_segments(
    frames: Iterable[Frame],
    detector,
    store: SegmentStore,
    interaction_for: Callable[[str], str] | None = None,
    classifier=None,
) -> HarvestSummary:
    """Stage one unlabeled segment per person detection, crops written to disk.

    Re-harvesting the same frames is a no-op: segment ids derive from
    (frame id, rounded box). Detector failures skip the frame and are counted,
    not raised. When a classifier is supplied, its score is stored as a triage
    suggestion.
    """
    interaction_for = interaction_for or _default_interaction
    summary = HarvestSummary()
    for frame in frames:
        summary.frames += 1
        try:
            detections = detect_persons(detector, frame)
        except RiderScopeError as exc:
            logger.warning("harvest: detector failed on frame %s: %s", frame.frame_id, exc)
            summary.detector_errors += 1
            continue
        for detection in detections.detections:
            try:
                region = extend_region(detection.box, frame.dims)
            except GeometryError as exc:
                logger.warning("harvest: dropping degenerate region on %s: %s", frame.frame_id, exc)
                summary.dropped_regions += 1
                continue
            segment_id = harvested_segment_id(frame.frame_id, detection.box)
            if segment_id in store:
                summary.duplicates += 1
                continue
            raw = extract_crop(frame, region)
            crop_rel = f"crops/{segment_id}.png"
            save_png(raw, store.root / crop_rel)
            suggestion = None
            if classifier is not None:
                from .imaging import CropBatch

                crop = preprocess_crop(raw, region, frame.frame_id)
                suggestion = float(classifier.predict_batch(CropBatch([crop]))[0].score)
            record = SegmentRecord(
                segment_id=segment_id,
                source_frame_id=frame.frame_id,
                interaction_id=interaction_for(frame.frame_id),
                box=detection.box,
                extended_box=region.box,
                frame_size=(frame.dims.width, frame.dims.height),
                crop_path=crop_rel,
                origin=ORIGIN_HARVESTED,
                suggestion=suggestion,
                created_at=_utc_now(),
            )
            store.add_segment(record)
            summary.staged += 1
    return summary


_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


def import_web_images(directory: str | Path, label: str, store: SegmentStore,
                      imported_by: str = "web_import") -> int:
    """Import a directory of already-labeled images, one segment per unique file.

    Files are deduplicated by content hash and stored unresized; scaling to the
    classifier input happens at training time. Unreadable files are skipped
    with a warning.
    """
    if label not in CLASS_LABELS:
        raise StoreError(f"invalid label {label!r}; expected one of {CLASS_LABELS}")
    directory = Path(directory)
    if not directory.is_dir():
        raise StoreError(f"import directory not found: {directory}")
    imported = 0
    for path in sorted(directory.iterdir()):
        if not path.is_file() or path.suffix.lower() not in _IMAGE_SUFFIXES:
            continue
        data = path.read_bytes()
        try:
            with Image.open(path) as img:
                img.verify()
        except Exception as exc:
            logger.warning("import: skipping unreadable image %s: %s", path, exc)
            continue
        segment_id = "web-" + hashlib.sha256(data).hexdigest()[:16]
        if segment_id in store:
            continue
        crop_rel = f"crops/{segment_id}{path.suffix.lower()}"
        shutil.copyfile(path, store.root / crop_rel)
        record = SegmentRecord(
            segment_id=segment_id,
            source_frame_id=path.name,
            interaction_id=segment_id,
            box=None,
            extended_box=None,
            frame_size=None,
            crop_path=crop_rel,
            origin=ORIGIN_WEB_IMPORT,
            created_at=_utc_now(),
        )
        store.add_segment(record)
        store.record_label(segment_id, label, labeled_by=imported_by)
        imported += 1
    return imported


@dataclass
class DatasetManifest:
    """Labeled records with their interaction-level train/test assignment."""

    records: list[SegmentRecord]
    split_of_interaction: dict[str, str]
    counts: dict[str, dict[str, int]]

    def split_records(self, split: str) -> list[SegmentRecord]:
        return [r for r in self.records if self.split_of_interaction[r.interaction_id] == split]


def build_manifest(store: SegmentStore, balance: bool = True, train_fraction: float = 0.85,
                   seed: int = 0) -> DatasetManifest:
    """Assemble the labeled dataset: optional class balancing, then an
    interaction-grouped train/test split.

    Balancing undersamples the majority class (seeded, without replacement) to
    the minority count. Unlabeled records never enter the manifest.
    """
    labeled = [r for r in store.records() if r.label in CLASS_LABELS]
    by_class = {label: [r for r in labeled if r.label == label] for label in CLASS_LABELS}
    for label, records in by_class.items():
        if not records:
            raise ManifestError(f"cannot build a manifest with zero {label!r} records")
    missing = [r.segment_id for r in labeled if not (store.root / r.crop_path).exists()]
    if missing:
        raise ManifestError(f"labeled records missing crop files: {', '.join(sorted(missing)[:10])}")

    if balance:
        minority = min(len(records) for records in by_class.values())
        rng = np.random.default_rng([seed, 0xBA1A])
        kept_ids = set()
        for label, records in by_class.items():
            if len(records) > minority:
                chosen = rng.choice(len(records), size=minority, replace=False)
                kept_ids.update(records[i].segment_id for i in chosen)
            else:
                kept_ids.update(r.segment_id for r in records)
        labeled = [r for r in labeled if r.segment_id in kept_ids]

    train, test = split_dataset(labeled, train_fraction, seed)
    split_of_interaction: dict[str, str] = {}
    for r in train:
        split_of_interaction[r.interaction_id] = "train"
    for r in test:
        split_of_interaction[r.interaction_id] = "test"
    counts = {
        "train": {RIDER: sum(1 for r in train if r.label == RIDER),
                  NON_RIDER: sum(1 for r in train if r.label == NON_RIDER)},
        "test": {RIDER: sum(1 for r in test if r.label == RIDER),
                 NON_RIDER: sum(1 for r in test if r.label == NON_RIDER)},
    }
    return DatasetManifest(records=train + test, split_of_interaction=split_of_interaction, counts=counts)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in manifest.records:
            doc = record.to_json_dict()
            doc["split"] = manifest.split_of_interaction[record.interaction_id]
            fh.write(json.dumps(doc) + "\n")


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    records: list[SegmentRecord] = []
    split_of_interaction: dict[str, str] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                record = SegmentRecord.from_json_dict(doc)
                split = doc["split"]
            except (KeyError, ValueError) as exc:
                raise ManifestError(f"{path}:{line_no}: bad manifest line: {exc}") from exc
            records.append(record)
            split_of_interaction[record.interaction_id] = split
    if not records:
        raise ManifestError(f"manifest is empty: {path}")
    counts = {
        split: {
            RIDER: sum(1 for r in records if r.label == RIDER and split_of_interaction[r.interaction_id] == split),
            NON_RIDER: sum(1 for r in records if r.label == NON_RIDER and split_of_interaction[r.interaction_id] == split),
        }
        for split in ("train", "test")
    }
    return DatasetManifest(records=records, split_of_interaction=split_of_interaction, counts=counts)


def training_set_from_records(records: list[SegmentRecord], store_root: str | Path) -> TrainingSet:
    """Load and preprocess the crops behind manifest records into arrays."""
    store_root = Path(store_root)
    crops = []
    labels = []
    ids = []
    for record in records:
        path = store_root / record.crop_path
        try:
            with Image.open(path) as img:
                raw = np.asarray(img.convert("RGB"), dtype=np.uint8)
        except Exception as exc:
            raise ManifestError(f"cannot read crop for segment {record.segment_id}: {exc}") from exc
        crops.append(preprocess_crop(raw).values)
        labels.append(1 if record.label == RIDER else 0)
        ids.append(record.segment_id)
    if not crops:
        raise ManifestError("no records to build a training set from")
    return TrainingSet(crops=np.stack(crops), labels=np.array(labels), segment_ids=ids)


def verify_store(store: SegmentStore) -> list[str]:
    """Recompute extension geometry for every harvested record; returns problems."""
    problems = []
    for record in store.records():
        if record.origin != ORIGIN_HARVESTED or record.box is None or record.frame_size is None:
            continue
        from .geometry import FrameDims

        expected = extend_region(record.box, FrameDims(*record.frame_size)).box
        actual = record.extended_box
        if actual is None or any(
            abs(a - b) > 1e-9 for a, b in zip(expected.as_list(), actual.as_list())
        ):
            problems.append(f"{record.segment_id}: stored extended box does not match recomputation")
        if not (store.root / record.crop_path).exists():
            problems.append(f"{record.segment_id}: crop file missing")
    return problems
