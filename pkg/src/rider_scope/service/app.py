"""HTTP API for the human triage workflow over a segment store.

Reviewers pull pending crops from a queue, commit rider / non-rider
decisions, and watch progress stats. Items handed to one reviewer are leased
for a configurable period so concurrent reviewers never see the same crop.
All store writes funnel through the store's single-writer lock; every label
is durable on disk before the response goes out.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from threading import Lock

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .. import SCHEMA_VERSION
from ..dataset import SegmentStore, build_manifest, write_manifest
from ..errors import ManifestError, SegmentNotFound
from ..labels import NON_RIDER, RIDER, UNLABELED
from .schemas import (
    BoxContext,
    HealthModel,
    LabelDecisionModel,
    LabelResponseModel,
    ManifestBuildRequest,
    ManifestSummaryModel,
    SplitCounts,
    StatsModel,
    StoreCounts,
    TriageItemModel,
)

ORDER_CONFIDENT_FIRST = "confident"
ORDER_UNCERTAIN_FIRST = "uncertain"

__all__ = ["ServiceSettings", "LeaseTable", "create_app"]


@dataclass
class ServiceSettings:
    lease_seconds: float = 300.0
    queue_order: str = ORDER_CONFIDENT_FIRST
    ui_dist: Path | None = None
    manifest_path: Path | None = None


class LeaseTable:
    """Tracks which segments are checked out to a reviewer right now."""

    def __init__(self, duration: float):
        self.duration = duration
        self._leases: dict[str, tuple[str, float]] = {}
        self._lock = Lock()

    def acquire(self, segment_id: str, reviewer: str, now: float) -> float:
        with self._lock:
            expires = now + self.duration
            self._leases[segment_id] = (reviewer, expires)
            return expires

    def is_leased(self, segment_id: str, now: float) -> bool:
        with self._lock:
            entry = self._leases.get(segment_id)
            return entry is not None and entry[1] > now

    def release(self, segment_id: str) -> None:
        with self._lock:
            self._leases.pop(segment_id, None)


def _suggestion_sort_key(order: str):
    if order == ORDER_UNCERTAIN_FIRST:
        return lambda r: abs((r.suggestion if r.suggestion is not None else 0.5) - 0.5)
    return lambda r: -abs((r.suggestion if r.suggestion is not None else 0.5) - 0.5)


def create_app(store: SegmentStore, settings: ServiceSettings | None = None) -> FastAPI:
    settings = settings or ServiceSettings()
    leases = LeaseTable(settings.lease_seconds)
    app = FastAPI(title="rider-scope labeling service")
    app.state.store = store
    app.state.leases = leases
    app.state.settings = settings

    @app.middleware("http")
    async def add_schema_header(request: Request, call_next):
        response = await call_next(request)
        response.headers["X-Schema-Version"] = str(SCHEMA_VERSION)
        return response

    @app.exception_handler(RequestValidationError)
    async def validation_to_400(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "malformed request", "detail": exc.errors()})

    @app.exception_handler(SegmentNotFound)
    async def segment_404(request: Request, exc: SegmentNotFound):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    def _counts() -> StoreCounts:
        counts = store.counts()
        return StoreCounts(pending=counts[UNLABELED], rider=counts[RIDER], non_rider=counts[NON_RIDER])

    @app.get("/api/health", response_model=HealthModel)
    def health() -> HealthModel:
        return HealthModel(status="ok", store=str(store.root), segments=len(store))

    def _queue_records(filter_mode: str):
        if filter_mode == "labeled":
            return [r for r in store.records() if r.label != UNLABELED]
        if filter_mode == "disagreement":
            return [
                r for r in store.records()
                if r.label != UNLABELED and r.suggestion is not None
                and (r.suggestion >= 0.5) != (r.label == RIDER)
            ]
        return store.unlabeled_records()

    @app.get("/api/queue/next", response_model=list[TriageItemModel])
    def queue_next(count: int = 1, reviewer: str = "anonymous",
                   filter: str = "unlabeled") -> list[TriageItemModel]:
        if count <= 0:
            return JSONResponse(status_code=400, content={"error": "count must be positive"})
        if filter not in ("unlabeled", "labeled", "disagreement"):
            return JSONResponse(status_code=400, content={"error": f"unknown filter {filter!r}"})
        now = time.time()
        pending = _queue_records(filter)
        if any(r.suggestion is not None for r in pending):
            pending = sorted(pending, key=_suggestion_sort_key(settings.queue_order))
        items: list[TriageItemModel] = []
        for record in pending:
            if len(items) >= count:
                break
            if leases.is_leased(record.segment_id, now):
                continue
            expires = leases.acquire(record.segment_id, reviewer, now)
            items.append(
                TriageItemModel(
                    segment_id=record.segment_id,
                    image_url=f"/api/segments/{record.segment_id}/image",
                    model_suggestion=record.suggestion,
                    current_label=None if record.label == UNLABELED else record.label,
                    context=BoxContext(
                        frame_id=record.source_frame_id,
                        box=record.box.as_list() if record.box else None,
                    ),
                    lease_expires_at=expires,
                )
            )
        return items

    @app.post("/api/labels", response_model=LabelResponseModel)
    def post_label(decision: LabelDecisionModel) -> LabelResponseModel:
        record = store.record_label(
            decision.segment_id,
            decision.label,
            labeled_by=decision.reviewer,
            client_timestamp=decision.client_timestamp,
        )
        leases.release(decision.segment_id)
        return LabelResponseModel(
            segment_id=record.segment_id,
            label=record.label,
            labeled_by=record.labeled_by or "",
            labeled_at=record.labeled_at or "",
            counts=_counts(),
        )

    @app.get("/api/stats", response_model=StatsModel)
    def stats() -> StatsModel:
        counts = store.counts()
        class_counts = {RIDER: counts[RIDER], NON_RIDER: counts[NON_RIDER]}
        largest = max(class_counts.values())
        smallest = min(class_counts.values())
        return StatsModel(
            pending=counts[UNLABELED],
            labeled=class_counts,
            per_reviewer=store.reviewer_counts(),
            balance_ratio=(smallest / largest) if largest else 0.0,
            audit_entries=store.audit_entries,
            total_segments=len(store),
        )

    @app.get("/api/segments/{segment_id}/image")
    def segment_image(segment_id: str):
        path = store.crop_file(segment_id)
        if not path.exists():
            return JSONResponse(status_code=404, content={"error": f"crop file missing for {segment_id}"})
        media_type = "image/png" if path.suffix.lower() == ".png" else "image/jpeg"
        return FileResponse(path, media_type=media_type)

    @app.post("/api/manifest/build", response_model=ManifestSummaryModel)
    def manifest_build(request: ManifestBuildRequest):
        try:
            manifest = build_manifest(
                store, balance=request.balance, train_fraction=request.train_fraction, seed=request.seed
            )
        except ManifestError as exc:
            return JSONResponse(status_code=409, content={"error": str(exc)})
        manifest_path = settings.manifest_path or (store.root / "manifest.jsonl")
        write_manifest(manifest, manifest_path)
        return ManifestSummaryModel(
            records=len(manifest.records),
            counts={
                split: SplitCounts(rider=c[RIDER], non_rider=c[NON_RIDER])
                for split, c in manifest.counts.items()
            },
            manifest_path=str(manifest_path),
        )

    if settings.ui_dist is not None and Path(settings.ui_dist).is_dir():
        app.mount("/", StaticFiles(directory=str(settings.ui_dist), html=True), name="ui")

    return app
