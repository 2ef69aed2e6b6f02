"""Pydantic request/response models for the labeling service API."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class BoxContext(BaseModel):
    frame_id: str
    box: Optional[list[float]] = None


class TriageItemModel(BaseModel):
    segment_id: str
    image_url: str
    model_suggestion: Optional[float] = None
    current_label: Optional[str] = None
    context: BoxContext
    lease_expires_at: float


class LabelDecisionModel(BaseModel):
    segment_id: str
    label: Literal["rider", "non_rider"]
    reviewer: str = Field(min_length=1)
    client_timestamp: Optional[str] = None


class StoreCounts(BaseModel):
    pending: int
    rider: int
    non_rider: int


class LabelResponseModel(BaseModel):
    segment_id: str
    label: str
    labeled_by: str
    labeled_at: str
    counts: StoreCounts


class StatsModel(BaseModel):
    pending: int
    labeled: dict[str, int]
    per_reviewer: dict[str, int]
    balance_ratio: float
    audit_entries: int
    total_segments: int


class ManifestBuildRequest(BaseModel):
    balance: bool = True
    train_fraction: float = Field(default=0.85, gt=0.0, lt=1.0)
    seed: int = 0


class SplitCounts(BaseModel):
    rider: int
    non_rider: int


class ManifestSummaryModel(BaseModel):
    records: int
    counts: dict[str, SplitCounts]
    manifest_path: str


class HealthModel(BaseModel):
    status: str
    store: str
    segments: int
