// Wire types for the labeling service API (schema version 1).

export type Label = "rider" | "non_rider";

export type FilterMode = "unlabeled" | "labeled" | "disagreement";

export interface BoxContext {
  frame_id: string;
  box: number[] | null;
}

export interface TriageItem {
  segment_id: string;
  image_url: string;
  model_suggestion: number | null;
  current_label: Label | null;
  context: BoxContext;
  lease_expires_at: number;
}

export interface StoreCounts {
  pending: number;
  rider: number;
  non_rider: number;
}

export interface LabelResponse {
  segment_id: string;
  label: Label;
  labeled_by: string;
  labeled_at: string;
  counts: StoreCounts;
}

export interface Stats {
  pending: number;
  labeled: Record<string, number>;
  per_reviewer: Record<string, number>;
  balance_ratio: number;
  audit_entries: number;
  total_segments: number;
}

export interface LabelDecision {
  segment_id: string;
  label: Label;
  reviewer: string;
  client_timestamp?: string;
}
