import { FilterMode, LabelDecision, LabelResponse, Stats, TriageItem } from "./types.js";

export class ApiError extends Error {
  constructor(message: string, public readonly status: number) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** What the controller needs from the service; ApiClient is the live one. */
export interface LabelingApi {
  queueNext(count: number, reviewer: string, filter?: FilterMode): Promise<TriageItem[]>;
  postLabel(decision: LabelDecision): Promise<LabelResponse>;
  stats(): Promise<Stats>;
  imageUrl(item: TriageItem): string;
}

/** Thin JSON client over the labeling service endpoints. */
export class ApiClient implements LabelingApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let detail = "";
      try {
        const doc = (await response.json()) as { error?: string };
        detail = doc.error ?? "";
      } catch {
        // non-JSON error body; status alone will have to do
      }
      throw new ApiError(detail || `${method} ${path} failed (${response.status})`, response.status);
    }
    return (await response.json()) as T;
  }

  queueNext(count: number, reviewer: string, filter: FilterMode = "unlabeled"): Promise<TriageItem[]> {
    const params = new URLSearchParams({
      count: String(count),
      reviewer,
      filter,
    });
    return this.request<TriageItem[]>("GET", `/api/queue/next?${params}`);
  }

  postLabel(decision: LabelDecision): Promise<LabelResponse> {
    return this.request<LabelResponse>("POST", "/api/labels", decision);
  }

  stats(): Promise<Stats> {
    return this.request<Stats>("GET", "/api/stats");
  }

  imageUrl(item: TriageItem): string {
    return `${this.baseUrl}${item.image_url}`;
  }
}
