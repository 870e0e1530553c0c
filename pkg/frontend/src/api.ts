/** REST client for the annotation service. */

export interface CourtGeometry {
  width_ft: number;
  length_ft: number;
  basket_xy: [number, number];
  half_line_y: number;
}

export interface SessionInfo {
  session_id: string;
  annotator: string;
  cursor: number;
  queue_length: number;
  court: CourtGeometry;
  labels: string[];
  tally: Record<string, number>;
}

export interface SegmentObject {
  role: "ball" | "offense" | "defense";
  player_id: string;
  points: [number, number][];
}

export interface SegmentPayload {
  segment_id: string;
  dt: number;
  objects: SegmentObject[];
  weak_label: string | null;
  cursor?: number;
  queue_length?: number;
}

export interface QueueDone {
  done: true;
}

export interface LabelPost {
  segment_id: string;
  label: string;
  annotator: string;
  session_id?: string;
}

export interface LabelResult {
  stored: boolean;
  duplicate: boolean;
  tally: Record<string, number>;
}

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number | null = null,
  ) {
    super(message);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async get<T>(path: string): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path);
    } catch (err) {
      throw new ApiError(`network failure: ${err}`);
    }
    if (!response.ok) {
      throw new ApiError(`GET ${path} -> ${response.status}`, response.status);
    }
    return (await response.json()) as T;
  }

  session(params: {
    annotator?: string;
    session_id?: string;
    quota?: number;
    seed?: number;
  }): Promise<SessionInfo> {
    const query = new URLSearchParams();
    for (const [key, value] of Object.entries(params)) {
      if (value !== undefined) query.set(key, String(value));
    }
    return this.get<SessionInfo>(`/api/session?${query}`);
  }

  nextSegment(sessionId: string): Promise<SegmentPayload | QueueDone> {
    const query = new URLSearchParams({ session_id: sessionId });
    return this.get<SegmentPayload | QueueDone>(`/api/segments/next?${query}`);
  }

  segment(segmentId: string): Promise<SegmentPayload> {
    return this.get<SegmentPayload>(
      `/api/segments/${encodeURIComponent(segmentId)}`,
    );
  }

  async postLabel(body: LabelPost): Promise<LabelResult> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}/api/labels`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      });
    } catch (err) {
      throw new ApiError(`network failure: ${err}`);
    }
    if (!response.ok) {
      throw new ApiError(
        `POST /api/labels -> ${response.status}`,
        response.status,
      );
    }
    return (await response.json()) as LabelResult;
  }
}

/**
 * POST a label, retrying on network failures or 5xx responses.
 *
 * Validation failures (4xx) are surfaced immediately: retrying them would
 * never succeed. The server deduplicates by segment id, so replaying a
 * request whose response was lost still stores the label exactly once.
 */
export async function postLabelWithRetry(
  client: ApiClient,
  body: LabelPost,
  maxAttempts = 3,
  onRetry?: (attempt: number, error: ApiError) => void,
): Promise<LabelResult> {
  let lastError: ApiError | null = null;
  for (let attempt = 1; attempt <= maxAttempts; attempt++) {
    try {
      return await client.postLabel(body);
    } catch (err) {
      if (!(err instanceof ApiError)) throw err;
      if (err.status !== null && err.status < 500) throw err;
      lastError = err;
      if (onRetry && attempt < maxAttempts) onRetry(attempt, err);
    }
  }
  throw lastError ?? new ApiError("label post failed");
}
