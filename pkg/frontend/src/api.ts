// Typed client for the territory service. Every call is appended to a log
// so a session can be replayed against a fresh service and compared.

export interface Authorship {
  authors: string[];
  timestamp: string;
}

export interface PieceRecord {
  id: string;
  kind: string;
  content: string;
  public: boolean;
  authorships: Authorship[];
  edge_kind?: string;
  source?: string;
  target?: string;
  label?: string;
  reverse_label?: string;
  aliases?: string[];
}

export interface PiecesDocument {
  mmm_version: string;
  pieces: PieceRecord[];
}

export interface FindingRecord {
  piece: string;
  code: string;
  severity: string;
}

export interface FrontierEntryRecord {
  id: string;
  via: string;
  locator: string;
  kind: string;
  edge_kind?: string;
  measures: Record<string, number>;
}

export interface FrontierResponse {
  entries: FrontierEntryRecord[];
  peer_errors: [string, string][];
}

export interface GateDecisionRecord {
  verdict: string;
  fired_rule: string | null;
}

export interface InboxItemRecord {
  offer_id: string;
  from: string;
  status: string;
  pieces: PieceRecord[];
  decisions: Record<string, GateDecisionRecord>;
}

export interface TopographyPoint {
  piece: string;
  x: number;
  y: number;
  height: number;
}

export interface StepResponse {
  decision: GateDecisionRecord;
  applied: boolean;
  pieces: string[];
}

export interface SearchResponse {
  result: "served" | "path_required" | "no_match";
  piece?: PieceRecord;
  entries?: FrontierEntryRecord[];
}

export interface AnnotateResponse {
  node: PieceRecord;
  edge: PieceRecord;
}

export interface LoggedCall {
  method: string;
  path: string;
  body: unknown;
  contentType: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

const MUTATING = new Set(["POST", "PUT", "DELETE"]);

export class ApiClient {
  readonly log: LoggedCall[] = [];

  constructor(readonly base: string) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
    contentType = "application/json",
  ): Promise<T> {
    if (MUTATING.has(method)) {
      this.log.push({ method, path, body: body ?? null, contentType });
    }
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "Content-Type": contentType };
      init.body = contentType === "text/plain" ? String(body) : JSON.stringify(body);
    }
    const resp = await fetch(this.base + path, init);
    const text = await resp.text();
    const isJson = (resp.headers.get("Content-Type") ?? "").includes("json");
    if (!resp.ok) {
      const detail = isJson && text ? JSON.parse(text) : { error: "HTTP", message: text };
      throw new ApiError(resp.status, detail.error ?? "HTTP", detail.message ?? text);
    }
    if (!text) return undefined as T;
    return (isJson ? JSON.parse(text) : text) as T;
  }

  replay(call: LoggedCall): Promise<unknown> {
    return this.request(call.method, call.path, call.body ?? undefined, call.contentType);
  }

  // reads
  pieces(): Promise<PiecesDocument> {
    return this.request("GET", "/pieces");
  }

  async piecesRaw(): Promise<string> {
    const resp = await fetch(this.base + "/pieces");
    return resp.text();
  }

  findings(): Promise<{ findings: FindingRecord[] }> {
    return this.request("GET", "/findings");
  }

  frontier(): Promise<FrontierResponse> {
    return this.request("GET", "/frontier");
  }

  inbox(): Promise<{ items: InboxItemRecord[] }> {
    return this.request("GET", "/inbox");
  }

  rules(): Promise<string> {
    return this.request("GET", "/rules");
  }

  topography(measure: string): Promise<{ measure: string; grid: TopographyPoint[] }> {
    return this.request("GET", `/topography?measure=${encodeURIComponent(measure)}`);
  }

  measures(id: string, names: string[]): Promise<{ id: string; measures: Record<string, number | null> }> {
    return this.request("GET", `/measures/${id}?names=${names.join(",")}`);
  }

  search(q: string): Promise<SearchResponse> {
    return this.request("GET", `/search?q=${encodeURIComponent(q)}`);
  }

  // mutations
  createPiece(body: {
    kind: string;
    content: string;
    label?: string;
    source?: string;
    target?: string;
  }): Promise<PieceRecord> {
    return this.request("POST", "/pieces", body);
  }

  annotate(body: {
    anchor: string;
    edge_kind: string;
    content: string;
    label?: string;
  }): Promise<AnnotateResponse> {
    return this.request("POST", "/annotate", body);
  }

  setPublic(id: string): Promise<PieceRecord> {
    return this.request("POST", `/pieces/${id}/public`);
  }

  deletePiece(id: string): Promise<void> {
    return this.request("DELETE", `/pieces/${id}`);
  }

  flag(id: string, code: string): Promise<unknown> {
    return this.request("POST", `/pieces/${id}/flag`, { code });
  }

  step(entry: FrontierEntryRecord): Promise<StepResponse> {
    return this.request("POST", "/step", {
      id: entry.id,
      via: entry.via,
      locator: entry.locator,
    });
  }

  saveRules(text: string): Promise<void> {
    return this.request("PUT", "/rules", text, "text/plain");
  }

  acceptOffer(offerId: string, ids?: string[]): Promise<{ accepted: string[] }> {
    return this.request("POST", `/inbox/${offerId}/accept`, ids ? { ids } : {});
  }

  rejectOffer(offerId: string, reason = "owner rejected"): Promise<unknown> {
    return this.request("POST", `/inbox/${offerId}/reject`, { reason });
  }

  merge(keep: string, absorb: string): Promise<PieceRecord> {
    return this.request("POST", "/merge", { keep, absorb });
  }

  offer(to: string, root: string, glueRadius = 1): Promise<unknown> {
    return this.request("POST", "/offer", { to, root, glue_radius: glueRadius });
  }
}
