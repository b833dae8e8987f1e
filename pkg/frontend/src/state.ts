// UI state is a pure projection of service responses plus in-flight edits.
// Every state change corresponds to exactly one service call; refresh
// re-derives everything, so replaying the client's call log against a
// fresh service reproduces the same territory.

import {
  ApiClient,
  ApiError,
  FindingRecord,
  FrontierEntryRecord,
  InboxItemRecord,
  PieceRecord,
} from "./api.js";

export interface Overlay {
  measure: string;
  heights: Map<string, number>;
  coords: Map<string, { x: number; y: number }>;
  maxHeight: number;
}

export interface UiState {
  pieces: Map<string, PieceRecord>;
  findings: FindingRecord[];
  frontier: FrontierEntryRecord[];
  peerErrors: [string, string][];
  inbox: InboxItemRecord[];
  rulesText: string;
  ruleError: string | null;
  selected: string | null;
  overlay: Overlay;
  notice: string | null;
}

export function emptyState(): UiState {
  return {
    pieces: new Map(),
    findings: [],
    frontier: [],
    peerErrors: [],
    inbox: [],
    rulesText: "",
    ruleError: null,
    selected: null,
    overlay: { measure: "depth", heights: new Map(), coords: new Map(), maxHeight: 0 },
    notice: null,
  };
}

export class UiSession {
  state: UiState = emptyState();

  constructor(readonly api: ApiClient) {}

  async refresh(): Promise<UiState> {
    const [doc, findings, frontier, inbox, rulesText] = await Promise.all([
      this.api.pieces(),
      this.api.findings(),
      this.api.frontier().catch(() => ({ entries: [], peer_errors: [] as [string, string][] })),
      this.api.inbox(),
      this.api.rules(),
    ]);
    const pieces = new Map(doc.pieces.map((p) => [p.id, p]));
    this.state = {
      ...this.state,
      pieces,
      findings: findings.findings,
      frontier: frontier.entries,
      peerErrors: frontier.peer_errors,
      inbox: inbox.items,
      rulesText,
      selected: this.state.selected && pieces.has(this.state.selected) ? this.state.selected : null,
    };
    await this.loadOverlay(this.state.overlay.measure);
    return this.state;
  }

  async loadOverlay(measure: string): Promise<void> {
    const topo = await this.api.topography(measure);
    const heights = new Map<string, number>();
    const coords = new Map<string, { x: number; y: number }>();
    let max = 0;
    for (const point of topo.grid) {
      heights.set(point.piece, point.height);
      coords.set(point.piece, { x: point.x, y: point.y });
      max = Math.max(max, point.height);
    }
    this.state = { ...this.state, overlay: { measure, heights, coords, maxHeight: max } };
  }

  select(id: string | null): void {
    this.state = { ...this.state, selected: id, notice: null };
  }

  // previews carry kind and measures only; content arrives when stepped
  async step(entry: FrontierEntryRecord): Promise<void> {
    try {
      const outcome = await this.api.step(entry);
      if (!outcome.applied) {
        this.state = {
          ...this.state,
          notice: `step rejected by rule: ${outcome.decision.fired_rule ?? "(unnamed)"}`,
        };
      } else {
        this.state = { ...this.state, notice: `stepped onto ${entry.id.slice(0, 8)}` };
      }
    } catch (err) {
      if (err instanceof ApiError && err.code === "NOT_FOUND") {
        this.state = { ...this.state, notice: "entry is stale, refreshing frontier" };
      } else {
        throw err;
      }
    }
    await this.refresh();
  }

  async annotate(anchor: string, edgeKind: string, content: string, label?: string): Promise<void> {
    await this.api.annotate({ anchor, edge_kind: edgeKind, content, label });
    await this.refresh();
  }

  async saveRules(text: string): Promise<boolean> {
    try {
      await this.api.saveRules(text);
    } catch (err) {
      if (err instanceof ApiError) {
        this.state = { ...this.state, ruleError: `${err.code}: ${err.message}` };
        return false;
      }
      throw err;
    }
    this.state = { ...this.state, ruleError: null };
    await this.refresh();
    return true;
  }

  async acceptOffer(offerId: string): Promise<void> {
    await this.api.acceptOffer(offerId);
    await this.refresh();
  }

  async rejectOffer(offerId: string): Promise<void> {
    await this.api.rejectOffer(offerId);
    await this.refresh();
  }

  async flag(id: string, code: string): Promise<void> {
    await this.api.flag(id, code);
    await this.refresh();
  }

  async setPublic(id: string): Promise<void> {
    await this.api.setPublic(id);
    await this.refresh();
  }

  async createPiece(kind: string, content: string, label?: string): Promise<void> {
    await this.api.createPiece({ kind, content, label });
    await this.refresh();
  }
}
