// Entry point: wires the session to the DOM and polls for peer activity.
// Optimistic UI is forbidden: every handler awaits the service response
// and re-renders from the refreshed state.

import { ApiClient } from "./api.js";
import { Handlers, renderPanels, renderTerritory } from "./render.js";
import { UiSession } from "./state.js";

const params = new URLSearchParams(window.location.search);
const base = params.get("service") ?? "http://127.0.0.1:8765";

const api = new ApiClient(base);
const session = new UiSession(api);

const svg = document.getElementById("territory") as unknown as SVGSVGElement;
const panels = document.getElementById("panels") as HTMLElement;
const status = document.getElementById("status") as HTMLElement;

function draw(): void {
  renderTerritory(svg, session.state, handlers);
  renderPanels(panels, session.state, handlers);
  status.textContent = `${session.state.pieces.size} pieces @ ${base}`;
}

async function act(run: () => Promise<unknown>): Promise<void> {
  try {
    await run();
  } catch (err) {
    session.state = { ...session.state, notice: String(err) };
  }
  draw();
}

const handlers: Handlers = {
  onSelect: (id) => {
    session.select(id);
    draw();
  },
  onStep: (entry) => act(() => session.step(entry)),
  onAnnotate: (anchor, edgeKind, content, label) =>
    act(() => session.annotate(anchor, edgeKind, content, label)),
  onSaveRules: (text) => act(() => session.saveRules(text)),
  onAcceptOffer: (offerId) => act(() => session.acceptOffer(offerId)),
  onRejectOffer: (offerId) => act(() => session.rejectOffer(offerId)),
  onFlag: (id, code) => act(() => session.flag(id, code)),
  onPublic: (id) => act(() => session.setPublic(id)),
  onOverlay: (measure) => act(() => session.loadOverlay(measure)),
  onCreate: (kind, content) => act(() => session.createPiece(kind, content)),
};

async function start(): Promise<void> {
  await act(() => session.refresh());
  // polling keeps the frontier and inbox panels live between actions
  setInterval(() => act(() => session.refresh()), 4000);
}

start();
