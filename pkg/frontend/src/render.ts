// SVG and panel rendering. Pure DOM, re-drawn from UiState on every
// change; no state of its own beyond input fields being edited.

import { FrontierEntryRecord, PieceRecord } from "./api.js";
import { UiState } from "./state.js";

export interface Handlers {
  onSelect(id: string | null): void;
  onStep(entry: FrontierEntryRecord): void;
  onAnnotate(anchor: string, edgeKind: string, content: string, label?: string): void;
  onSaveRules(text: string): void;
  onAcceptOffer(offerId: string): void;
  onRejectOffer(offerId: string): void;
  onFlag(id: string, code: string): void;
  onPublic(id: string): void;
  onOverlay(measure: string): void;
  onCreate(kind: string, content: string): void;
}

const NODE_FILL: Record<string, string> = {
  narrative: "#f5e663",
  question: "#f0a441",
  existence: "#8fc7f2",
};

const EDGE_COLOR: Record<string, string> = {
  answers: "#c9a227",
  relate: "#555555",
  instantiates: "#7a4a9e",
  details: "#2c7f4f",
  nuances: "#b05577",
  questions: "#d07030",
  equates: "#3557b0",
  differsFrom: "#2e8055",
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

function svgEl(tag: string, attrs: Record<string, string> = {}): SVGElement {
  const node = document.createElementNS("http://www.w3.org/2000/svg", tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  return node;
}

function heightColor(height: number, max: number): string {
  if (max <= 0) return "#dddddd";
  const t = Math.min(1, height / max);
  const hue = 210 - 180 * t; // cool valleys, warm peaks
  return `hsl(${hue}, 70%, ${75 - 30 * t}%)`;
}

export function renderTerritory(svg: SVGSVGElement, state: UiState, handlers: Handlers): void {
  svg.innerHTML = "";
  const width = svg.clientWidth || 800;
  const height = svg.clientHeight || 520;
  if (state.pieces.size === 0) {
    const hint = svgEl("text", {
      x: String(width / 2),
      y: String(height / 2),
      "text-anchor": "middle",
      fill: "#888",
      "font-size": "15",
    });
    hint.textContent = "empty territory: author a piece below, or step the frontier";
    svg.appendChild(hint);
    return;
  }

  const coords = state.overlay.coords;
  let minX = Infinity, maxX = -Infinity, minY = Infinity, maxY = -Infinity;
  for (const { x, y } of coords.values()) {
    minX = Math.min(minX, x); maxX = Math.max(maxX, x);
    minY = Math.min(minY, y); maxY = Math.max(maxY, y);
  }
  const spanX = maxX - minX || 1;
  const spanY = maxY - minY || 1;
  const pad = 48;
  const place = (id: string) => {
    const c = coords.get(id);
    if (!c) return { x: width / 2, y: height / 2 };
    return {
      x: pad + ((c.x - minX) / spanX) * (width - 2 * pad),
      y: pad + ((c.y - minY) / spanY) * (height - 2 * pad),
    };
  };
  const resolve = (id: string | undefined): PieceRecord | undefined => {
    if (!id) return undefined;
    const direct = state.pieces.get(id);
    if (direct) return direct;
    for (const piece of state.pieces.values()) {
      if (piece.aliases && piece.aliases.includes(id)) return piece;
    }
    return undefined;
  };
  const flagged = new Set(state.findings.map((f) => f.piece));

  const lines = svgEl("g");
  const glyphs = svgEl("g");
  svg.appendChild(lines);
  svg.appendChild(glyphs);

  for (const piece of state.pieces.values()) {
    const pos = place(piece.id);
    const selected = state.selected === piece.id;
    if (piece.kind === "edge") {
      const color = EDGE_COLOR[piece.edge_kind ?? ""] ?? "#666";
      for (const endpoint of [piece.source, piece.target]) {
        const other = resolve(endpoint);
        const line = svgEl("line", {
          x1: String(pos.x),
          y1: String(pos.y),
          x2: other ? String(place(other.id).x) : String(pos.x + 16),
          y2: other ? String(place(other.id).y) : String(pos.y - 16),
          stroke: color,
          "stroke-width": endpoint === piece.target ? "2.2" : "1.2",
          "stroke-dasharray": other ? "" : "3,3", // dangling endpoint
        });
        lines.appendChild(line);
      }
      // the edge is itself a piece: a selectable diamond at its midpoint
      const glyph = svgEl("polygon", {
        points: `${pos.x},${pos.y - 7} ${pos.x + 7},${pos.y} ${pos.x},${pos.y + 7} ${pos.x - 7},${pos.y}`,
        fill: heightColor(state.overlay.heights.get(piece.id) ?? 0, state.overlay.maxHeight),
        stroke: flagged.has(piece.id) ? "#d03030" : selected ? "#000" : color,
        "stroke-width": flagged.has(piece.id) || selected ? "2.5" : "1.4",
        "stroke-dasharray": flagged.has(piece.id) ? "4,2" : "",
        cursor: "pointer",
      });
      glyph.addEventListener("click", () => handlers.onSelect(piece.id));
      glyphs.appendChild(glyph);
      const caption = piece.label ? `${piece.edge_kind}: ${piece.label}` : piece.edge_kind ?? "";
      const showReverse =
        piece.reverse_label && (piece.edge_kind === "differsFrom" || piece.edge_kind === "equates");
      const label = svgEl("text", {
        x: String(pos.x + 10),
        y: String(pos.y - 8),
        "font-size": "9",
        fill: color,
      });
      label.textContent = showReverse ? `${caption} / ${piece.reverse_label}` : caption;
      glyphs.appendChild(label);
    } else {
      const fill = NODE_FILL[piece.kind] ?? "#ccc";
      const overlayFill = heightColor(
        state.overlay.heights.get(piece.id) ?? 0,
        state.overlay.maxHeight,
      );
      const glyph =
        piece.kind === "existence"
          ? svgEl("ellipse", {
              cx: String(pos.x),
              cy: String(pos.y),
              rx: "30",
              ry: "15",
              fill,
              stroke: selected ? "#000" : overlayFill,
              "stroke-width": selected ? "3" : "4",
              cursor: "pointer",
            })
          : svgEl("rect", {
              x: String(pos.x - 32),
              y: String(pos.y - 14),
              width: "64",
              height: "28",
              rx: piece.kind === "question" ? "10" : "2",
              fill,
              stroke: selected ? "#000" : overlayFill,
              "stroke-width": selected ? "3" : "4",
              cursor: "pointer",
            });
      glyph.addEventListener("click", () => handlers.onSelect(piece.id));
      glyphs.appendChild(glyph);
      const label = svgEl("text", {
        x: String(pos.x),
        y: String(pos.y + 3),
        "text-anchor": "middle",
        "font-size": "9",
        cursor: "pointer",
      });
      label.textContent =
        piece.content.length > 14 ? piece.content.slice(0, 13) + "…" : piece.content;
      label.addEventListener("click", () => handlers.onSelect(piece.id));
      glyphs.appendChild(label);
      if (piece.public) {
        glyphs.appendChild(
          Object.assign(svgEl("text", {
            x: String(pos.x + 26),
            y: String(pos.y - 16),
            "font-size": "10",
          }), { textContent: "◉" }),
        );
      }
    }
  }
}

export function renderPanels(root: HTMLElement, state: UiState, handlers: Handlers): void {
  root.innerHTML = "";

  if (state.notice) {
    root.appendChild(el("div", { class: "notice" }, state.notice));
  }
  for (const [addr, code] of state.peerErrors) {
    root.appendChild(el("div", { class: "notice degraded" }, `peer ${addr} degraded: ${code}`));
  }

  // selected piece
  const selected = state.selected ? state.pieces.get(state.selected) : undefined;
  const detail = el("section", { class: "panel" });
  detail.appendChild(el("h2", {}, "selected piece"));
  if (!selected) {
    detail.appendChild(el("p", { class: "muted" }, "click a node or an edge diamond"));
  } else {
    detail.appendChild(el("p", {}, `${selected.kind}${selected.edge_kind ? " / " + selected.edge_kind : ""}`));
    if (selected.content) detail.appendChild(el("p", { class: "content" }, selected.content));
    if (selected.label) detail.appendChild(el("p", {}, `label: ${selected.label}`));
    detail.appendChild(
      el("p", { class: "muted" },
        selected.authorships.map((a) => `${a.authors.join("+")} @ ${a.timestamp}`).join("; ")),
    );
    const actions = el("div", { class: "row" });
    if (!selected.public) {
      const pub = el("button", {}, "gift to public domain");
      pub.addEventListener("click", () => handlers.onPublic(selected.id));
      actions.appendChild(pub);
    } else {
      actions.appendChild(el("span", { class: "muted" }, "public (irrevocable)"));
    }
    const flagBtn = el("button", {}, "red-flag");
    flagBtn.addEventListener("click", () => handlers.onFlag(selected.id, "mispositioned"));
    actions.appendChild(flagBtn);
    detail.appendChild(actions);

    const form = el("div", { class: "stack" });
    form.appendChild(el("h3", {}, "annotate"));
    const kindSel = el("select");
    for (const kind of ["nuances", "questions", "details", "relate", "equates", "differsFrom", "answers", "instantiates"]) {
      kindSel.appendChild(el("option", { value: kind }, kind));
    }
    const content = el("input", { placeholder: "annotation text" });
    const label = el("input", { placeholder: "edge label (optional)" });
    const go = el("button", {}, "attach");
    go.addEventListener("click", () => {
      if (content.value) {
        handlers.onAnnotate(selected.id, kindSel.value, content.value, label.value || undefined);
      }
    });
    form.append(kindSel, content, label, go);
    detail.appendChild(form);
  }
  root.appendChild(detail);

  // frontier
  const frontier = el("section", { class: "panel" });
  frontier.appendChild(el("h2", {}, `frontier (${state.frontier.length})`));
  if (state.frontier.length === 0) {
    frontier.appendChild(el("p", { class: "muted" }, "nothing one step out"));
  }
  for (const entry of state.frontier.slice(0, 30)) {
    const row = el("div", { class: "row entry" });
    const kind = entry.edge_kind ? `${entry.kind}/${entry.edge_kind}` : entry.kind;
    const measures = Object.entries(entry.measures)
      .map(([name, value]) => `${name}=${value}`)
      .join(" ");
    // previews show kind and measures only, never content
    row.appendChild(el("span", {}, `${kind} via ${entry.via.slice(0, 8)}… ${measures}`));
    const btn = el("button", {}, "step");
    btn.addEventListener("click", () => handlers.onStep(entry));
    row.appendChild(btn);
    frontier.appendChild(row);
  }
  root.appendChild(frontier);

  // inbox
  const inbox = el("section", { class: "panel" });
  const pending = state.inbox.filter((item) => item.status === "pending");
  inbox.appendChild(el("h2", {}, `inbox (${pending.length} pending)`));
  for (const item of state.inbox) {
    const box = el("div", { class: "stack entry" });
    box.appendChild(el("strong", {}, `${item.offer_id} from ${item.from} [${item.status}]`));
    for (const piece of item.pieces) {
      const verdict = item.decisions[piece.id];
      box.appendChild(
        el("p", { class: "muted" },
          `${piece.kind}${piece.edge_kind ? "/" + piece.edge_kind : ""}: ` +
          `${piece.content || "(edge)"} -> ${verdict ? verdict.verdict : "?"}`),
      );
    }
    if (item.status === "pending") {
      const row = el("div", { class: "row" });
      const ok = el("button", {}, "accept");
      ok.addEventListener("click", () => handlers.onAcceptOffer(item.offer_id));
      const no = el("button", {}, "reject");
      no.addEventListener("click", () => handlers.onRejectOffer(item.offer_id));
      row.append(ok, no);
      box.appendChild(row);
    }
    inbox.appendChild(box);
  }
  root.appendChild(inbox);

  // gatekeeper rules
  const rules = el("section", { class: "panel" });
  rules.appendChild(el("h2", {}, "gatekeeper rules"));
  const editor = el("textarea", { rows: "6" });
  editor.value = state.rulesText;
  rules.appendChild(editor);
  if (state.ruleError) rules.appendChild(el("div", { class: "notice error" }, state.ruleError));
  const save = el("button", {}, "save rules");
  save.addEventListener("click", () => handlers.onSaveRules(editor.value));
  rules.appendChild(save);
  root.appendChild(rules);

  // authoring + overlay choice
  const author = el("section", { class: "panel" });
  author.appendChild(el("h2", {}, "author a piece"));
  const kindSel = el("select");
  for (const kind of ["narrative", "question", "existence"]) {
    kindSel.appendChild(el("option", { value: kind }, kind));
  }
  const content = el("input", { placeholder: "content" });
  const create = el("button", {}, "create");
  create.addEventListener("click", () => {
    if (content.value) handlers.onCreate(kindSel.value, content.value);
  });
  author.append(kindSel, content, create);
  author.appendChild(el("h3", {}, "topography overlay"));
  const overlaySel = el("select");
  for (const measure of ["depth", "utility", "implantation", "visibility"]) {
    const option = el("option", { value: measure }, measure);
    if (measure === state.overlay.measure) option.setAttribute("selected", "selected");
    overlaySel.appendChild(option);
  }
  overlaySel.addEventListener("change", () => handlers.onOverlay(overlaySel.value));
  author.appendChild(overlaySel);
  root.appendChild(author);
}
