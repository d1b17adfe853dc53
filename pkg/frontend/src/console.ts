// Director console: a thin client over the story-server websocket.  All
// narrative state lives on the server; this class only mirrors the frames
// it receives and turns button clicks into canonical `choose` frames.

import {
  ChoiceView,
  Role,
  ServerFrame,
  StatusFrame,
  decodeFrame,
  encodeChoose,
  encodeFrame,
  encodeSet,
} from "./protocol.js";

/** The slice of the WebSocket API the console needs; tests inject a mock. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  // `any` keeps the browser WebSocket assignable without DOM event plumbing
  onopen: ((ev?: any) => void) | null;
  onmessage: ((ev: any) => void) | null;
  onclose: ((ev?: any) => void) | null;
  onerror: ((ev?: any) => void) | null;
}

export interface DecisionRecord {
  seq: number;
  id: number;
  label: string;
  at: string; // ISO timestamp
}

export class ConsoleApp {
  role: Role = "observer";
  latestStatus: StatusFrame | null = null;
  decisionLog: DecisionRecord[] = [];
  private chooseInFlight = false;

  private banner: HTMLElement;
  private roleBadge: HTMLElement;
  private title: HTMLElement;
  private transcript: HTMLElement;
  private choicesBox: HTMLElement;
  private varsBox: HTMLElement;
  private notice: HTMLElement;

  constructor(private root: HTMLElement, private socket: SocketLike) {
    root.innerHTML = "";
    this.banner = this.section("banner");
    this.title = this.section("title");
    this.roleBadge = this.section("role");
    this.transcript = this.section("transcript");
    this.choicesBox = this.section("choices");
    this.varsBox = this.section("vars");
    this.notice = this.section("notice");

    const exportBtn = this.root.ownerDocument.createElement("button");
    exportBtn.className = "export-log";
    exportBtn.textContent = "export decision log";
    exportBtn.onclick = () => this.exportLog();
    root.appendChild(exportBtn);

    this.banner.textContent = "connecting…";
    socket.onopen = () => {
      this.banner.textContent = "";
      // claim the director token right away; a denial just leaves us observing
      socket.send(encodeFrame("claim"));
      this.renderRole();
    };
    socket.onmessage = (ev) => {
      const frame = decodeFrame(String(ev.data));
      if (frame !== null) this.onFrame(frame);
    };
    socket.onclose = () => {
      this.banner.textContent = "disconnected; reload to retry";
      this.choicesBox.innerHTML = "";
    };
    socket.onerror = () => {
      this.banner.textContent = "connection failed; reload to retry";
    };
  }

  private section(name: string): HTMLElement {
    const el = this.root.ownerDocument.createElement("div");
    el.className = name;
    this.root.appendChild(el);
    return el;
  }

  private onFrame(frame: ServerFrame): void {
    switch (frame.type) {
      case "hello":
        this.role = frame.role;
        this.title.textContent = frame.story;
        this.renderRole();
        this.renderChoices();
        break;
      case "status":
        this.latestStatus = frame;
        this.chooseInFlight = false;
        this.notice.textContent = "";
        for (const p of frame.paragraphs) this.appendParagraph(p.text);
        this.renderChoices();
        this.renderVars(frame.vars);
        break;
      case "end":
        this.choicesBox.innerHTML = "";
        this.notice.textContent = "the story has ended";
        break;
      case "error":
        this.onError(frame.code, frame.message);
        break;
      case "sync":
        this.transcript.innerHTML = "";
        for (const p of frame.paragraphs) this.appendParagraph(p.text);
        break;
    }
  }

  private onError(code: string, message: string): void {
    if (code === "stale_seq") {
      // our pick raced a state change; the follow-up status resyncs us
      this.chooseInFlight = false;
      this.notice.textContent = "story moved on before your pick; choose again";
      this.setButtonsEnabled(true);
      return;
    }
    if (code === "not_director_claim_denied") {
      this.role = "observer";
      this.renderRole();
      this.renderChoices();
      return;
    }
    this.notice.textContent = `server error [${code}]: ${message}`;
  }

  private renderRole(): void {
    this.roleBadge.textContent = this.role === "director" ? "Director" : "Observer";
  }

  private appendParagraph(text: string): void {
    const p = this.root.ownerDocument.createElement("p");
    p.textContent = text;
    this.transcript.appendChild(p);
  }

  private renderChoices(): void {
    this.choicesBox.innerHTML = "";
    const status = this.latestStatus;
    if (status === null || this.role !== "director") return;
    for (const choice of status.choices) {
      this.choicesBox.appendChild(this.makeChoiceButton(choice, status.seq));
    }
  }

  private makeChoiceButton(choice: ChoiceView, seq: number): HTMLButtonElement {
    const btn = this.root.ownerDocument.createElement("button");
    btn.className = "choice";
    btn.dataset.id = String(choice.id);
    btn.textContent = choice.label;
    btn.onclick = () => {
      if (this.chooseInFlight) return;
      this.chooseInFlight = true;
      this.setButtonsEnabled(false);
      this.socket.send(encodeChoose(choice.id, seq));
      this.decisionLog.push({
        seq,
        id: choice.id,
        label: choice.label,
        at: new Date().toISOString(),
      });
    };
    return btn;
  }

  private setButtonsEnabled(enabled: boolean): void {
    for (const btn of Array.from(this.choicesBox.querySelectorAll("button"))) {
      (btn as HTMLButtonElement).disabled = !enabled;
    }
  }

  private renderVars(vars: Record<string, number | string | boolean>): void {
    this.varsBox.innerHTML = "";
    const doc = this.root.ownerDocument;
    for (const name of Object.keys(vars).sort()) {
      const row = doc.createElement("div");
      row.className = "var-row";
      const label = doc.createElement("span");
      label.textContent = name;
      const input = doc.createElement("input");
      input.value = String(vars[name]);
      input.disabled = this.role !== "director";
      const apply = doc.createElement("button");
      apply.textContent = "set";
      apply.disabled = this.role !== "director";
      apply.onclick = () => {
        this.socket.send(encodeSet(name, coerce(input.value, vars[name])));
      };
      row.append(label, input, apply);
      this.varsBox.appendChild(row);
    }
  }

  exportLog(): void {
    const doc = this.root.ownerDocument;
    const win = doc.defaultView as (Window & typeof globalThis) | null;
    const data = JSON.stringify(this.decisionLog, null, 2);
    if (win && "Blob" in win && win.URL && win.URL.createObjectURL) {
      const url = win.URL.createObjectURL(new win.Blob([data], { type: "application/json" }));
      const a = doc.createElement("a");
      a.href = url;
      a.download = "decisions.json";
      a.click();
      win.URL.revokeObjectURL(url);
    }
  }
}

/** Keep the value's wire type aligned with what the server last reported. */
function coerce(raw: string, previous: number | string | boolean): number | string | boolean {
  if (typeof previous === "boolean") return raw === "true";
  if (typeof previous === "number") {
    const n = Number.parseInt(raw, 10);
    return Number.isNaN(n) ? raw : n;
  }
  return raw;
}
