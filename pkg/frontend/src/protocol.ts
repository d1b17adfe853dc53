// Wire protocol: newline-delimited JSON frames over TCP, one frame per
// message over the websocket.  Frames are encoded canonically: "type"
// first, remaining keys in lexicographic order, compact separators.

export type Role = "observer" | "director";

export interface ChoiceView {
  id: number;
  label: string;
}

export interface ParagraphView {
  text: string;
  tags: string[];
  spans: unknown[];
  align?: string;
}

export interface HelloFrame {
  type: "hello";
  protocol: number;
  role: Role;
  story: string;
  story_hash: string;
}

export interface StatusFrame {
  type: "status";
  seq: number;
  knot: string;
  finished: boolean;
  paragraphs: ParagraphView[];
  choices: ChoiceView[];
  vars: Record<string, number | string | boolean>;
}

export interface EndFrame {
  type: "end";
  seq: number;
}

export interface ErrorFrame {
  type: "error";
  code: string;
  message: string;
}

export interface SyncFrame {
  type: "sync";
  seq: number;
  paragraphs: ParagraphView[];
}

export type ServerFrame = HelloFrame | StatusFrame | EndFrame | ErrorFrame | SyncFrame;

const SERVER_TYPES = new Set(["hello", "status", "end", "error", "sync", "pong"]);

/** Canonical encoding: type first, the rest sorted, no whitespace. */
export function encodeFrame(type: string, fields: Record<string, unknown> = {}): string {
  const parts = [`"type":${JSON.stringify(type)}`];
  for (const key of Object.keys(fields).sort()) {
    parts.push(`${JSON.stringify(key)}:${JSON.stringify(fields[key])}`);
  }
  return `{${parts.join(",")}}`;
}

export function encodeChoose(id: number, seq: number): string {
  return encodeFrame("choose", { id, seq });
}

export function encodeSet(name: string, value: number | string | boolean): string {
  return encodeFrame("set", { name, value });
}

/** Total decoder: returns null for anything that is not a known server frame. */
export function decodeFrame(data: string): ServerFrame | null {
  let parsed: unknown;
  try {
    parsed = JSON.parse(data);
  } catch {
    return null;
  }
  if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
    return null;
  }
  const type = (parsed as { type?: unknown }).type;
  if (typeof type !== "string" || !SERVER_TYPES.has(type)) {
    return null;
  }
  return parsed as ServerFrame;
}
