// The service's JSON endpoints. The UI writes only through
// postFeedback and postControl; everything else is read-only.

import type { MemoryRecord, TranscriptMessage } from "./types.js";

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

const defaultFetch: FetchLike = (input, init) => globalThis.fetch(input, init);

export interface PostResult {
  ok: boolean;
  error?: string;
  body?: Record<string, unknown>;
}

async function getJson<T>(url: string, fetchImpl: FetchLike): Promise<T> {
  const res = await fetchImpl(url);
  if (!res.ok) throw new Error(`HTTP ${res.status}`);
  return (await res.json()) as T;
}

export function getStatus(
  base: string,
  fetchImpl: FetchLike = defaultFetch,
): Promise<Record<string, unknown>> {
  return getJson(`${base}/api/status`, fetchImpl);
}

export function getRuns(
  base: string,
  fetchImpl: FetchLike = defaultFetch,
): Promise<MemoryRecord[]> {
  return getJson(`${base}/api/runs`, fetchImpl);
}

export function getMemory(
  base: string,
  fetchImpl: FetchLike = defaultFetch,
): Promise<MemoryRecord[]> {
  return getJson(`${base}/api/memory`, fetchImpl);
}

export function getTranscript(
  base: string,
  runId: string,
  fetchImpl: FetchLike = defaultFetch,
): Promise<TranscriptMessage[]> {
  return getJson(`${base}/api/runs/${encodeURIComponent(runId)}`, fetchImpl);
}

async function post(
  url: string,
  payload: Record<string, unknown>,
  fetchImpl: FetchLike,
): Promise<PostResult> {
  try {
    const res = await fetchImpl(url, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    const body = (await res.json().catch(() => ({}))) as Record<string, unknown>;
    if (!res.ok) {
      const error = typeof body.error === "string" ? body.error : `HTTP ${res.status}`;
      return { ok: false, error, body };
    }
    return { ok: true, body };
  } catch (err) {
    return { ok: false, error: String(err) };
  }
}

export function postFeedback(
  base: string,
  text: string,
  fetchImpl: FetchLike = defaultFetch,
): Promise<PostResult> {
  return post(`${base}/api/feedback`, { text }, fetchImpl);
}

export function postControl(
  base: string,
  command: string,
  fetchImpl: FetchLike = defaultFetch,
): Promise<PostResult> {
  return post(`${base}/api/control`, { command }, fetchImpl);
}
