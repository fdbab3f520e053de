import fs from "node:fs";
import path from "node:path";

import type { FetchLike } from "../src/api.js";

export interface Recorded<T = unknown> {
  status: number;
  body: T;
}

export function loadFixture<T = any>(name: string): Recorded<T> {
  const file = path.join(process.cwd(), "fixtures", name);
  return JSON.parse(fs.readFileSync(file, "utf8")) as Recorded<T>;
}

export interface RecordedCall {
  method: string;
  url: string;
  body: unknown;
  headers: Record<string, string>;
}

export interface FetchMock {
  fetchFn: FetchLike;
  calls: RecordedCall[];
}

/** Route table keyed by "METHOD path"; unmatched requests fail the test loudly. */
export function fetchMock(routes: Record<string, Recorded>): FetchMock {
  const calls: RecordedCall[] = [];
  const fetchFn: FetchLike = async (input, init) => {
    const method = init?.method ?? "GET";
    const key = `${method} ${input}`;
    calls.push({
      method,
      url: String(input),
      body: init?.body ? JSON.parse(String(init.body)) : undefined,
      headers: (init?.headers as Record<string, string>) ?? {},
    });
    const recorded = routes[key];
    if (!recorded) {
      throw new Error(`no fixture route for ${key}`);
    }
    return new Response(JSON.stringify(recorded.body), {
      status: recorded.status,
      headers: { "Content-Type": "application/json" },
    });
  };
  return { fetchFn, calls };
}
