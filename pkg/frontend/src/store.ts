/** Single console store; every UI update funnels through it in order. */

import type { ProbeDoc, ReleasesDoc, StatusDoc, Ticket } from "./types.js";

export interface ConsoleState {
  status: StatusDoc | null;
  releases: ReleasesDoc | null;
  tickets: Ticket[];
  ticketsSeq: number | null;
  selectedSite: string | null;
  siteHistory: ProbeDoc[];
  banner: string | null;
  toast: string | null;
}

export type Listener = (state: ConsoleState) => void;

export function initialState(): ConsoleState {
  return {
    status: null,
    releases: null,
    tickets: [],
    ticketsSeq: null,
    selectedSite: null,
    siteHistory: [],
    banner: null,
    toast: null,
  };
}

export class Store {
  private state: ConsoleState = initialState();
  private listeners: Listener[] = [];

  get(): ConsoleState {
    return this.state;
  }

  update(patch: Partial<ConsoleState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }
}
