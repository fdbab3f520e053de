/** Controller actions: API call + store update, no DOM knowledge. */

import type { GateClient } from "./api.js";
import type { Store } from "./store.js";

export async function refreshStatus(client: GateClient, store: Store): Promise<void> {
  const result = await client.getStatus();
  if (result.ok) {
    store.update({ status: result.body });
  } else {
    store.update({ banner: `status fetch failed: ${result.failure.message}` });
  }
}

export async function refreshReleases(client: GateClient, store: Store): Promise<void> {
  const result = await client.getReleases();
  if (result.ok) {
    store.update({ releases: result.body });
  }
}

export async function refreshTickets(client: GateClient, store: Store): Promise<void> {
  const result = await client.getTickets();
  if (result.ok) {
    store.update({ tickets: result.body.tickets, ticketsSeq: result.body.seq });
  }
}

export async function openSiteDetail(
  client: GateClient,
  store: Store,
  site: string,
): Promise<void> {
  store.update({ selectedSite: site });
  const result = await client.getHistory(site);
  if (result.ok) {
    store.update({ siteHistory: result.body.entries });
  } else {
    store.update({ siteHistory: [], banner: `history fetch failed: ${result.failure.message}` });
  }
}

/** Submit an install; errors become banners, success becomes a toast. */
export async function submitInstall(
  client: GateClient,
  store: Store,
  site: string,
  project: string,
  version: string,
): Promise<void> {
  store.update({ banner: null, toast: null });
  if (!client.token) {
    store.update({ banner: "paste a token before submitting" });
    return;
  }
  const result = await client.submitInstall(site, project, version);
  if (result.ok) {
    store.update({ toast: `submitted ${result.body.job.job_id}` });
    return;
  }
  if (result.failure.status === 401 || result.failure.status === 403) {
    store.update({ banner: "unauthorized" });
  } else if (result.failure.status === 409) {
    store.update({ banner: "duplicate submission" });
  } else {
    store.update({ banner: `submit failed: ${result.failure.message}` });
  }
}

export async function closeTicket(
  client: GateClient,
  store: Store,
  ticketId: string,
): Promise<void> {
  store.update({ banner: null });
  const result = await client.closeTicket(ticketId);
  if (result.ok) {
    const tickets = store
      .get()
      .tickets.map((t) => (t.ticket_id === result.body.ticket.ticket_id ? result.body.ticket : t));
    store.update({ tickets, ticketsSeq: result.body.seq });
    return;
  }
  if (result.failure.status === 409) {
    store.update({ banner: `ticket ${ticketId}: illegal transition` });
  } else if (result.failure.status === 401 || result.failure.status === 403) {
    store.update({ banner: "unauthorized" });
  } else {
    store.update({ banner: `close failed: ${result.failure.message}` });
  }
}
