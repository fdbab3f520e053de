/** Pure DOM builders.
 *
 * These functions compute nothing: every rendered value is copied from an
 * API document field. A document carrying a state outside the known
 * enumerations is rejected with MalformedDocument so the app shows an error
 * banner instead of inventing a display value.
 */

import type { ProbeDoc, ReleasesDoc, SiteStatus, StatusDoc, Ticket } from "./types.js";
import { JOB_STATES, TICKET_SEVERITIES, TICKET_STATES } from "./types.js";

export class MalformedDocument extends Error {}

const KNOWN_JOB_STATES: ReadonlySet<string> = new Set(JOB_STATES);
const KNOWN_TICKET_STATES: ReadonlySet<string> = new Set(TICKET_STATES);
const KNOWN_SEVERITIES: ReadonlySet<string> = new Set(TICKET_SEVERITIES);

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

export function stateChip(state: string): HTMLElement {
  if (!KNOWN_JOB_STATES.has(state)) {
    throw new MalformedDocument(`unknown job state in document: ${state}`);
  }
  return el("span", `chip chip-${state.toLowerCase()}`, state);
}

/** Column order: every release key named anywhere in the documents. */
export function releaseColumns(status: StatusDoc, releases: ReleasesDoc | null): string[] {
  const keys = new Set<string>();
  for (const manifest of releases?.releases ?? []) {
    keys.add(`${manifest.project}/${manifest.version}`);
  }
  for (const site of status.sites) {
    for (const key of Object.keys(site.installations)) {
      keys.add(key);
    }
  }
  return [...keys].sort();
}

export function renderMatrix(
  status: StatusDoc,
  releases: ReleasesDoc | null,
  onCellClick?: (site: string) => void,
): HTMLElement {
  const container = el("section", "matrix");
  if (status.sites.length === 0) {
    container.appendChild(el("p", "empty-state", "No sites configured."));
    return container;
  }
  const columns = releaseColumns(status, releases);
  const table = el("table", "matrix-table");
  const head = el("tr");
  head.appendChild(el("th", undefined, "site"));
  for (const column of columns) {
    head.appendChild(el("th", undefined, column));
  }
  table.appendChild(head);

  for (const site of status.sites) {
    const row = el("tr", site.degraded ? "site-row degraded" : "site-row");
    row.dataset.site = site.site;
    const name = el("th", "site-name");
    name.appendChild(el("span", undefined, site.site));
    if (site.degraded) {
      name.appendChild(el("span", "flag flag-degraded", "degraded"));
    }
    if (site.offline) {
      name.appendChild(el("span", "flag flag-offline", "offline"));
    }
    row.appendChild(name);
    for (const column of columns) {
      const cell = el("td", "matrix-cell");
      cell.dataset.site = site.site;
      cell.dataset.release = column;
      const state = site.installations[column];
      if (state !== undefined) {
        cell.appendChild(stateChip(state));
      }
      if (onCellClick) {
        cell.addEventListener("click", () => onCellClick(site.site));
      }
      row.appendChild(cell);
    }
    table.appendChild(row);
  }
  container.appendChild(table);
  return container;
}

function renderCheckVector(probe: ProbeDoc): HTMLElement {
  const list = el("ul", "check-vector");
  for (const [check, [passed, evidence]] of Object.entries(probe.checks)) {
    const item = el("li", passed ? "check pass" : "check fail");
    item.appendChild(el("span", "check-name", check));
    item.appendChild(el("span", "check-verdict", passed ? "pass" : "fail"));
    item.appendChild(el("span", "check-evidence", evidence));
    list.appendChild(item);
  }
  return list;
}

/** History sparkline: one bar per probe, newest on the right. */
function renderSparkline(entries: ProbeDoc[]): SVGElement {
  const width = 8;
  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("class", "sparkline");
  svg.setAttribute("viewBox", `0 0 ${Math.max(entries.length, 1) * width} 20`);
  const ordered = [...entries].reverse();
  ordered.forEach((probe, i) => {
    const bar = document.createElementNS("http://www.w3.org/2000/svg", "rect");
    bar.setAttribute("x", String(i * width));
    bar.setAttribute("y", probe.overall ? "4" : "10");
    bar.setAttribute("width", String(width - 2));
    bar.setAttribute("height", probe.overall ? "16" : "10");
    bar.setAttribute("class", probe.overall ? "spark pass" : "spark fail");
    svg.appendChild(bar);
  });
  return svg;
}

export function renderSiteDetail(site: SiteStatus, history: ProbeDoc[]): HTMLElement {
  const panel = el("section", "site-detail");
  panel.dataset.site = site.site;
  panel.appendChild(el("h2", undefined, `${site.site} (${site.architecture})`));
  if (site.latest_probe) {
    panel.appendChild(renderCheckVector(site.latest_probe));
  } else {
    panel.appendChild(el("p", "empty-state", "No probe results yet."));
  }
  panel.appendChild(renderSparkline(history));
  const tags = el("ul", "tag-list");
  for (const raw of site.tags) {
    tags.appendChild(el("li", "tag", raw));
  }
  panel.appendChild(tags);
  const installs = el("ul", "install-list");
  for (const [release, state] of Object.entries(site.installations)) {
    const item = el("li");
    item.appendChild(el("span", undefined, release));
    item.appendChild(stateChip(state));
    installs.appendChild(item);
  }
  panel.appendChild(installs);
  return panel;
}

export function renderTickets(
  tickets: Ticket[],
  onClose?: (ticketId: string) => void,
): HTMLElement {
  const container = el("section", "tickets");
  if (tickets.length === 0) {
    container.appendChild(el("p", "empty-state", "No tickets."));
    return container;
  }
  const table = el("table", "ticket-table");
  const head = el("tr");
  for (const caption of ["ticket", "origin", "severity", "state", "retries", ""]) {
    head.appendChild(el("th", undefined, caption));
  }
  table.appendChild(head);
  for (const ticket of tickets) {
    if (!KNOWN_TICKET_STATES.has(ticket.state)) {
      throw new MalformedDocument(`unknown ticket state: ${ticket.state}`);
    }
    if (!KNOWN_SEVERITIES.has(ticket.severity)) {
      throw new MalformedDocument(`unknown ticket severity: ${ticket.severity}`);
    }
    const row = el("tr", "ticket-row");
    row.dataset.ticketId = ticket.ticket_id;
    row.appendChild(el("td", undefined, ticket.ticket_id));
    row.appendChild(el("td", undefined, ticket.origin));
    row.appendChild(el("td", `severity severity-${ticket.severity}`, ticket.severity));
    const stateCell = el("td");
    stateCell.appendChild(el("span", `badge badge-${ticket.state.toLowerCase()}`, ticket.state));
    row.appendChild(stateCell);
    row.appendChild(el("td", undefined, String(ticket.retry_count)));
    const actions = el("td");
    if (ticket.state !== "CLOSED" && onClose) {
      const button = el("button", "close-ticket", "close");
      button.addEventListener("click", () => onClose(ticket.ticket_id));
      actions.appendChild(button);
    }
    row.appendChild(actions);
    table.appendChild(row);
  }
  container.appendChild(table);
  return container;
}

export function renderReleases(releases: ReleasesDoc): HTMLElement {
  const container = el("section", "releases");
  const list = el("ul", "release-list");
  for (const manifest of releases.releases) {
    const item = el("li");
    item.appendChild(el("span", "release-key", `${manifest.project}/${manifest.version}`));
    item.appendChild(el("span", "release-state", manifest.state));
    list.appendChild(item);
  }
  container.appendChild(list);
  return container;
}

export function renderBanner(message: string | null): HTMLElement {
  const banner = el("div", message ? "banner visible" : "banner", message ?? "");
  banner.setAttribute("role", "alert");
  return banner;
}

export function renderToast(message: string | null): HTMLElement {
  return el("div", message ? "toast visible" : "toast", message ?? "");
}

export function renderSeq(seq: number | null): HTMLElement {
  return el("div", "ledger-seq", seq === null ? "" : `ledger seq ${seq}`);
}
