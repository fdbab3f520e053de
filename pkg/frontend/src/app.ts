/** Console bootstrap: one store, one poller per endpoint, DOM wiring. */

import { GateClient } from "./api.js";
import {
  closeTicket,
  openSiteDetail,
  refreshReleases,
  refreshStatus,
  refreshTickets,
  submitInstall,
} from "./actions.js";
import { Poller } from "./poller.js";
import {
  MalformedDocument,
  renderBanner,
  renderMatrix,
  renderReleases,
  renderSeq,
  renderSiteDetail,
  renderTickets,
  renderToast,
} from "./render.js";
import { Store } from "./store.js";

const POLL_INTERVAL_MS = 2000;

export function mountConsole(root: HTMLElement, client: GateClient, store: Store): void {
  const banner = document.createElement("div");
  const toast = document.createElement("div");
  const seq = document.createElement("div");
  const matrix = document.createElement("div");
  const detail = document.createElement("div");
  const tickets = document.createElement("div");
  const releases = document.createElement("div");

  const form = document.createElement("form");
  form.className = "submit-form";
  form.innerHTML = `
    <input name="token" type="password" placeholder="bearer token (session only)" autocomplete="off">
    <input name="site" placeholder="site id">
    <input name="release" placeholder="PROJECT/VERSION">
    <button type="submit">submit install</button>
  `;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const data = new FormData(form);
    client.token = String(data.get("token") ?? "").trim() || null;
    const releaseKey = String(data.get("release") ?? "");
    const [project, version] = releaseKey.split("/", 2);
    if (!project || !version) {
      store.update({ banner: "release must be PROJECT/VERSION" });
      return;
    }
    void submitInstall(client, store, String(data.get("site") ?? ""), project, version);
  });

  root.replaceChildren(banner, toast, seq, form, matrix, detail, releases, tickets);

  store.subscribe((state) => {
    banner.replaceChildren(renderBanner(state.banner));
    toast.replaceChildren(renderToast(state.toast));
    seq.replaceChildren(renderSeq(state.status ? state.status.seq : null));
    try {
      if (state.status) {
        matrix.replaceChildren(
          renderMatrix(state.status, state.releases, (site) =>
            void openSiteDetail(client, store, site),
          ),
        );
      }
      if (state.selectedSite && state.status) {
        const site = state.status.sites.find((s) => s.site === state.selectedSite);
        if (site) {
          detail.replaceChildren(renderSiteDetail(site, state.siteHistory));
        }
      }
      tickets.replaceChildren(
        renderTickets(state.tickets, (ticketId) => void closeTicket(client, store, ticketId)),
      );
      if (state.releases) {
        releases.replaceChildren(renderReleases(state.releases));
      }
    } catch (err) {
      if (err instanceof MalformedDocument) {
        banner.replaceChildren(renderBanner(`malformed document: ${err.message}`));
      } else {
        throw err;
      }
    }
  });

  new Poller(() => refreshStatus(client, store), POLL_INTERVAL_MS).start();
  new Poller(() => refreshReleases(client, store), POLL_INTERVAL_MS).start();
  new Poller(() => refreshTickets(client, store), POLL_INTERVAL_MS).start();
}

if (typeof document !== "undefined" && document.getElementById("console-root")) {
  mountConsole(
    document.getElementById("console-root") as HTMLElement,
    new GateClient(""),
    new Store(),
  );
}
