/** Entry point: wires the API client, store, and DOM together.
 *
 * The only configuration is the API base URL, read from a
 * `data-api-base` attribute on the mount node (empty string means
 * same-origin, the default when the service serves this page itself).
 */

import { ApiClient } from "./api.js";
import { SessionStore } from "./state.js";
import { App } from "./ui.js";

export function boot(root: HTMLElement): App {
  const baseUrl = root.dataset.apiBase ?? "";
  const client = new ApiClient(baseUrl);
  const store = new SessionStore(client);
  return new App(root, store);
}

const mount = document.getElementById("app");
if (mount) boot(mount);
