/** Browser bootstrap: mount the studio onto #app and connect. */

import { StudioApp } from "./app.js";
import { mountStudio } from "./studio.js";

const DEFAULT_SERVICE_URL = "http://127.0.0.1:8765";

const root = document.querySelector("#app");
if (root instanceof HTMLElement) {
  const params = new URLSearchParams(window.location.search);
  const serviceUrl = params.get("service") ?? DEFAULT_SERVICE_URL;
  const app = new StudioApp(serviceUrl);
  mountStudio(root, app);
  void app.connect(serviceUrl);
}
