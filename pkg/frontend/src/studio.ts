/**
 * Assembles the studio: connection bar, session header with the current
 * version, the stale-version refresh prompt, and the three panels
 * (session gallery, interpolation scrubber, evaluation). One browser tab
 * owns one session; a concurrent writer shows up as a version-conflict
 * prompt here, never as a silent overwrite.
 */

import type { StudioApp } from "./app.js";
import { el } from "./dom.js";
import { mountEvaluation, type EvaluationView } from "./evaluation.js";
import { mountGallery, type GalleryView } from "./gallery.js";
import { mountScrubber, type ScrubberView } from "./scrubber.js";
import type { StudioState } from "./state.js";

export interface StudioViews {
  gallery: GalleryView;
  scrubber: ScrubberView;
  evaluation: EvaluationView;
  update(state: StudioState): void;
}

export function mountStudio(root: HTMLElement, app: StudioApp): StudioViews {
  const urlInput = el("input", { type: "text", size: 40, "data-testid": "service-url" });
  urlInput.value = app.store.get().serviceUrl;
  const connectButton = el("button", {
    type: "button",
    "data-testid": "connect",
    onclick: () => void app.connect(urlInput.value),
  }, ["connect"]);

  const versionBadge = el("span", { className: "version", "data-testid": "session-version" });
  const sessionIdBadge = el("code", { "data-testid": "session-id" });

  const stalePrompt = el("div", {
    className: "stale-prompt",
    "data-testid": "stale-prompt",
    hidden: true,
  }, [
    el("span", {}, [
      "This session was changed elsewhere; the prototypes on screen are a stale version. ",
    ]),
    el("button", {
      type: "button",
      "data-testid": "refresh-session",
      onclick: () => void app.refreshSession(),
    }, ["refresh"]),
  ]);

  const galleryBox = el("section", { id: "gallery-panel" });
  const scrubberBox = el("section", { id: "scrubber-panel" });
  const evaluationBox = el("section", { id: "evaluation-panel" });

  root.append(
    el("header", {}, [
      el("h1", {}, ["prototype refinement studio"]),
      el("div", { className: "connection" }, [urlInput, connectButton]),
      el("div", { className: "session-line" }, [sessionIdBadge, " ", versionBadge]),
      stalePrompt,
    ]),
    galleryBox,
    scrubberBox,
    evaluationBox,
  );

  const gallery = mountGallery(galleryBox, app);
  const scrubber = mountScrubber(scrubberBox, app);
  const evaluation = mountEvaluation(evaluationBox, app);

  function update(state: StudioState): void {
    sessionIdBadge.textContent = state.sessionId ?? "no session";
    versionBadge.textContent = state.sessionId ? `version ${state.version}` : "";
    stalePrompt.hidden = !state.staleVersion;
    gallery.update(state);
    scrubber.update(state);
    evaluation.update(state);
  }

  app.store.subscribe(update);
  update(app.store.get());

  return { gallery, scrubber, evaluation, update };
}
