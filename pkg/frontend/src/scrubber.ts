/**
 * Interpolation scrubber: pick a class, upload a guide image, request the
 * decoded frames between the class prototype (leftmost, blend 0) and the
 * guide's embedding (rightmost, blend 1), scrub a slider across them, and
 * commit the selected frame. The commit sends the frame's exact blend
 * value as returned by the service, together with the session version on
 * screen.
 */

import type { StudioApp } from "./app.js";
import { clear, el } from "./dom.js";
import { pixelImage, readFileAsBase64 } from "./png.js";
import type { StudioState } from "./state.js";

export interface ScrubberView {
  update(state: StudioState): void;
  /** Test hook: set the guide image without going through a file input. */
  setGuide(image: string): void;
  requestFrames(): Promise<void>;
}

export function mountScrubber(container: HTMLElement, app: StudioApp): ScrubberView {
  let guide: string | null = null;

  const classSelect = el("select", { "data-testid": "scrubber-class" });
  const guideInput = el("input", {
    type: "file",
    accept: "image/png",
    "data-testid": "guide-file",
  });
  guideInput.addEventListener("change", () => {
    void (async () => {
      const file = guideInput.files?.[0];
      if (file) guide = await readFileAsBase64(file);
    })();
  });
  const stepsInput = el("input", {
    type: "number",
    min: 2,
    value: 10,
    "data-testid": "steps-input",
  });
  const renderButton = el("button", {
    type: "button",
    "data-testid": "render-frames",
    onclick: () => void requestFrames(),
  }, ["render frames"]);

  const form = el("div", { className: "scrubber-form" }, [
    el("label", {}, ["class ", classSelect]),
    el("label", {}, ["guide ", guideInput]),
    el("label", {}, ["steps ", stepsInput]),
    renderButton,
  ]);

  const stripBox = el("div", { className: "strip", "data-testid": "strip", hidden: true });
  container.append(el("h2", {}, ["refine"]), form, stripBox);

  async function requestFrames(): Promise<void> {
    if (guide === null) return;
    const steps = Number(stepsInput.value) || 10;
    await app.renderStrip(Number(classSelect.value), guide, steps);
  }

  function update(state: StudioState): void {
    clear(classSelect);
    state.classNames.forEach((name, k) => {
      classSelect.append(el("option", { value: k }, [`${k}: ${name}`]));
    });

    clear(stripBox);
    const scrubber = state.scrubber;
    stripBox.hidden = scrubber === null;
    if (!scrubber) return;

    const frame = scrubber.frames[scrubber.selected];
    const alpha = scrubber.alphas[scrubber.selected];
    if (frame === undefined || alpha === undefined) return;

    const slider = el("input", {
      type: "range",
      min: 0,
      max: scrubber.frames.length - 1,
      step: 1,
      "data-testid": "frame-slider",
    });
    slider.value = String(scrubber.selected);
    slider.addEventListener("input", () => app.selectFrame(Number(slider.value)));

    const frameImg = pixelImage(frame);
    frameImg.setAttribute("data-testid", "selected-frame");

    stripBox.append(
      el("div", { className: "strip-slider" }, [
        el("span", {}, ["prototype"]),
        slider,
        el("span", {}, ["guide"]),
      ]),
      el("figure", {}, [
        frameImg,
        el("figcaption", { "data-testid": "alpha-readout" }, [`blend ${alpha}`]),
      ]),
      el("button", {
        type: "button",
        "data-testid": "commit-frame",
        onclick: () => void app.commitSelected(),
      }, [`commit frame ${scrubber.selected}`]),
    );
  }

  return {
    update,
    setGuide(image) {
      guide = image;
    },
    requestFrames,
  };
}
