/**
 * Evaluation panel: upload a labeled validation set (one file input per
 * class), run it against the session's current prototypes, and show the
 * service's accuracy verbatim next to a per-image correct/incorrect grid.
 * Re-running after a commit adds a delta badge against the previous run,
 * so the effect of a refinement is visible as one number.
 */

import type { EvaluateItem } from "./api.js";
import type { StudioApp } from "./app.js";
import { clear, el } from "./dom.js";
import { pixelImage, readFileAsBase64 } from "./png.js";
import type { StudioState } from "./state.js";

export interface EvaluationView {
  update(state: StudioState): void;
  /** Test hook: stage labeled items without going through file inputs. */
  setItems(items: EvaluateItem[]): void;
  run(): Promise<void>;
}

export function mountEvaluation(container: HTMLElement, app: StudioApp): EvaluationView {
  let items: EvaluateItem[] = [];
  const fileInputs: HTMLInputElement[] = [];

  const inputsBox = el("div", { className: "eval-inputs" });
  const runButton = el("button", {
    type: "button",
    "data-testid": "run-evaluation",
    disabled: true,
    onclick: () => void run(),
  }, ["run evaluation"]);
  const resultBox = el("div", { className: "eval-result", "data-testid": "eval-result" });

  container.append(el("h2", {}, ["evaluate"]), inputsBox, runButton, resultBox);

  function syncRunButton(): void {
    runButton.disabled = items.length === 0;
  }

  async function collectFromInputs(): Promise<void> {
    const collected: EvaluateItem[] = [];
    for (let label = 0; label < fileInputs.length; label++) {
      const input = fileInputs[label];
      for (const file of Array.from(input?.files ?? [])) {
        collected.push({ image: await readFileAsBase64(file), label });
      }
    }
    items = collected;
    syncRunButton();
  }

  async function run(): Promise<void> {
    await app.runEvaluation(items);
  }

  function update(state: StudioState): void {
    if (fileInputs.length !== state.classNames.length) {
      clear(inputsBox);
      fileInputs.length = 0;
      state.classNames.forEach((name, label) => {
        const input = el("input", {
          type: "file",
          accept: "image/png",
          multiple: true,
          "data-testid": `eval-files-${label}`,
        });
        input.addEventListener("change", () => void collectFromInputs());
        fileInputs.push(input);
        inputsBox.append(el("label", { className: "eval-class" }, [`${name} `, input]));
      });
    }

    clear(resultBox);
    const report = state.lastEvaluation;
    if (!report) return;

    const header = el("p", {}, [
      "accuracy ",
      el("strong", { "data-testid": "accuracy-value" }, [String(report.accuracy)]),
      ` at version ${report.version}`,
    ]);
    resultBox.append(header);

    const previous = state.previousEvaluation;
    if (previous) {
      const delta = report.accuracy - previous.accuracy;
      const badge = el("span", {
        className: `delta-badge ${delta >= 0 ? "up" : "down"}`,
        "data-testid": "delta-badge",
      }, [`${delta >= 0 ? "+" : ""}${delta.toFixed(4)} vs previous run`]);
      header.append(" ", badge);
    }

    const grid = el("div", { className: "eval-grid", "data-testid": "eval-grid" });
    report.images.forEach((image, i) => {
      const correct = report.correct[i] === true;
      const tile = el("figure", {
        className: `eval-tile ${correct ? "correct" : "incorrect"}`,
        "data-correct": String(correct),
      }, [
        pixelImage(image, 2),
        el("figcaption", {}, [
          `label ${report.labels[i]} → predicted ${report.predicted[i]}`,
        ]),
      ]);
      grid.append(tile);
    });
    resultBox.append(grid);

    resultBox.append(
      el("p", { className: "per-class" }, [
        "misclassified per class: ",
        report.misclassifiedPerClass.join(", "),
      ]),
    );
  }

  return {
    update,
    setItems(next) {
      items = next;
      syncRunButton();
    },
    run,
  };
}
