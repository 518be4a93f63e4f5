/**
 * Session setup and the prototype gallery.
 *
 * The setup form collects named classes with one or more support images
 * each and creates a session. The gallery then shows, per class, the first
 * support image side by side with the decoded prototype the service
 * returned — the model's own picture of the class — and re-renders
 * whenever the session version changes, so the images on screen always
 * belong to the version in the header.
 */

import type { SupportClass } from "./api.js";
import type { StudioApp } from "./app.js";
import { clear, el } from "./dom.js";
import { pixelImage, readFileAsBase64 } from "./png.js";
import type { StudioState } from "./state.js";

interface ClassDraft {
  nameInput: HTMLInputElement;
  fileInput: HTMLInputElement;
  images: string[];
}

export interface GalleryView {
  update(state: StudioState): void;
  /** Test hook: feed a class row without going through a file input. */
  addDraft(name: string, images: string[]): void;
  createFromDrafts(): Promise<void>;
}

export function mountGallery(container: HTMLElement, app: StudioApp): GalleryView {
  const drafts: ClassDraft[] = [];

  const modelSelect = el("select", { "data-testid": "model-select" });
  const rowsBox = el("div", { className: "class-rows" });
  const addButton = el("button", {
    type: "button",
    "data-testid": "add-class",
    onclick: () => addRow(),
  }, ["add class"]);
  const createButton = el("button", {
    type: "button",
    "data-testid": "create-session",
    onclick: () => void createFromDrafts(),
  }, ["create session"]);

  const form = el("div", { className: "setup-form" }, [
    el("label", {}, ["model ", modelSelect]),
    rowsBox,
    el("div", {}, [addButton, createButton]),
  ]);

  const errorBox = el("p", { className: "error", "data-testid": "setup-error", hidden: true });
  const galleryBox = el("div", { className: "gallery", "data-testid": "gallery" });
  container.append(el("h2", {}, ["session"]), form, errorBox, galleryBox);

  function addRow(name = "", images: string[] = []): ClassDraft {
    const nameInput = el("input", {
      type: "text",
      placeholder: `class ${drafts.length}`,
      "data-testid": `class-name-${drafts.length}`,
    });
    nameInput.value = name;
    const fileInput = el("input", {
      type: "file",
      accept: "image/png",
      multiple: true,
      "data-testid": `class-files-${drafts.length}`,
    });
    const draft: ClassDraft = { nameInput, fileInput, images };
    fileInput.addEventListener("change", () => {
      void (async () => {
        draft.images = await Promise.all(
          Array.from(fileInput.files ?? []).map((f) => readFileAsBase64(f)),
        );
      })();
    });
    drafts.push(draft);
    rowsBox.append(el("div", { className: "class-row" }, [nameInput, fileInput]));
    return draft;
  }

  async function createFromDrafts(): Promise<void> {
    const classes: SupportClass[] = drafts
      .filter((d) => d.images.length > 0)
      .map((d, k) => ({ name: d.nameInput.value || `class ${k}`, images: d.images }));
    await app.createSession(modelSelect.value, classes);
  }

  addRow();
  addRow();

  function update(state: StudioState): void {
    clear(modelSelect);
    for (const model of state.models) {
      modelSelect.append(el("option", { value: model.id }, [model.id]));
    }

    errorBox.hidden = state.error === null;
    errorBox.textContent = state.error ?? "";

    clear(galleryBox);
    for (const row of state.gallery) {
      galleryBox.append(
        el("div", { className: "gallery-row", "data-testid": `gallery-row-${row.classIndex}` }, [
          el("span", { className: "class-name" }, [row.name]),
          el("figure", {}, [
            pixelImage(row.supportThumb),
            el("figcaption", {}, ["support"]),
          ]),
          el("figure", {}, [
            withTestId(pixelImage(row.prototype), `prototype-img-${row.classIndex}`),
            el("figcaption", {}, ["prototype"]),
          ]),
          el("code", { className: "hash" }, [row.prototypeHash.slice(0, 12)]),
        ]),
      );
    }
  }

  return {
    update,
    addDraft(name, images) {
      addRow(name, images);
    },
    createFromDrafts,
  };
}

function withTestId(img: HTMLImageElement, id: string): HTMLImageElement {
  img.setAttribute("data-testid", id);
  return img;
}
