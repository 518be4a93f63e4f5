/**
 * Studio coordinator: every user action is one method here, and every
 * method is a thin wrapper around one or two service calls. The app never
 * computes embeddings, blends, or scores locally — it copies service
 * responses into the store and lets the views render them.
 */

import { ApiError, StudioApi, type EvaluateItem, type SupportClass } from "./api.js";
import {
  initialState,
  Store,
  type EvaluationDisplay,
  type StudioState,
} from "./state.js";

export class StudioApp {
  readonly store: Store<StudioState>;
  private api: StudioApi;

  constructor(serviceUrl: string, apiFactory?: (url: string) => StudioApi) {
    this.makeApi = apiFactory ?? ((url) => new StudioApi(url));
    this.api = this.makeApi(serviceUrl);
    this.store = new Store(initialState(serviceUrl));
  }

  private readonly makeApi: (url: string) => StudioApi;

  /** Point the studio at a service and load its model list. */
  async connect(serviceUrl: string): Promise<void> {
    this.api = this.makeApi(serviceUrl);
    this.store.set({ ...initialState(serviceUrl) });
    await this.guard(async () => {
      const { models } = await this.api.listModels();
      this.store.set({
        models: models.map((m) => ({ id: m.model_id, resolution: m.resolution })),
      });
    });
  }

  /**
   * Create a session from named classes with their support images, then
   * fetch the decoded prototypes so the gallery can show each class's
   * support image next to what the model thinks the class looks like.
   */
  async createSession(modelId: string, classes: SupportClass[]): Promise<void> {
    await this.guard(async () => {
      const summary = await this.api.createSession(modelId, classes);
      const prototypes = await this.api.getPrototypes(summary.session_id);
      this.store.set({
        sessionId: summary.session_id,
        version: summary.version,
        classNames: summary.class_names,
        gallery: summary.class_names.map((name, k) => ({
          classIndex: k,
          name,
          supportThumb: classes[k]?.images[0] ?? "",
          prototype: prototypes.images[k] ?? "",
          prototypeHash: prototypes.prototype_hashes[k] ?? "",
        })),
        scrubber: null,
        lastEvaluation: null,
        previousEvaluation: null,
        staleVersion: false,
      });
    });
  }

  /**
   * Re-read the session and its prototypes. Clears a stale-version prompt
   * and drops interpolation frames, which belonged to the old version.
   */
  async refreshSession(): Promise<void> {
    const { sessionId } = this.store.get();
    if (!sessionId) return;
    await this.guard(async () => {
      const summary = await this.api.getSession(sessionId);
      const prototypes = await this.api.getPrototypes(sessionId);
      const gallery = this.store.get().gallery.map((row, k) => ({
        ...row,
        prototype: prototypes.images[k] ?? "",
        prototypeHash: prototypes.prototype_hashes[k] ?? "",
      }));
      this.store.set({
        version: summary.version,
        gallery,
        scrubber: null,
        staleVersion: false,
      });
    });
  }

  /** Ask the service for the prototype-to-guide frames of one class. */
  async renderStrip(classIndex: number, guide: string, steps: number): Promise<void> {
    const { sessionId } = this.store.get();
    if (!sessionId) return;
    await this.guard(async () => {
      const strip = await this.api.interpolate(sessionId, classIndex, guide, steps);
      this.store.set({
        scrubber: {
          classIndex,
          guide,
          alphas: strip.alphas,
          frames: strip.frames,
          selected: 0,
        },
      });
    });
  }

  selectFrame(index: number): void {
    const { scrubber } = this.store.get();
    if (!scrubber || index < 0 || index >= scrubber.frames.length) return;
    this.store.set({ scrubber: { ...scrubber, selected: index } });
  }

  /**
   * Commit the currently selected frame: sends the exact blend position of
   * that frame together with the displayed session version. A 409 answer
   * raises the refresh prompt and leaves the gallery untouched.
   */
  async commitSelected(): Promise<void> {
    const { sessionId, scrubber, version } = this.store.get();
    if (!sessionId || !scrubber) return;
    const alpha = scrubber.alphas[scrubber.selected];
    if (alpha === undefined) return;
    await this.guard(async () => {
      await this.api.commit(sessionId, scrubber.classIndex, alpha, scrubber.guide, version);
      await this.refreshSession();
    });
  }

  /** Score a labeled image set against the session's current prototypes. */
  async runEvaluation(items: EvaluateItem[]): Promise<void> {
    const { sessionId } = this.store.get();
    if (!sessionId || items.length === 0) return;
    await this.guard(async () => {
      const report = await this.api.evaluate(sessionId, items);
      const display: EvaluationDisplay = {
        accuracy: report.accuracy,
        predicted: report.predicted,
        correct: report.correct,
        misclassifiedPerClass: report.misclassified_per_class,
        version: report.version,
        images: items.map((i) => i.image),
        labels: items.map((i) => i.label),
      };
      this.store.set({
        previousEvaluation: this.store.get().lastEvaluation,
        lastEvaluation: display,
      });
    });
  }

  /** Run an action, mapping failures to inline error state. */
  private async guard(action: () => Promise<void>): Promise<void> {
    this.store.set({ busy: true, error: null });
    try {
      await action();
      this.store.set({ busy: false });
    } catch (err) {
      if (err instanceof ApiError && err.isVersionConflict) {
        this.store.set({ busy: false, staleVersion: true });
        return;
      }
      const message = err instanceof ApiError ? err.detail : String(err);
      this.store.set({ busy: false, error: message });
    }
  }
}
