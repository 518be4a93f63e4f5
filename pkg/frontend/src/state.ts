/**
 * Studio state and a minimal observable store.
 *
 * Two invariants the state shape enforces by construction:
 *  - every image and number in the state was copied verbatim from a
 *    service response (the store holds base64 strings and JSON values,
 *    never locally computed pixels or scores);
 *  - `version` is the session version the displayed gallery belongs to.
 *    A 409 from the service sets `staleVersion` instead of mutating the
 *    gallery, so a conflicting writer is surfaced, never overwritten.
 */

export interface GalleryRow {
  classIndex: number;
  name: string;
  /** First uploaded support image of the class, as sent to the service. */
  supportThumb: string;
  /** Decoded prototype image returned by the service. */
  prototype: string;
  prototypeHash: string;
}

export interface ScrubberState {
  classIndex: number;
  guide: string;
  /** Blend positions and decoded frames, verbatim from one interpolate response. */
  alphas: number[];
  frames: string[];
  selected: number;
}

export interface EvaluationDisplay {
  accuracy: number;
  predicted: number[];
  correct: boolean[];
  misclassifiedPerClass: number[];
  /** Session version the evaluation ran against. */
  version: number;
  /** The uploaded images, kept so the result grid can show them. */
  images: string[];
  labels: number[];
}

export interface StudioState {
  serviceUrl: string;
  models: { id: string; resolution: [number, number] }[];
  sessionId: string | null;
  version: number;
  classNames: string[];
  gallery: GalleryRow[];
  scrubber: ScrubberState | null;
  lastEvaluation: EvaluationDisplay | null;
  previousEvaluation: EvaluationDisplay | null;
  /** True after a 409: the displayed version lost a race; prompt to refresh. */
  staleVersion: boolean;
  /** Inline error message from the last failed request, if any. */
  error: string | null;
  busy: boolean;
}

export function initialState(serviceUrl: string): StudioState {
  return {
    serviceUrl,
    models: [],
    sessionId: null,
    version: 0,
    classNames: [],
    gallery: [],
    scrubber: null,
    lastEvaluation: null,
    previousEvaluation: null,
    staleVersion: false,
    error: null,
    busy: false,
  };
}

export type Listener<T> = (state: T) => void;

export class Store<T> {
  private state: T;
  private listeners: Listener<T>[] = [];

  constructor(state: T) {
    this.state = state;
  }

  get(): T {
    return this.state;
  }

  set(patch: Partial<T>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  subscribe(listener: Listener<T>): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }
}
