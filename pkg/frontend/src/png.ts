/**
 * Presentation helpers for base64 PNG strings.
 *
 * Decoded images are tiny (typically 32x32), so the studio shows them at a
 * nearest-neighbor upscale; the browser does the scaling via
 * `image-rendering: pixelated`, keeping every displayed pixel an exact
 * copy of a service-provided pixel.
 */

const PNG_SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

/** Default display upscale factor for decoded frames and prototypes. */
export const DISPLAY_SCALE = 4;

export function pngBytes(base64: string): Uint8Array {
  const binary = atob(base64);
  const bytes = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) bytes[i] = binary.charCodeAt(i);
  return bytes;
}

/** Read width/height from the PNG header (IHDR is always the first chunk). */
export function pngDimensions(base64: string): { width: number; height: number } {
  const bytes = pngBytes(base64);
  if (bytes.length < 24 || PNG_SIGNATURE.some((b, i) => bytes[i] !== b)) {
    throw new Error("not a PNG");
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  return { width: view.getUint32(16), height: view.getUint32(20) };
}

export function pngDataUri(base64: string): string {
  return `data:image/png;base64,${base64}`;
}

/**
 * Build an <img> that shows a base64 PNG at an integer nearest-neighbor
 * upscale. Width/height come from the PNG header, so the element has its
 * final size before the image loads.
 */
export function pixelImage(base64: string, scale: number = DISPLAY_SCALE): HTMLImageElement {
  const { width, height } = pngDimensions(base64);
  const img = document.createElement("img");
  img.src = pngDataUri(base64);
  img.width = width * scale;
  img.height = height * scale;
  img.style.imageRendering = "pixelated";
  img.className = "pixel-img";
  return img;
}

/** Read an uploaded file into the base64 payload the wire format expects. */
export function readFileAsBase64(file: Blob): Promise<string> {
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onerror = () => reject(reader.error ?? new Error("file read failed"));
    reader.onload = () => {
      const uri = String(reader.result);
      const comma = uri.indexOf(",");
      if (comma < 0) {
        reject(new Error("unexpected data URI shape"));
        return;
      }
      resolve(uri.slice(comma + 1));
    };
    reader.readAsDataURL(file);
  });
}
