/** Case image compositing. The raw CXR is always drawn opaque; the
 * (pure-colormap) heatmap layer goes on top with the slider's opacity, so
 * alpha=0 shows the untouched radiograph and alpha=1 the full heatmap. */

export interface Drawable {
  width: number;
  height: number;
}

export interface OverlayContext {
  clear(): void;
  /** Draw an image covering the viewport at a given opacity. */
  drawImage(image: Drawable, alpha: number): void;
}

export interface RenderResult {
  drewRaw: boolean;
  drewHeatmap: boolean;
  badge: string | null;
}

export function renderCase(
  ctx: OverlayContext,
  raw: Drawable | null,
  heatmap: Drawable | null,
  alpha: number,
): RenderResult {
  if (alpha < 0 || alpha > 1 || Number.isNaN(alpha)) {
    throw new Error(`alpha must lie in [0, 1], got ${alpha}`);
  }
  ctx.clear();
  let drewRaw = false;
  let drewHeatmap = false;
  if (raw) {
    ctx.drawImage(raw, 1.0);
    drewRaw = true;
  }
  if (heatmap && alpha > 0) {
    ctx.drawImage(heatmap, alpha);
    drewHeatmap = true;
  }
  const badge = heatmap === null ? "no localization" : null;
  return { drewRaw, drewHeatmap, badge };
}

/** Adapter over a real canvas 2d context. */
export function canvasContext(canvas: HTMLCanvasElement): OverlayContext {
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");
  return {
    clear: () => {
      ctx.globalAlpha = 1.0;
      ctx.clearRect(0, 0, canvas.width, canvas.height);
    },
    drawImage: (image, alpha) => {
      ctx.globalAlpha = alpha;
      ctx.drawImage(image as CanvasImageSource, 0, 0, canvas.width, canvas.height);
      ctx.globalAlpha = 1.0;
    },
  };
}
