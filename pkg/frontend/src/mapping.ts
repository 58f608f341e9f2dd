// Canvas <-> grid coordinate mapping. The frame is drawn with
// nearest-neighbor upscaling at an integer zoom factor, so every grid pixel
// covers an exact zoom x zoom square of canvas pixels and clicks land on
// true grid cells.

export interface ViewTransform {
  zoom: number;     // canvas pixels per grid pixel (integer >= 1)
  offsetX: number;  // canvas position of grid (0, 0)
  offsetY: number;
  gridW: number;
  gridH: number;
}

export function makeView(gridW: number, gridH: number, zoom: number,
                         offsetX = 0, offsetY = 0): ViewTransform {
  if (!Number.isInteger(zoom) || zoom < 1) {
    throw new Error(`zoom must be a positive integer, got ${zoom}`);
  }
  return { zoom, offsetX, offsetY, gridW, gridH };
}

/** Canvas click -> grid pixel, or null when outside the frame. */
export function canvasToGrid(view: ViewTransform, cx: number, cy: number):
    [number, number] | null {
  const gx = Math.floor((cx - view.offsetX) / view.zoom);
  const gy = Math.floor((cy - view.offsetY) / view.zoom);
  if (gx < 0 || gy < 0 || gx >= view.gridW || gy >= view.gridH) return null;
  return [gx, gy];
}

/** Top-left canvas corner of a grid pixel. */
export function gridToCanvas(view: ViewTransform, gx: number, gy: number):
    [number, number] {
  return [view.offsetX + gx * view.zoom, view.offsetY + gy * view.zoom];
}

/** Canvas center of a grid pixel (marker anchor). */
export function gridCenter(view: ViewTransform, gx: number, gy: number):
    [number, number] {
  const [x, y] = gridToCanvas(view, gx, gy);
  return [x + view.zoom / 2, y + view.zoom / 2];
}
