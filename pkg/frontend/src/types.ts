export interface CameraJson {
  position: [number, number, number];
  look_at: [number, number, number];
  up: [number, number, number];
  vertical_fov: number;
  image_size: [number, number];
  near?: number;
  far?: number;
}

export type Tool = "draw" | "erase";

export interface StrokeEvent {
  tool: Tool;
  points: Array<[number, number]>; // canvas coordinates
  width: number;                   // brush width in raster pixels, >= 1
}

export interface EditSummary {
  session_id: string;
  changed: boolean;
  mask_pixels_2d: number;
  selected_gaussians: number;
  uv_mask_texels: number;
  undo_depth: number;
  timings_ms: Record<string, number>;
  total_ms: number;
}

export interface ServiceError {
  error: { code: string; message: string };
}

export interface StreamEvent {
  type: "hello" | "edit" | "error" | "ack" | "pong";
  summary?: EditSummary;
  frame_png_b64?: string;
  code?: string;
  message?: string;
}
