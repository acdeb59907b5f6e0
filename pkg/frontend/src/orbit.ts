/**
 * Orbit camera: azimuth/elevation/radius around the head, mapped to the
 * service's camera JSON. Azimuth 0 is the frontal view; no free-fly.
 */

import type { CameraJson } from "./types.js";

export interface OrbitState {
  azimuth: number;   // radians, 0 = front
  elevation: number; // radians
  radius: number;    // world units
}

export const DEFAULT_ORBIT: OrbitState = { azimuth: 0, elevation: 0, radius: 2.6 };
export const ORBIT_LIMITS = {
  elevation: [-1.2, 1.2] as const,
  radius: [1.2, 6.0] as const,
};

export function clampOrbit(state: OrbitState): OrbitState {
  const wrap = (a: number) => {
    const two = Math.PI * 2;
    return ((a % two) + two) % two;
  };
  return {
    azimuth: wrap(state.azimuth),
    elevation: Math.min(ORBIT_LIMITS.elevation[1],
                        Math.max(ORBIT_LIMITS.elevation[0], state.elevation)),
    radius: Math.min(ORBIT_LIMITS.radius[1],
                     Math.max(ORBIT_LIMITS.radius[0], state.radius)),
  };
}

export function orbitToCamera(state: OrbitState, imageSize: number,
                              fov = 0.62): CameraJson {
  const s = clampOrbit(state);
  const x = s.radius * Math.cos(s.elevation) * Math.sin(s.azimuth);
  const y = s.radius * Math.sin(s.elevation);
  const z = s.radius * Math.cos(s.elevation) * Math.cos(s.azimuth);
  return {
    position: [x, y, z],
    look_at: [0, 0, 0],
    up: [0, 1, 0],
    vertical_fov: fov,
    image_size: [imageSize, imageSize],
    near: 0.1,
    far: 20.0,
  };
}
