"""GaussianSet import/export in the de-facto 3DGS PLY layout.

Binary little-endian PLY, one `vertex` element per Gaussian with float32
properties, in this order:

  x y z nx ny nz f_dc_0 f_dc_1 f_dc_2 opacity scale_0 scale_1 scale_2
  rot_0 rot_1 rot_2 rot_3

Conventions of the ecosystem viewers: normals are written as zeros, scales are
stored in log space, opacity as a logit, RGB as zeroth-order spherical
harmonics (f_dc = (c - 0.5) / C0 with C0 = 0.28209479177387814), and rot_* is
the wxyz quaternion. UV texel bindings are not part of the interchange format.
"""

from __future__ import annotations

import numpy as np

from .errors import StorageError
from .gaussians import GaussianSet

SH_C0 = 0.28209479177387814

_PROPERTIES = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2",
               "opacity", "scale_0", "scale_1", "scale_2",
               "rot_0", "rot_1", "rot_2", "rot_3"]

_LOGIT_CLIP = 1e-6


def export_ply(gset: GaussianSet, path) -> None:
    n = len(gset)
    header = "\n".join(
        ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
        + [f"property float {p}" for p in _PROPERTIES] + ["end_header", ""])
    data = np.zeros((n, len(_PROPERTIES)), dtype="<f4")
    data[:, 0:3] = gset.positions
    c = np.clip(gset.colors.astype(np.float64), _LOGIT_CLIP, 1 - _LOGIT_CLIP)
    data[:, 6:9] = ((c - 0.5) / SH_C0).astype(np.float32)
    op = np.clip(gset.opacities.astype(np.float64), _LOGIT_CLIP, 1 - _LOGIT_CLIP)
    data[:, 9] = np.log(op / (1.0 - op)).astype(np.float32)
    data[:, 10:13] = np.log(gset.scales.astype(np.float64)).astype(np.float32)
    data[:, 13:17] = gset.rotations
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(data.tobytes())


def import_ply(path) -> GaussianSet:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply") or end < 0:
        raise StorageError(f"{path}: not a PLY file")
    header = blob[:end].decode("ascii", errors="replace").splitlines()
    if "format binary_little_endian 1.0" not in header[1]:
        raise StorageError(f"{path}: only binary little-endian PLY is supported")
    n = None
    props = []
    for line in header:
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
        elif line.startswith("property float"):
            props.append(line.split()[-1])
        elif line.startswith("property") and "float" not in line:
            raise StorageError(f"{path}: non-float property {line!r} unsupported")
    if n is None:
        raise StorageError(f"{path}: missing vertex element")
    body = blob[end + len(b"end_header\n"):]
    expected = n * len(props) * 4
    if len(body) < expected:
        raise StorageError(f"{path}: truncated PLY body")
    data = np.frombuffer(body[:expected], dtype="<f4").reshape(n, len(props))
    col = {p: i for i, p in enumerate(props)}
    missing = [p for p in _PROPERTIES if p not in col and not p.startswith("n")]
    if missing:
        raise StorageError(f"{path}: missing properties {missing}")

    def grab(names):
        return np.stack([data[:, col[p]] for p in names], axis=1)

    positions = grab(["x", "y", "z"])
    f_dc = grab(["f_dc_0", "f_dc_1", "f_dc_2"]).astype(np.float64)
    colors = np.clip(f_dc * SH_C0 + 0.5, 0.0, 1.0).astype(np.float32)
    logit = data[:, col["opacity"]].astype(np.float64)
    opacities = (1.0 / (1.0 + np.exp(-logit))).astype(np.float32)
    scales = np.exp(grab(["scale_0", "scale_1", "scale_2"]).astype(np.float64)
                    ).astype(np.float32)
    rotations = grab(["rot_0", "rot_1", "rot_2", "rot_3"]).astype(np.float64)
    norms = np.linalg.norm(rotations, axis=1)
    norms[norms < 1e-8] = 1.0
    rotations = (rotations / norms[:, None]).astype(np.float32)
    return GaussianSet(positions, scales, rotations, opacities, colors)
