"""Session persistence: one directory per session, diffable and inspectable.

Layout:
  manifest.json     - session id, camera, weights fingerprint, stack order
  reference.png     - the appearance reference (preview)
  reference.sstn    - exact float32 reference raster
  stack/NNN/        - one snapshot per undo level (oldest first):
      sketch.png    - the snapshot's sketch (dark strokes on white, exact)
      <artifacts>   - GenerationArtifacts directory contents

A loaded session renders bit-identically to the saved one: attributes and
feature pyramids are stored as raw float32 containers.
"""

from __future__ import annotations

import json
from pathlib import Path


from .cameras import Camera
from .editing import EditSession
from .container import load_named_tensors, save_named_tensors
from .errors import StorageError
from .imgio import load_sketch, save_rgb, save_sketch
from .pipeline.fine import GenerationArtifacts


def save_session_dir(session: EditSession, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_rgb(d / "reference.png", session.reference)
    save_named_tensors(d / "reference.sstn", {"reference": session.reference})
    stack_dir = d / "stack"
    stack_dir.mkdir(exist_ok=True)
    names = []
    for i, (sketch, artifacts) in enumerate(session.undo_stack):
        name = f"{i:03d}"
        snap = stack_dir / name
        snap.mkdir(exist_ok=True)
        save_sketch(snap / "sketch.png", sketch)
        artifacts.save(snap)
        names.append(name)
    manifest = {
        "kind": "edit-session",
        "session_id": session.session_id,
        "camera": session.camera.to_json_dict(),
        "weights_fingerprint": session.current.weights_fingerprint,
        "stack": names,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True),
                                     encoding="utf-8")


def load_session_dir(directory) -> EditSession:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"cannot read session manifest in {d}: {exc}") from exc
    if manifest.get("kind") != "edit-session":
        raise StorageError(f"{d}: not a session directory")
    reference = load_named_tensors(d / "reference.sstn")["reference"]
    camera = Camera.from_json_dict(manifest["camera"])
    names = manifest["stack"]
    if not names:
        raise StorageError(f"{d}: session has an empty snapshot stack")
    snaps = []
    for name in names:
        snap = d / "stack" / name
        sketch = load_sketch(snap / "sketch.png")
        snaps.append((sketch, GenerationArtifacts.load(snap)))
    session = EditSession(snaps[0][0], reference, snaps[0][1], camera,
                          session_id=manifest["session_id"])
    for sketch, artifacts in snaps[1:]:
        session.push(sketch, artifacts)
    return session
