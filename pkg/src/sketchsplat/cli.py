"""Batch and developer entry point.

Subcommands: generate, edit, render, ablate, bench, verify, export-ply.
Exit codes: 0 success, 1 verification-suite failure, 2 usage/input error.
All outputs go to explicitly named paths; manifests embed flags and seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cameras import Camera, default_camera, orbit_camera
from .errors import InputError, SketchSplatError, StorageError
from .imgio import load_reference, load_sketch, save_rgb
from .mesh import default_head_mesh, load_mesh_obj
from .nn.arch import DEFAULT_ARCH
from .nn.weights import init_weights, load_weights, save_weights
from .plyio import export_ply
from .raster import rasterize
from .scenes import random_scene
from .uvmap import decode_uv_to_gaussians

DEFAULT_SEED = 1234


def _setup_threads(args) -> None:
    threads = 1 if getattr(args, "deterministic", False) else \
        getattr(args, "threads", None)
    if threads:
        import numba
        import torch
        numba.set_num_threads(max(1, int(threads)))
        torch.set_num_threads(max(1, int(threads)))


def _load_mesh(args):
    if getattr(args, "mesh", None):
        return load_mesh_obj(args.mesh)
    return default_head_mesh()


def _load_weights(args):
    if getattr(args, "weights", None):
        return load_weights(args.weights)
    return init_weights(DEFAULT_ARCH, getattr(args, "seed", DEFAULT_SEED))


def _camera_from_arg(text: str | None, size=(512, 512)) -> Camera:
    if not text:
        return default_camera(size)
    if text.startswith("@"):
        try:
            text = Path(text[1:]).read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read camera file: {exc}") from exc
    return Camera.from_json(text)


def _write_manifest(out_dir: Path, args, extra: dict) -> None:
    manifest = {"tool": "sketchsplat", "version": __version__,
                "argv": sys.argv[1:], **extra}
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")


def _turntable(gset, out_path, size=256, frames=6) -> None:
    strips = []
    for i in range(frames):
        az = 2 * np.pi * i / frames
        frame = rasterize(gset, orbit_camera(az, 0.1, image_size=(size, size)))
        strips.append(frame.to_uint8())
    save_rgb(out_path, np.concatenate(strips, axis=1) / 255.0)


def cmd_generate(args) -> int:
    from .editing import create_session
    from .session_store import save_session_dir
    _setup_threads(args)
    mesh = _load_mesh(args)
    store = _load_weights(args)
    sketch = load_sketch(args.sketch)
    reference = load_reference(args.reference)
    camera = _camera_from_arg(args.camera)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    session = create_session(sketch, reference, mesh, store, camera)
    gen_ms = (time.perf_counter() - t0) * 1000
    save_session_dir(session, out / "session")
    if not args.weights:
        save_weights(out / "weights.sswt", store)
    gset = session.current_set(mesh)
    rasterize(gset, camera).save_png(out / "front.png")
    _turntable(gset, out / "turntable.png")
    _write_manifest(out, args, {
        "kind": "generation",
        "seed": getattr(args, "seed", DEFAULT_SEED),
        "weights_fingerprint": store.fingerprint,
        "arch_sha": store.arch.sha(),
        "session_id": session.session_id,
        "gaussians": len(gset),
        "generate_ms": round(gen_ms, 2),
        "set_hash": gset.content_hash(),
    })
    print(f"generated {len(gset)} gaussians in {gen_ms:.0f} ms -> {out}")
    return 0


def cmd_edit(args) -> int:
    from .ablation import psnr, seam_metric, subset_footprint
    from .editing import (apply_edit, build_uv_mask, composite_3d_baseline,
                          diff_sketches, mask_texel_indices, regenerate_baseline,
                          resize_mask_nearest, select_edited_gaussians)
    from .raster import compute_influence_weights, contribution_region
    from .session_store import load_session_dir, save_session_dir
    from scipy import ndimage
    _setup_threads(args)
    if args.strategy not in ("fusion", "composite", "regen"):
        raise InputError(f"unknown strategy {args.strategy!r}")
    mesh = _load_mesh(args)
    store = _load_weights(args)
    session = load_session_dir(args.session)
    if session.current.weights_fingerprint != store.fingerprint:
        raise InputError("session was generated with different weights "
                         "(fingerprint mismatch); pass the matching --weights")
    new_sketch = load_sketch(args.sketch)
    camera = _camera_from_arg(args.camera, session.camera.image_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    original_set = session.current_set(mesh)
    original_frame = rasterize(original_set, camera)
    mask2d = diff_sketches(session.current_sketch, new_sketch, args.dilation_radius)
    t0 = time.perf_counter()
    if args.strategy == "fusion":
        out_set, session, summary = apply_edit(
            session, new_sketch, session.reference, camera, mesh, store,
            dilation_radius=args.dilation_radius, uv_dilation=args.uv_dilation,
            tau_rel=args.tau_rel)
        timings = summary.timings_ms
        save_session_dir(session, out / "session")
    else:
        cam_mask = resize_mask_nearest(mask2d, camera.image_size)
        influence = compute_influence_weights(original_set, camera, cam_mask)
        selected = select_edited_gaussians(influence, tau_rel=args.tau_rel)
        base_mask = build_uv_mask(selected, original_set, mesh.uv_resolution,
                                  args.uv_dilation)
        rows = mask_texel_indices(base_mask, original_set)
        regen = regenerate_baseline(new_sketch, session.reference, mesh, store)
        out_set = regen if args.strategy == "regen" else \
            composite_3d_baseline(original_set, regen, rows)
        timings = {"total_ms": (time.perf_counter() - t0) * 1000}
    elapsed = (time.perf_counter() - t0) * 1000

    frame = rasterize(out_set, camera)
    original_frame.save_png(out / "before.png")
    frame.save_png(out / "after.png")

    cam_mask = resize_mask_nearest(mask2d, camera.image_size)
    influence = compute_influence_weights(original_set, camera, cam_mask)
    selected = select_edited_gaussians(influence, tau_rel=args.tau_rel)
    base_mask = build_uv_mask(selected, original_set, mesh.uv_resolution,
                              args.uv_dilation)
    rows = mask_texel_indices(base_mask, original_set)
    footprint = subset_footprint(original_set, rows, camera) | \
        subset_footprint(out_set, rows, camera)
    unedited = ~ndimage.binary_dilation(footprint, iterations=1)
    splice = contribution_region(original_set, camera, rows)
    report = {
        "strategy": args.strategy,
        "mask_pixels_2d": int(mask2d.sum()),
        "selected_gaussians": int(selected.size),
        "uv_mask_texels": int(base_mask.sum()),
        "unedited_psnr_db": psnr(frame.rgb, original_frame.rgb, unedited),
        "edited_psnr_db": psnr(frame.rgb, original_frame.rgb, splice),
        "seam": seam_metric(frame, original_frame, splice),
        "elapsed_ms": elapsed,
        "timings_ms": {k: round(v, 2) for k, v in timings.items()},
        "frame_hash": frame.content_hash(),
    }
    with open(out / "report.jsonl", "w", encoding="utf-8") as f:
        f.write(json.dumps(report, sort_keys=True) + "\n")
    print(f"{args.strategy}: mask={report['mask_pixels_2d']}px "
          f"selected={report['selected_gaussians']} "
          f"texels={report['uv_mask_texels']} psnr={report['unedited_psnr_db']:.1f}dB "
          f"seam={report['seam']:.4f} ({elapsed:.0f} ms)")
    return 0


def cmd_render(args) -> int:
    from .session_store import load_session_dir
    _setup_threads(args)
    mesh = _load_mesh(args)
    session = load_session_dir(args.session)
    camera = _camera_from_arg(args.camera, session.camera.image_size)
    frame = rasterize(session.current_set(mesh), camera)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.raw:
        frame.save_raw(out)
    else:
        frame.save_png(out)
    print(f"rendered {out} (hash {frame.content_hash()[:12]})")
    return 0


def cmd_ablate(args) -> int:
    from .ablation import run_scenario_suite
    _setup_threads(args)
    mesh = _load_mesh(args)
    store = _load_weights(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    results = run_scenario_suite(mesh, store, count=args.count,
                                 base_seed=args.base_seed, out_path=out)
    wins = sum(r.strategies["fusion"]["seam"] <= r.strategies["composite"]["seam"]
               for r in results)
    psnr_wins = sum(r.strategies["fusion"]["unedited_psnr_db"] >
                    r.strategies["regen"]["unedited_psnr_db"] for r in results)
    print(f"fusion seam <= composite: {wins}/{len(results)}; "
          f"fusion psnr > regen: {psnr_wins}/{len(results)} -> {out}")
    return 0


def cmd_bench(args) -> int:
    from .raster import _prepare
    _setup_threads(args)
    try:
        w, h = (int(v) for v in args.resolution.lower().split("x"))
    except ValueError as exc:
        raise InputError(f"--resolution expects WxH, got {args.resolution!r}") from exc
    if args.frames < 1:
        raise InputError("--frames must be >= 1")
    camera = default_camera((w, h))
    scene = random_scene(0, args.gaussians, opacity_max=0.8)
    rasterize(scene, camera)  # warm JIT
    t_proj = time.perf_counter()
    for _ in range(args.frames):
        _prepare(camera, scene)
    t_proj = (time.perf_counter() - t_proj) / max(args.frames, 1)
    t0 = time.perf_counter()
    for _ in range(args.frames):
        frame = rasterize(scene, camera)
    dt = (time.perf_counter() - t0) / max(args.frames, 1)
    print(f"{args.gaussians} gaussians @ {w}x{h}: {dt * 1000:.2f} ms/frame "
          f"({1.0 / dt:.1f} FPS) over {args.frames} frames")
    print(f"  project+bin: {t_proj * 1e6:.0f} us, composite: "
          f"{(dt - t_proj) * 1e6:.0f} us, coverage {frame.alpha.mean():.2f}")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suite
    _setup_threads(args)
    results = run_suite(args.suite)
    failures = 0
    for name, passed, detail in results:
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        failures += 0 if passed else 1
    if failures:
        print(f"{failures} of {len(results)} checks failed")
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def cmd_export_ply(args) -> int:
    from .session_store import load_session_dir
    _setup_threads(args)
    mesh = _load_mesh(args)
    if args.session:
        gset = load_session_dir(args.session).current_set(mesh)
    else:
        from .pipeline.fine import GenerationArtifacts
        artifacts = GenerationArtifacts.load(args.artifacts)
        gset = decode_uv_to_gaussians(artifacts.attributes, mesh)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_ply(gset, out)
    print(f"exported {len(gset)} gaussians -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sketchsplat",
                                description="sketch-driven gaussian head workbench")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, mesh=True, weights=True):
        sp.add_argument("--threads", type=int, default=None,
                        help="cap worker threads (numba + torch)")
        sp.add_argument("--deterministic", action="store_true",
                        help="single-worker bit-stable run")
        if mesh:
            sp.add_argument("--mesh", default=None, help="OBJ template mesh path")
        if weights:
            sp.add_argument("--weights", default=None, help="weight container path")
            sp.add_argument("--seed", type=int, default=DEFAULT_SEED,
                            help="weight init seed when --weights is absent")

    sp = sub.add_parser("generate", help="generate a head from sketch + reference")
    sp.add_argument("--sketch", required=True)
    sp.add_argument("--reference", required=True)
    sp.add_argument("--camera", default=None, help="camera JSON or @file")
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(fn=cmd_generate)

    sp = sub.add_parser("edit", help="apply an edit strategy to a saved session")
    sp.add_argument("--session", required=True)
    sp.add_argument("--sketch", required=True)
    sp.add_argument("--camera", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--strategy", default="fusion",
                    choices=["fusion", "composite", "regen"])
    sp.add_argument("--dilation-radius", type=int, default=4,
                    help="screen-space diff dilation in px")
    sp.add_argument("--uv-dilation", type=int, default=1,
                    help="UV mask dilation in texels")
    sp.add_argument("--tau-rel", type=float, default=0.05,
                    help="significance threshold relative to the max weight")
    common(sp)
    sp.set_defaults(fn=cmd_edit)

    sp = sub.add_parser("render", help="render a saved session")
    sp.add_argument("--session", required=True)
    sp.add_argument("--camera", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--raw", action="store_true", help="raw float dump, not PNG")
    common(sp, weights=False)
    sp.set_defaults(fn=cmd_render)

    sp = sub.add_parser("ablate", help="run the editing-strategy scenario suite")
    sp.add_argument("--out", required=True, help="JSON-lines report path")
    sp.add_argument("--count", type=int, default=10)
    sp.add_argument("--base-seed", type=int, default=100)
    common(sp)
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("bench", help="rasterizer throughput benchmark")
    sp.add_argument("--gaussians", type=int, default=13000)
    sp.add_argument("--resolution", default="512x512")
    sp.add_argument("--frames", type=int, default=60)
    common(sp, mesh=False, weights=False)
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("verify", help="run oracle/invariant suites")
    sp.add_argument("--suite", default="all", choices=["oracle", "invariants", "all"])
    common(sp, mesh=False, weights=False)
    sp.set_defaults(fn=cmd_verify)

    sp = sub.add_parser("export-ply", help="export gaussians in 3DGS PLY layout")
    group = sp.add_mutually_exclusive_group(required=True)
    group.add_argument("--session")
    group.add_argument("--artifacts")
    sp.add_argument("--out", required=True)
    common(sp, weights=False)
    sp.set_defaults(fn=cmd_export_ply)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses code 2 for usage errors already
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (InputError, StorageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SketchSplatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
