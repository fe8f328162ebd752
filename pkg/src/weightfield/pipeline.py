"""Run orchestration: corpus synthesis or ingestion, batch fitting with the
shared-initialization protocol, diffusion training with resume, sampling with
de-duplication, mesh extraction, evaluation, and the run manifest.

All artifacts live under ``config.run_dir`` with ``manifest.json`` at the
root; manifest contents are deterministic given the config seeds (no
timestamps or timings).
"""
from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import shapes
from .config import PipelineConfig
from .diffusion import (DenoiserConfig, NoiseSchedule, TokenLayout, ddim_sample, dedupe,
                        load_model, save_model, train)
from .field_mlp import (FieldMLPConfig, FitConfig, FitReport, WeightVector, field_to_grid,
                        fit_field, load_checkpoint, save_checkpoint)
from .geometry import (LabeledPointBatch, TriangleMesh, frame_times, is_watertight,
                       largest_component, load_mesh, marching_cubes,
                       normalize_to_unit_cube, sample_supervision_3d,
                       sample_supervision_4d, sample_surface_points, save_obj,
                       winding_numbers)
from .metrics import chamfer, evaluate_sets, normalize_cloud, temporal_distance

log = logging.getLogger(__name__)


class PipelineError(ValueError):
    """Input/configuration problems the caller can fix (CLI exit code 1)."""


def _seed_int(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _run_dir(config: PipelineConfig) -> Path:
    p = Path(config.run_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


# -- manifest --------------------------------------------------------------
def manifest_path(config: PipelineConfig) -> Path:
    return _run_dir(config) / "manifest.json"


def load_manifest(config: PipelineConfig) -> dict:
    path = manifest_path(config)
    if not path.exists():
        raise PipelineError(f"no manifest at {path}; run `fit` first")
    with open(path) as f:
        return json.load(f)


def save_manifest(config: PipelineConfig, manifest: dict):
    root = _run_dir(config)
    for rel in _manifest_paths(manifest):
        if not (root / rel).exists():
            raise RuntimeError(f"manifest references missing artifact: {rel}")
    with open(manifest_path(config), "w") as f:
        f.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _manifest_paths(manifest: dict):
    for shape in manifest.get("shapes", []):
        yield shape["checkpoint"]
        yield from shape.get("frames", [shape.get("mesh")] if shape.get("mesh") else [])
    for key in ("model", "loss_csv"):
        if manifest.get(key):
            yield manifest[key]
    yield from manifest.get("samples", [])
    yield from manifest.get("extracted", [])


# -- corpus ----------------------------------------------------------------
def build_corpus(config: PipelineConfig) -> list:
    """3D: list of meshes. 4D: list of frame sequences (lists of meshes)."""
    ds = config.dataset
    if ds.source == "dir":
        if not ds.mesh_dir:
            raise PipelineError("dataset.source 'dir' requires dataset.mesh_dir")
        paths = sorted(p for p in Path(ds.mesh_dir).iterdir()
                       if p.suffix.lower() in (".obj", ".off"))
        if not paths:
            raise PipelineError(f"no inputs: no .obj/.off meshes in {ds.mesh_dir}")
        meshes = []
        for p in paths:
            try:
                meshes.append(normalize_to_unit_cube(load_mesh(p)))
            except (ValueError, OSError) as e:
                log.warning("skipping unfittable mesh %s: %s", p, e)
        if not meshes:
            raise PipelineError(f"no inputs: all meshes under {ds.mesh_dir} failed to parse")
        return meshes
    if ds.source != "procedural":
        raise PipelineError(f"unknown dataset.source {ds.source!r}")

    rng = np.random.default_rng([config.seed, 1])
    if config.mode == "4d":
        if ds.family != "pulsating_sphere":
            raise PipelineError(f"4D procedural family {ds.family!r} not available")
        out = []
        for _ in range(ds.count):
            base = rng.uniform(ds.axis_lo, ds.axis_hi)
            amp = rng.uniform(0.03, min(0.08, 0.47 - base))
            out.append(shapes.pulsating_sphere_frames(ds.n_frames, base, amp,
                                                      subdivisions=ds.subdivisions))
        return out
    makers = {
        "sphere": lambda: shapes.icosphere(ds.subdivisions, rng.uniform(ds.axis_lo, ds.axis_hi)),
        "ellipsoid": lambda: shapes.ellipsoid(rng.uniform(ds.axis_lo, ds.axis_hi, 3),
                                              ds.subdivisions),
        "box": lambda: shapes.box(rng.uniform(ds.axis_lo, ds.axis_hi, 3)),
        "torus": lambda: shapes.torus(rng.uniform(ds.axis_lo, ds.axis_hi),
                                      0.4 * ds.axis_lo),
    }
    if ds.family not in makers:
        raise PipelineError(f"unknown procedural family {ds.family!r}")
    return [makers[ds.family]() for _ in range(ds.count)]


def _grid_points(resolution: int) -> np.ndarray:
    ax = np.linspace(-0.5, 0.5, resolution, dtype=np.float32)
    return np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)


def _eval_batch_3d(mesh: TriangleMesh, resolution: int) -> LabeledPointBatch:
    pts = _grid_points(resolution)
    labels = (winding_numbers(mesh, pts.astype(np.float64)) > 0.5).astype(np.uint8)
    return LabeledPointBatch(pts, labels)


def _eval_batch_4d(frames: list[TriangleMesh], resolution: int) -> LabeledPointBatch:
    pts3 = _grid_points(resolution)
    times = frame_times(len(frames))
    all_pts, all_labels = [], []
    for t, mesh in zip(times, frames):
        col = np.full((len(pts3), 1), np.float32(t))
        all_pts.append(np.concatenate([pts3, col], axis=1))
        all_labels.append((winding_numbers(mesh, pts3.astype(np.float64)) > 0.5)
                          .astype(np.uint8))
    return LabeledPointBatch(np.concatenate(all_pts), np.concatenate(all_labels))


# -- fit -------------------------------------------------------------------
def _fit_job(item, config: PipelineConfig, index: int,
             init: WeightVector | None) -> tuple[WeightVector, FitReport]:
    ds = config.dataset
    if config.mode == "4d":
        batch = sample_supervision_4d(item, n_per_frame=ds.n_per_frame,
                                      near_sigma=ds.near_sigma,
                                      seed=[config.seed, 2, index])
        eval_batch = _eval_batch_4d(item, ds.eval_grid)
    else:
        batch = sample_supervision_3d(item, n_uniform=ds.n_uniform, n_near=ds.n_near,
                                      near_sigma=ds.near_sigma,
                                      seed=[config.seed, 2, index])
        eval_batch = _eval_batch_3d(item, ds.eval_grid)
    fit_cfg = dataclasses.replace(config.fit, seed=_seed_int(config.seed, 3, index))
    return fit_field(batch, init=init, config=config.mlp, fit=fit_cfg,
                     eval_batch=eval_batch)


def cmd_fit(config: PipelineConfig) -> dict:
    """Fit one MLP per corpus item: item 0 from random init, the rest seeded
    from item 0's weights, optionally in parallel."""
    root = _run_dir(config)
    corpus = build_corpus(config)
    mesh_dir = root / "meshes"
    ckpt_dir = root / "checkpoints"
    mesh_dir.mkdir(exist_ok=True)
    ckpt_dir.mkdir(exist_ok=True)

    shapes_meta = []
    mesh_rel: list[dict] = []
    for i, item in enumerate(corpus):
        entry: dict = {"id": f"shape_{i:03d}"}
        if config.mode == "4d":
            rels = []
            for f, frame in enumerate(item):
                rel = f"meshes/shape_{i:03d}_frame_{f:02d}.obj"
                save_obj(frame, root / rel)
                rels.append(rel)
            entry["frames"] = rels
        else:
            rel = f"meshes/shape_{i:03d}.obj"
            save_obj(item, root / rel)
            entry["mesh"] = rel
        mesh_rel.append(entry)

    log.info("fitting shape 0 (shared-init anchor) ...")
    theta1, report0 = _fit_job(corpus[0], config, 0, init=None)
    rest = list(range(1, len(corpus)))
    results: dict[int, tuple[WeightVector, FitReport]] = {0: (theta1, report0)}
    if config.jobs > 1 and rest:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            futs = {i: pool.submit(_fit_job, corpus[i], config, i, theta1) for i in rest}
            for i, fut in futs.items():
                results[i] = fut.result()
    else:
        for i in rest:
            log.info("fitting shape %d/%d ...", i, len(corpus) - 1)
            results[i] = _fit_job(corpus[i], config, i, theta1)

    for i in range(len(corpus)):
        vec, report = results[i]
        rel = f"checkpoints/shape_{i:03d}.bin"
        save_checkpoint(vec, root / rel)
        entry = mesh_rel[i]
        entry["checkpoint"] = rel
        entry["report"] = report.to_dict()
        shapes_meta.append(entry)
        log.info("shape %d: loss %.5f IoU %.4f (%.0fs)", i, report.final_loss,
                 report.iou, report.wall_seconds)

    manifest = {
        "mode": config.mode,
        "config": config_mod.to_dict(config),
        "shapes": shapes_meta,
        "model": None,
        "loss_csv": None,
        "samples": [],
        "extracted": [],
        "metrics": None,
    }
    save_manifest(config, manifest)
    return manifest


# -- train -----------------------------------------------------------------
def _load_dataset(config: PipelineConfig, manifest: dict) -> list[WeightVector]:
    root = _run_dir(config)
    vecs = []
    lengths: dict[int, list[str]] = {}
    for entry in manifest["shapes"]:
        v = load_checkpoint(root / entry["checkpoint"])
        vecs.append(v)
        lengths.setdefault(len(v), []).append(entry["id"])
    if len(lengths) > 1:
        detail = "; ".join(f"h={h}: {ids}" for h, ids in sorted(lengths.items()))
        raise PipelineError(f"mixed weight-vector lengths across checkpoints ({detail})")
    expect = config.mlp.param_count
    if vecs and len(vecs[0]) != expect:
        raise PipelineError(f"checkpoints have h={len(vecs[0])}, config expects {expect}")
    return vecs


def denoiser_config(config: PipelineConfig) -> DenoiserConfig:
    return DenoiserConfig(layout=TokenLayout.for_mlp(config.mlp),
                          hidden_size=config.denoiser.hidden_size,
                          layers=config.denoiser.layers, heads=config.denoiser.heads,
                          timesteps=config.schedule.timesteps,
                          freq_base=config.denoiser.freq_base)


def noise_schedule(config: PipelineConfig) -> NoiseSchedule:
    s = config.schedule
    return NoiseSchedule(s.timesteps, s.beta_start, s.beta_end)


def cmd_train(config: PipelineConfig) -> dict:
    root = _run_dir(config)
    manifest = load_manifest(config)
    dataset = _load_dataset(config, manifest)
    if not dataset:
        raise PipelineError("manifest lists no checkpoints")
    if len(dataset) == 1:
        log.warning("training on a single checkpoint (degenerate memorization run)")

    model_rel, state_path = "model.bin", root / "train_state.npz"
    schedule = noise_schedule(config)
    model = None
    start_epoch = 0
    opt_state = None
    prior_losses: list[float] = []
    prior_lrs: list[float] = []
    if state_path.exists():
        state = np.load(state_path, allow_pickle=False)
        start_epoch = int(state["epoch"]) + 1
        model = load_model(root / model_rel)
        n_params = int(state["n_params"])
        opt_state = {"t": int(state["t"]), "lr": float(state["lr"]),
                     "m": [state[f"m{i}"] for i in range(n_params)],
                     "v": [state[f"v{i}"] for i in range(n_params)]}
        prior_losses = list(state["losses"])
        prior_lrs = list(state["lrs"])
        log.info("resuming training at epoch %d", start_epoch)

    losses = list(prior_losses)
    lrs = list(prior_lrs)

    def checkpoint_cb(epoch, mdl, opt, loss):
        losses.append(loss)
        lrs.append(opt.lr)
        if (epoch + 1) % config.train.snapshot_every == 0 or epoch + 1 == config.train.epochs:
            save_model(mdl, root / model_rel)
            arrays = {f"m{i}": m for i, m in enumerate(opt.m)}
            arrays.update({f"v{i}": v for i, v in enumerate(opt.v)})
            np.savez(state_path, epoch=epoch, t=opt.t, lr=opt.lr,
                     n_params=len(opt.m), losses=np.array(losses),
                     lrs=np.array(lrs), **arrays)

    result = train(dataset, config.train, schedule, model=model,
                   denoiser_config=denoiser_config(config), start_epoch=start_epoch,
                   optimizer_state=opt_state, epoch_callback=checkpoint_cb)
    if result.mean is not None:
        np.savez(root / "norm.npz", mean=result.mean, std=result.std)
    save_model(result.model, root / model_rel)

    loss_rel = "loss.csv"
    with open(root / loss_rel, "w") as f:
        f.write("epoch,mean_loss,lr\n")
        for e, (l, lr) in enumerate(zip(losses, lrs)):
            f.write(f"{e},{l:.8e},{lr:.8e}\n")
    manifest["model"] = model_rel
    manifest["loss_csv"] = loss_rel
    save_manifest(config, manifest)
    if result.aborted:
        raise RuntimeError(f"training aborted: {result.abort_reason} "
                           f"(last good model saved to {root / model_rel})")
    return manifest


# -- sample ----------------------------------------------------------------
def extract_mesh(vec: WeightVector, resolution: int, iso: float,
                 time_coord: float | None = None) -> TriangleMesh:
    """Canonical field -> mesh path: grid evaluation, marching cubes, then
    keep the largest connected component.  Overfit fields can sprout small
    spurious bubbles near the domain boundary (where the periodic input
    encoding is least discriminative and supervision is sparsest); they carry
    negligible area but would pollute surface point clouds."""
    grid = field_to_grid(vec, resolution, time_coord=time_coord)
    return largest_component(marching_cubes(grid, iso))


def _extraction_cloud(config: PipelineConfig, values: np.ndarray, seed: int) -> np.ndarray:
    """WeightVector values -> normalized surface point cloud (mid-animation
    frame for 4D), used for de-duplication and evaluation of raw samples."""
    vec = WeightVector(config.mlp, values)
    t = None if config.mode == "3d" else 0.0
    mesh = extract_mesh(vec, config.extract.resolution, config.mlp.iso_level, time_coord=t)
    pts = sample_surface_points(mesh, config.metrics.points_per_cloud, seed=seed)
    return normalize_cloud(pts)


def cmd_sample(config: PipelineConfig, count: int | None = None,
               trajectory: tuple[int, ...] | None = None) -> dict:
    root = _run_dir(config)
    manifest = load_manifest(config)
    if not manifest.get("model"):
        raise PipelineError("no trained model in manifest; run `train` first")
    n = config.sample.count if count is None else count
    traj = config.sample.trajectory if trajectory is None else tuple(trajectory)
    if n == 0:
        manifest["samples"] = []
        save_manifest(config, manifest)
        return manifest

    model = load_model(root / manifest["model"])
    schedule = noise_schedule(config)
    norm_path = root / "norm.npz"
    norm = np.load(norm_path) if norm_path.exists() else None

    raw: list[np.ndarray] = []
    snaps: list[dict[int, np.ndarray]] = []
    for i in range(2 * n):
        out = ddim_sample(model, schedule, seed=[config.seed, 4, i],
                          trajectory=traj if traj else None)
        x, s = out if traj else (out, {})
        if norm is not None:
            x = x * norm["std"] + norm["mean"]
            s = {k: v * norm["std"] + norm["mean"] for k, v in s.items()}
        raw.append(x.astype(np.float32))
        snaps.append(s)

    kept_idx = dedupe(list(range(len(raw))),
                      lambda i: _extraction_cloud(config, raw[i], seed=_seed_int(config.seed, 5, i)),
                      config.sample.dedupe_threshold)[:n]
    if len(kept_idx) < n:
        log.warning("de-duplication kept %d of the requested %d samples", len(kept_idx), n)

    sample_dir = root / "samples"
    sample_dir.mkdir(exist_ok=True)
    rels = []
    traj_meta: dict[str, dict[str, str]] = {}
    for out_i, i in enumerate(kept_idx):
        rel = f"samples/sample_{out_i:03d}.bin"
        save_checkpoint(WeightVector(config.mlp, raw[i]), root / rel)
        rels.append(rel)
        if snaps[i]:
            per = {}
            for step, vec in sorted(snaps[i].items()):
                srel = f"samples/sample_{out_i:03d}_step_{step:04d}.bin"
                save_checkpoint(WeightVector(config.mlp, vec), root / srel)
                per[str(step)] = srel
            traj_meta[f"sample_{out_i:03d}"] = per
    manifest["samples"] = rels
    if traj_meta:
        manifest["trajectories"] = traj_meta
    save_manifest(config, manifest)
    return manifest


# -- extract ---------------------------------------------------------------
def cmd_extract(config: PipelineConfig, checkpoint_dir=None) -> list[str]:
    root = _run_dir(config)
    if checkpoint_dir is None:
        manifest = load_manifest(config)
        paths = [root / rel for rel in manifest["samples"]]
        if not paths:
            raise PipelineError("no samples to extract; run `sample` first")
    else:
        manifest = None
        paths = sorted(Path(checkpoint_dir).glob("*.bin"))
        if not paths:
            raise PipelineError(f"no .bin checkpoints in {checkpoint_dir}")

    out_dir = root / "extracted"
    out_dir.mkdir(exist_ok=True)
    rels = []
    for p in paths:
        vec = load_checkpoint(p, expect=config.mlp)
        stem = p.stem
        times = [None] if config.mode == "3d" else frame_times(config.extract.frames)
        for f, t in enumerate(times):
            mesh = extract_mesh(vec, config.extract.resolution, config.mlp.iso_level,
                                time_coord=t)
            if len(mesh.triangles) == 0:
                log.warning("empty surface for %s%s", stem,
                            "" if t is None else f" frame {f}")
            suffix = "" if t is None else f"_frame_{f:02d}"
            rel = f"extracted/{stem}{suffix}.obj"
            save_obj(mesh, root / rel)
            rels.append(rel)
    if manifest is not None:
        manifest["extracted"] = rels
        save_manifest(config, manifest)
    return rels


# -- eval ------------------------------------------------------------------
def _load_clouds_3d(config: PipelineConfig, directory: Path) -> list[np.ndarray]:
    clouds = []
    paths = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".obj", ".off"))
    for i, p in enumerate(paths):
        try:
            mesh = load_mesh(p)
            pts = sample_surface_points(mesh, config.metrics.points_per_cloud,
                                        seed=_seed_int(config.seed, 6, i))
            clouds.append(normalize_cloud(pts))
        except (ValueError, OSError) as e:
            log.warning("eval: excluding %s (%s)", p, e)
    return clouds


def _load_sequences_4d(config: PipelineConfig, directory: Path) -> list[list[np.ndarray]]:
    groups: dict[str, list[Path]] = {}
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() not in (".obj", ".off") or "_frame_" not in p.stem:
            continue
        prefix = p.stem.rsplit("_frame_", 1)[0]
        groups.setdefault(prefix, []).append(p)
    seqs = []
    for i, (prefix, paths) in enumerate(sorted(groups.items())):
        try:
            frames = []
            for f, p in enumerate(sorted(paths)):
                mesh = load_mesh(p)
                pts = sample_surface_points(mesh, config.metrics.points_per_cloud,
                                            seed=_seed_int(config.seed, 6, i, f))
                frames.append(normalize_cloud(pts))
            seqs.append(frames)
        except (ValueError, OSError) as e:
            log.warning("eval: excluding sequence %s (%s)", prefix, e)
    counts = {len(s) for s in seqs}
    if len(counts) > 1:
        raise PipelineError(f"4D eval found unequal frame counts: {sorted(counts)}")
    return seqs


def cmd_eval(config: PipelineConfig, generated_dir=None, reference_dir=None) -> dict:
    root = _run_dir(config)
    gen_dir = Path(generated_dir) if generated_dir else root / "extracted"
    ref_dir = Path(reference_dir) if reference_dir else root / "meshes"
    for d in (gen_dir, ref_dir):
        if not d.is_dir():
            raise PipelineError(f"eval directory missing: {d}")
    if config.mode == "4d":
        gen = _load_sequences_4d(config, gen_dir)
        ref = _load_sequences_4d(config, ref_dir)
        d = temporal_distance
    else:
        gen = _load_clouds_3d(config, gen_dir)
        ref = _load_clouds_3d(config, ref_dir)
        d = chamfer
    if not gen or not ref:
        raise PipelineError(f"eval sets empty (generated {len(gen)}, reference {len(ref)})")
    report = evaluate_sets(gen, ref, d)
    with open(root / "metrics.json", "w") as f:
        f.write(report.to_json() + "\n")
    print(report.table())
    try:
        manifest = load_manifest(config)
        manifest["metrics"] = report.to_dict()
        save_manifest(config, manifest)
    except PipelineError:
        pass  # eval over external directories can run without a manifest
    return report.to_dict()


def cmd_pipeline(config: PipelineConfig) -> dict:
    cmd_fit(config)
    cmd_train(config)
    cmd_sample(config)
    cmd_extract(config)
    cmd_eval(config)
    return load_manifest(config)


__all__ = ["PipelineError", "build_corpus", "cmd_fit", "cmd_train", "cmd_sample",
           "cmd_extract", "cmd_eval", "cmd_pipeline", "denoiser_config",
           "extract_mesh", "noise_schedule", "load_manifest", "save_manifest",
           "is_watertight"]
