"""End-to-end batch pipeline: calibrate, reconstruct, evaluate.

Calibration turns per-scene chessboard corners into camera poses, a robust
camera-to-camera extrinsic, and a global depth scale. Reconstruction lifts
every depth raster into the shared reference frame, fuses each orientation,
registers the flipped capture onto the upright one, meshes the merged cloud,
and re-dyes the mesh from the RGB views. Evaluation measures the mesh
against reference dimensions and reprojects it over the captured views.

Every stage writes its artifacts under ``out/<stage>/`` next to the session
manifest, errors are tagged with the stage and scene that raised them, and
all per-scene work can run on a thread pool without changing any output.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import fileio, simulator
from .calibration import (
    CalibrationSet,
    ScaleEstimate,
    apply_scale,
    estimate_pose_pnp,
    estimate_scale_scene,
    fit_plane_ransac,
    relative_extrinsic,
)
from .cloud import (
    Aabb,
    crop,
    estimate_normals,
    fuse,
    remove_statistical_outliers,
    voxel_downsample,
)
from .errors import (
    EmptyInput,
    IoFailure,
    MissingCorners,
    NumericalError,
    TurnscanError,
    ValidationError,
)
from .geometry import (
    PinholeCamera,
    PointCloud,
    RgbImage,
    RigidTransform,
    TriangleMesh,
    backproject,
    compose,
    invert,
    project_points,
    transform_points,
)
from .meshing import reconstruct_mesh, refine_vertices
from .registration import IcpParams, colored_icp, initial_flip_guess, trim_overlap_band
from .session import CaptureSession
from .texturing import redye_mesh

Array = np.ndarray

_BUNDLE_FORMAT = "turnscan-bundle v1"
_MIN_DEPTH_CORNERS = 8

__all__ = [
    "CalibrationBundle",
    "EvaluationReport",
    "PipelineConfig",
    "ReconstructionResult",
    "config_from_payload",
    "load_bundle",
    "run_calibrate",
    "run_evaluate",
    "run_reconstruct",
    "save_bundle",
]


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable knobs for all stages; defaults suit the built-in rig."""

    seed: int = 0
    workers: int = 4
    fusion_voxel_mm: float = 0.5
    crop_clearance_mm: float = 0.8
    denoise_k: int = 12
    denoise_std_ratio: float = 2.0
    normals_k: int = 10
    plane_threshold_mm: float = 0.3
    plane_iterations: int = 100
    plane_sample_cap: int = 20000
    trim_fraction: float = 0.6
    icp_voxel_schedule_mm: tuple[float, ...] = (4.0, 2.0, 1.0)
    icp_iterations: tuple[int, ...] = (50, 30, 14)
    icp_color_weight: float = 0.968
    grid_dims: int = 64
    refine_k: int = 48
    refine_step_mm: float = 1.0
    redye_mode: str = "blend"
    redye_radius_factor: float = 100.0
    eval_views: tuple[int, ...] = (0, 8, 32, 40)
    force_unit_scale: bool = False

    def __post_init__(self):
        if self.workers < 1:
            raise ValidationError("worker count must be at least 1")
        if self.fusion_voxel_mm <= 0:
            raise ValidationError("fusion voxel must be positive")
        if not 0.0 < self.trim_fraction <= 1.0:
            raise ValidationError("trim fraction must lie in (0, 1]")

    def icp_params(self) -> IcpParams:
        return IcpParams(
            voxel_schedule_mm=tuple(self.icp_voxel_schedule_mm),
            max_iterations=tuple(self.icp_iterations),
            color_weight=self.icp_color_weight,
        )


def config_from_payload(payload: dict) -> PipelineConfig:
    """Build a config from a JSON-style dict, rejecting unknown keys."""
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(payload) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    coerced = {
        key: tuple(value) if isinstance(value, list) else value
        for key, value in payload.items()
    }
    return PipelineConfig(**coerced)


@dataclass(frozen=True)
class CalibrationBundle:
    """Per-scene poses plus the rig-level extrinsic and depth scale."""

    alpha: float
    t_relative: RigidTransform
    rgb_poses: tuple[RigidTransform, ...]
    depth_poses: tuple[RigidTransform, ...]
    per_scene_alpha: tuple[float, ...]

    def __post_init__(self):
        if len(self.rgb_poses) != len(self.depth_poses):
            raise ValidationError("bundle pose lists must be index-aligned")
        if self.alpha <= 0:
            raise ValidationError("bundle scale must be positive")


@dataclass(frozen=True)
class ReconstructionResult:
    """Mesh plus the fused cloud it was extracted from, with diagnostics."""

    mesh: TriangleMesh
    cloud: PointCloud
    registration_rmse_mm: float
    registration_converged: bool
    single_orientation: bool
    unseen_vertex_count: int


@dataclass(frozen=True)
class EvaluationReport:
    """Mesh accuracy against reference dimensions and captured views."""

    reference_dims_mm: tuple[float, float, float]
    mesh_dims_mm: tuple[float, float, float]
    aabb_errors_mm: tuple[float, float, float]
    iou_per_view: tuple[float, ...]
    contour_distance_px_per_view: tuple[float, ...]
    view_indices: tuple[int, ...]
    alpha: float
    registration_rmse_mm: float

    @property
    def iou_mean(self) -> float:
        return float(np.mean(self.iou_per_view))

    @property
    def contour_distance_px_mean(self) -> float:
        return float(np.mean(self.contour_distance_px_per_view))

    def to_payload(self) -> dict:
        return {
            "reference_dims_mm": list(self.reference_dims_mm),
            "mesh_dims_mm": list(self.mesh_dims_mm),
            "aabb_errors_mm": list(self.aabb_errors_mm),
            "iou_per_view": list(self.iou_per_view),
            "iou_mean": self.iou_mean,
            "contour_distance_px_per_view": list(self.contour_distance_px_per_view),
            "contour_distance_px_mean": self.contour_distance_px_mean,
            "view_indices": list(self.view_indices),
            "alpha": self.alpha,
            "registration_rmse_mm": self.registration_rmse_mm,
        }


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def _retag(exc: TurnscanError, stage: str, scene: int | None) -> TurnscanError:
    label = f"[stage={stage}" + (f" scene={scene}" if scene is not None else "") + "]"
    message = f"{label} {exc}"
    try:
        return type(exc)(message)
    except TypeError:
        base = NumericalError if isinstance(exc, NumericalError) else ValidationError
        return base(message)


class _stage_context:
    """Re-raise any pipeline error with its stage and scene identified."""

    def __init__(self, stage: str, scene: int | None = None):
        self.stage = stage
        self.scene = scene

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, TurnscanError):
            raise _retag(exc, self.stage, self.scene) from exc
        return False


def _worker_count(config: PipelineConfig) -> int:
    env = os.environ.get("RECON_WORKERS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ValidationError(f"RECON_WORKERS must be an integer, got {env!r}") from exc
    return config.workers


def _parallel_map(func, items, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def _stage_dir(session: CaptureSession, out_dir, stage: str) -> Path:
    root = Path(out_dir) if out_dir is not None else session.root / "out"
    path = root / stage
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create artifact directory {path}: {exc}") from exc
    return path


def _identity() -> RigidTransform:
    return RigidTransform(np.eye(3), np.zeros(3))


def _sample_colors(image: RgbImage, uv: Array) -> Array:
    """Bilinear RGB sample in [0, 1] at subpixel positions inside the image."""
    pix = image.pixels.astype(np.float64) / 255.0
    u = np.clip(uv[:, 0], 0.0, image.width - 1.0)
    v = np.clip(uv[:, 1], 0.0, image.height - 1.0)
    u0 = np.clip(np.floor(u).astype(np.int64), 0, image.width - 2)
    v0 = np.clip(np.floor(v).astype(np.int64), 0, image.height - 2)
    fu = (u - u0)[:, None]
    fv = (v - v0)[:, None]
    top = pix[v0, u0] * (1 - fu) + pix[v0, u0 + 1] * fu
    bottom = pix[v0 + 1, u0] * (1 - fu) + pix[v0 + 1, u0 + 1] * fu
    return top * (1 - fv) + bottom * fv


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


def save_bundle(bundle: CalibrationBundle, path) -> None:
    """Persist a calibration bundle as JSON."""
    fileio.write_json_file(
        path,
        {
            "format": _BUNDLE_FORMAT,
            "alpha": bundle.alpha,
            "per_scene_alpha": list(bundle.per_scene_alpha),
            "t_relative": fileio.pose_to_rows(bundle.t_relative),
            "scenes": [
                {
                    "index": i,
                    "ref_to_rgb": fileio.pose_to_rows(rgb),
                    "ref_to_depth": fileio.pose_to_rows(depth),
                }
                for i, (rgb, depth) in enumerate(zip(bundle.rgb_poses, bundle.depth_poses))
            ],
        },
    )


def load_bundle(path) -> CalibrationBundle:
    """Read a bundle written by :func:`save_bundle`."""
    payload = fileio.read_json_file(path)
    if payload.get("format") != _BUNDLE_FORMAT:
        raise ValidationError(f"unsupported bundle format {payload.get('format')!r}")
    try:
        scenes = sorted(payload["scenes"], key=lambda rec: rec["index"])
        return CalibrationBundle(
            alpha=float(payload["alpha"]),
            t_relative=fileio.pose_from_rows(payload["t_relative"]),
            rgb_poses=tuple(fileio.pose_from_rows(rec["ref_to_rgb"]) for rec in scenes),
            depth_poses=tuple(fileio.pose_from_rows(rec["ref_to_depth"]) for rec in scenes),
            per_scene_alpha=tuple(float(a) for a in payload["per_scene_alpha"]),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"bundle schema violation: {exc!r}") from exc


def _read_scene_corners(session: CaptureSession, record, which: str):
    path = session.resolve(
        record.corners_rgb_path if which == "rgb" else record.corners_depth_path
    )
    try:
        return fileio.read_corners(path)
    except IoFailure as exc:
        raise MissingCorners(f"scene {record.index}: corners file missing at {path}") from exc


def _scene_scale(session, record, pose_depth, config: PipelineConfig) -> float:
    depth = fileio.read_depth_pfm(session.resolve(record.depth_path))
    cloud = backproject(session.depth_camera, depth)
    positions = invert(pose_depth).apply(cloud.positions)
    if len(positions) > config.plane_sample_cap:
        rng = np.random.default_rng(config.seed + record.index)
        pick = rng.choice(len(positions), size=config.plane_sample_cap, replace=False)
        positions = positions[np.sort(pick)]
    plane, _ = fit_plane_ransac(
        PointCloud(positions),
        config.plane_threshold_mm,
        config.plane_iterations,
        config.seed + record.index,
    )
    return estimate_scale_scene(plane, invert(pose_depth).translation)


def run_calibrate(
    session: CaptureSession,
    config: PipelineConfig | None = None,
    out_dir=None,
) -> CalibrationBundle:
    """Solve per-scene poses, the camera-to-camera extrinsic, and depth scale.

    Every scene must supply RGB-camera corners; scenes whose depth-camera
    corner sets are too small simply contribute no sample to the relative
    extrinsic (the median over the remaining scenes absorbs that). The
    bundle is persisted under ``out/calibrate/bundle.json`` for reuse.

    Raises
    ------
    MissingCorners
        If a scene's corners file is absent.
    """
    config = config or PipelineConfig()
    stage_dir = _stage_dir(session, out_dir, "calibrate")

    rgb_poses: list[RigidTransform] = []
    extrinsic_pairs: list[tuple[RigidTransform, RigidTransform]] = []
    for record in session.scenes:
        with _stage_context("pnp", record.index):
            corners_rgb = _read_scene_corners(session, record, "rgb")
            pose_rgb = estimate_pose_pnp(session.rgb_camera, corners_rgb)
            rgb_poses.append(pose_rgb)
            corners_depth = _read_scene_corners(session, record, "depth")
            if len(corners_depth) >= _MIN_DEPTH_CORNERS:
                pose_depth = estimate_pose_pnp(session.depth_camera, corners_depth)
                extrinsic_pairs.append((pose_rgb, pose_depth))

    with _stage_context("relative-extrinsic"):
        if not extrinsic_pairs:
            raise MissingCorners("no scene offers enough depth-camera corners")
        t_rel = relative_extrinsic(
            CalibrationSet(
                rgb_poses=[p for p, _ in extrinsic_pairs],
                depth_poses=[p for _, p in extrinsic_pairs],
            )
        )

    depth_poses = tuple(compose(t_rel, pose) for pose in rgb_poses)

    def scale_one(pair):
        record, pose_depth = pair
        with _stage_context("scale", record.index):
            return _scene_scale(session, record, pose_depth, config)

    per_scene = _parallel_map(
        scale_one, list(zip(session.scenes, depth_poses)), _worker_count(config)
    )
    with _stage_context("scale"):
        estimate = ScaleEstimate([float(a) for a in per_scene])

    bundle = CalibrationBundle(
        alpha=estimate.global_scale,
        t_relative=t_rel,
        rgb_poses=tuple(rgb_poses),
        depth_poses=depth_poses,
        per_scene_alpha=tuple(float(a) for a in per_scene),
    )
    save_bundle(bundle, stage_dir / "bundle.json")
    return bundle


# ---------------------------------------------------------------------------
# Reconstruction
# ---------------------------------------------------------------------------


def _crop_box(session: CaptureSession, config: PipelineConfig) -> Aabb:
    box = session.bounding_box
    return Aabb(
        np.array([box.x_min, box.y_min, config.crop_clearance_mm]),
        np.array([box.x_max, box.y_max, box.height_mm]),
    )


def _process_scene(session, record, pose_depth, pose_rgb, alpha, box, config) -> PointCloud:
    """One capture to a cropped, denoised, colored, oriented cloud in the
    reference frame."""
    with _stage_context("read", record.index):
        depth = fileio.read_depth_pfm(session.resolve(record.depth_path))
        image = fileio.read_image_ppm(session.resolve(record.rgb_path))
    with _stage_context("scale", record.index):
        depth = apply_scale(depth, alpha)
    with _stage_context("backproject", record.index):
        cam_cloud = backproject(session.depth_camera, depth)
        ref_cloud = transform_points(invert(pose_depth), cam_cloud)
    with _stage_context("crop", record.index):
        cropped = crop(ref_cloud, box)
        if len(cropped) == 0:
            raise EmptyInput("bounding-box crop left no points")
    with _stage_context("denoise", record.index):
        denoised, _ = remove_statistical_outliers(
            cropped, config.denoise_k, config.denoise_std_ratio
        )
    with _stage_context("color", record.index):
        cam_pts = pose_rgb.apply(denoised.positions)
        uv, in_front = project_points(session.rgb_camera, cam_pts)
        in_frame = (
            in_front
            & (uv[:, 0] >= 0)
            & (uv[:, 0] <= session.rgb_camera.width - 1)
            & (uv[:, 1] >= 0)
            & (uv[:, 1] <= session.rgb_camera.height - 1)
        )
        positions = denoised.positions[in_frame]
        colors = _sample_colors(image, uv[in_frame])
        if len(positions) == 0:
            raise EmptyInput("no cropped point projects into the RGB view")
    with _stage_context("normals", record.index):
        colored = PointCloud(positions, colors=colors)
        return estimate_normals(colored, config.normals_k, invert(pose_depth).translation)


def run_reconstruct(
    session: CaptureSession,
    bundle: CalibrationBundle,
    config: PipelineConfig | None = None,
    out_dir=None,
) -> ReconstructionResult:
    """Fuse all scenes into a registered cloud, mesh it, and re-dye it.

    Artifacts written under ``out/reconstruct/``: per-orientation fused
    clouds, the merged cloud, the raw and re-dyed meshes, and a report.
    A session captured in a single orientation skips registration and
    reconstructs an open-bottom mesh with a warning.
    """
    config = config or PipelineConfig()
    if len(bundle.rgb_poses) != len(session.scenes):
        raise ValidationError(
            f"bundle covers {len(bundle.rgb_poses)} scenes, session has {len(session.scenes)}"
        )
    stage_dir = _stage_dir(session, out_dir, "reconstruct")
    alpha = 1.0 if config.force_unit_scale else bundle.alpha
    box = _crop_box(session, config)

    def process(record):
        return _process_scene(
            session,
            record,
            bundle.depth_poses[record.index],
            bundle.rgb_poses[record.index],
            alpha,
            box,
            config,
        )

    clouds = _parallel_map(process, list(session.scenes), _worker_count(config))

    fused: dict[bool, PointCloud] = {}
    for flipped in (False, True):
        members = [
            cloud
            for cloud, record in zip(clouds, session.scenes)
            if record.flipped == flipped
        ]
        if not members:
            continue
        with _stage_context("fuse"):
            combined = fuse([(cloud, _identity()) for cloud in members])
            fused[flipped] = voxel_downsample(combined, config.fusion_voxel_mm)
        name = "fused_flipped.ply" if flipped else "fused_upright.ply"
        fileio.write_point_cloud(stage_dir / name, fused[flipped])

    if not fused:
        raise EmptyInput("session produced no usable scenes")

    rmse = float("nan")
    converged = True
    single_orientation = len(fused) == 1
    if single_orientation:
        warnings.warn(
            "session covers a single orientation: skipping registration;"
            " the mesh bottom is unobserved",
            RuntimeWarning,
            stacklevel=2,
        )
        merged = next(iter(fused.values()))
    else:
        with _stage_context("register"):
            upright, flipped_cloud = fused[False], fused[True]
            guess = initial_flip_guess(upright, flipped_cloud)
            moved = transform_points(guess, flipped_cloud)
            band_source = trim_overlap_band(moved, config.trim_fraction)
            band_target = trim_overlap_band(upright, config.trim_fraction)
            result = colored_icp(band_source, band_target, _identity(), config.icp_params())
            total = compose(result.transform, guess)
            aligned = transform_points(total, flipped_cloud)
            rmse = result.final_rmse
            converged = result.converged
        with _stage_context("merge"):
            merged = voxel_downsample(
                fuse([(upright, _identity()), (aligned, _identity())]),
                config.fusion_voxel_mm,
            )
    fileio.write_point_cloud(stage_dir / "merged.ply", merged)

    with _stage_context("mesh"):
        mesh = reconstruct_mesh(merged, config.grid_dims)
        mesh = refine_vertices(mesh, merged, config.refine_k, config.refine_step_mm)
    fileio.write_mesh(stage_dir / "mesh.ply", mesh)

    with _stage_context("redye"):
        views = []
        for record in session.scenes:
            image = fileio.read_image_ppm(session.resolve(record.rgb_path))
            views.append((image, session.rgb_camera, bundle.rgb_poses[record.index]))
        dyed, redye_report = redye_mesh(
            mesh, views, radius_factor=config.redye_radius_factor, mode=config.redye_mode
        )
    fileio.write_mesh(stage_dir / "mesh_redyed.ply", dyed)

    fileio.write_json_file(
        stage_dir / "report.json",
        {
            "alpha_used": alpha,
            "registration_rmse_mm": rmse,
            "registration_converged": converged,
            "single_orientation": single_orientation,
            "merged_points": len(merged),
            "mesh_vertices": len(dyed.vertices),
            "unseen_vertices": int(redye_report.unseen_count),
        },
    )
    return ReconstructionResult(
        mesh=dyed,
        cloud=merged,
        registration_rmse_mm=rmse,
        registration_converged=converged,
        single_orientation=single_orientation,
        unseen_vertex_count=int(redye_report.unseen_count),
    )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _rasterize_mesh_mask(
    mesh: TriangleMesh, cam: PinholeCamera, ref_to_cam: RigidTransform
) -> Array:
    """Boolean silhouette of the mesh in the given camera view."""
    cam_pts = ref_to_cam.apply(mesh.vertices)
    z = cam_pts[:, 2]
    safe_z = np.where(z > 1e-9, z, 1.0)
    u = cam.fx * cam_pts[:, 0] / safe_z + cam.cx
    v = cam.fy * cam_pts[:, 1] / safe_z + cam.cy
    mask = np.zeros((cam.height, cam.width), dtype=bool)
    in_front = z > 1e-9
    for tri in mesh.triangles:
        if not np.all(in_front[tri]):
            continue
        tu, tv = u[tri], v[tri]
        u_lo = max(int(np.ceil(tu.min())), 0)
        u_hi = min(int(np.floor(tu.max())), cam.width - 1)
        v_lo = max(int(np.ceil(tv.min())), 0)
        v_hi = min(int(np.floor(tv.max())), cam.height - 1)
        if u_lo > u_hi or v_lo > v_hi:
            continue
        gu, gv = np.meshgrid(
            np.arange(u_lo, u_hi + 1, dtype=np.float64),
            np.arange(v_lo, v_hi + 1, dtype=np.float64),
        )
        ax, ay = tu[0], tv[0]
        e1u, e1v = tu[1] - ax, tv[1] - ay
        e2u, e2v = tu[2] - ax, tv[2] - ay
        area = e1u * e2v - e1v * e2u
        if abs(area) < 1e-12:
            continue
        pu, pv = gu - ax, gv - ay
        w1 = (pu * e2v - pv * e2u) / area
        w2 = (e1u * pv - e1v * pu) / area
        inside = (w1 >= -1e-12) & (w2 >= -1e-12) & (w1 + w2 <= 1.0 + 1e-12)
        mask[v_lo : v_hi + 1, u_lo : u_hi + 1] |= inside
    return mask


def _camera_ray_dirs(cam: PinholeCamera) -> Array:
    u = np.arange(cam.width, dtype=np.float64)
    v = np.arange(cam.height, dtype=np.float64)
    gu, gv = np.meshgrid(u, v)
    return np.column_stack(
        [
            ((gu - cam.cx) / cam.fx).ravel(),
            ((gv - cam.cy) / cam.fy).ravel(),
            np.ones(cam.width * cam.height),
        ]
    )


def _ground_truth_mask(
    truth: simulator.GroundTruth,
    flipped: bool,
    cam: PinholeCamera,
    ref_to_cam: RigidTransform,
) -> Array:
    """Boolean silhouette of the true object rendered analytically."""
    dirs_cam = _camera_ray_dirs(cam)
    cam_to_ref = invert(ref_to_cam)
    origin = cam_to_ref.translation
    dirs_ref = dirs_cam @ cam_to_ref.rotation.T
    if flipped:
        flip = truth.flip
        t = truth.solid.ray_hits(flip.apply(origin), dirs_ref @ flip.rotation.T)
    else:
        t = truth.solid.ray_hits(origin, dirs_ref)
    return np.isfinite(t).reshape(cam.height, cam.width)


def _contour(mask: Array) -> Array:
    return mask & ~ndimage.binary_erosion(mask, border_value=0)


def _mean_contour_distance(a: Array, b: Array) -> float:
    """Symmetric mean pixel distance between the boundaries of two masks."""
    ca, cb = _contour(a), _contour(b)
    if not ca.any() or not cb.any():
        return float("inf")
    d_ab = ndimage.distance_transform_edt(~cb)[ca].mean()
    d_ba = ndimage.distance_transform_edt(~ca)[cb].mean()
    return float((d_ab + d_ba) / 2.0)


def run_evaluate(
    mesh: TriangleMesh,
    session: CaptureSession,
    bundle: CalibrationBundle,
    reference_dims,
    registration_rmse_mm: float = float("nan"),
    views: tuple[int, ...] | None = None,
    out_dir=None,
) -> EvaluationReport:
    """Measure the mesh against reference dimensions and captured views.

    Writes ``out/evaluate/report.json`` and one overlay image per checked
    view (mesh silhouette boundary in red, true boundary in green over the
    captured RGB frame). The ground-truth sidecar must sit next to the
    session manifest.
    """
    if len(mesh.vertices) == 0 or len(mesh.triangles) == 0:
        raise EmptyInput("evaluation needs a nonempty mesh")
    reference = np.asarray(reference_dims, dtype=np.float64).reshape(3)
    stage_dir = _stage_dir(session, out_dir, "evaluate")

    dims = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
    errors = np.abs(dims - reference)

    with _stage_context("evaluate"):
        truth = simulator.load_ground_truth(session.root / "ground_truth.json")

    chosen = tuple(v for v in (views or PipelineConfig().eval_views) if v < len(session.scenes))
    if not chosen:
        raise ValidationError("no valid evaluation views")

    ious = []
    contour_dists = []
    for view in chosen:
        record = session.scenes[view]
        with _stage_context("evaluate", record.index):
            pose = bundle.rgb_poses[view]
            mesh_mask = _rasterize_mesh_mask(mesh, session.rgb_camera, pose)
            true_pose = truth.poses[record.index].ref_to_rgb
            gt_mask = _ground_truth_mask(truth, record.flipped, session.rgb_camera, true_pose)
            union = np.logical_or(mesh_mask, gt_mask).sum()
            iou = float(np.logical_and(mesh_mask, gt_mask).sum() / union) if union else 0.0
            ious.append(iou)
            contour_dists.append(_mean_contour_distance(mesh_mask, gt_mask))

            image = fileio.read_image_ppm(session.resolve(record.rgb_path))
            overlay = image.pixels.copy()
            overlay[_contour(mesh_mask)] = (255, 0, 0)
            overlay[_contour(gt_mask)] = (0, 255, 0)
            fileio.write_image_ppm(
                stage_dir / f"overlay_{record.index:03d}.ppm",
                RgbImage(image.width, image.height, overlay),
            )

    report = EvaluationReport(
        reference_dims_mm=tuple(float(x) for x in reference),
        mesh_dims_mm=tuple(float(x) for x in dims),
        aabb_errors_mm=tuple(float(x) for x in errors),
        iou_per_view=tuple(ious),
        contour_distance_px_per_view=tuple(contour_dists),
        view_indices=chosen,
        alpha=bundle.alpha,
        registration_rmse_mm=registration_rmse_mm,
    )
    fileio.write_json_file(stage_dir / "report.json", report.to_payload())
    return report
