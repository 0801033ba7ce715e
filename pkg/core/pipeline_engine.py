"""
PIPELINE ENGINE - MAIN ORCHESTRATOR
========================================

Responsibility: Coordinate the packages that implement each command.
Contains no CLI parsing and no presentation, only pipeline logic.

Flow:
1. Receive a command and a resolved RunConfig
2. Check the upstream artifacts the command needs
3. Run the command (gen-data, fit, train, sample, interpolate, eval)
4. Record the outcome in the run manifest and return a structured result
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from autodiff.rng import make_rng
from config.settings import LOG_LEVEL, RunConfig
from core.errors import DiffTFError, EmptyShapeError
from core.report_builder import ReportBuilder, TelemetryWriter, create_report_builder, rows_from_frames
from core.run_context import CommandRecord, CommandType, RunContext, create_run_context
from core.utils import Stopwatch, log_banner, setup_logging
from diffusion import (
    create_denoiser,
    create_diffusion_trainer,
    ddim_sample,
    ddpm_sample,
    interpolation_path,
    load_denoiser,
    schedule_from_config,
)
from diffusion.denoiser import DenoiserNet
from evaluation import evaluate_sets, extract_point_cloud, occupancy_density_fn, triplane_density_fn
from synth_data import camera_ring, generate_dataset, load_dataset, save_dataset
from triplane import NormStats, Triplane, compute_norm_stats, create_triplane_fitter, denormalize, normalize
from triplane.constants import TRIPLANE_SUFFIX
from triplane.renderer import render_image
from triplane.representation import stack_planes
from triplane.storage import (
    list_triplanes,
    load_decoder,
    load_norm_stats,
    load_triplane,
    load_triplane_dir,
    save_decoder,
    save_norm_stats,
    save_triplane,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


@dataclass
class CommandResult:
    """Data structure for standardized command outcomes."""
    command: str
    exit_code: int
    outputs: Dict[str, Any] = field(default_factory=dict)
    message: str = ""
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.exit_code == EXIT_OK

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "exit_code": self.exit_code,
            "outputs": self.outputs,
            "message": self.message,
            "seconds": round(self.seconds, 3),
        }


class PipelineEngine:
    """
    Main engine of the DiffTF pipeline.

    Usage:
        engine = create_pipeline_engine(config, "runs/demo")
        result = engine.run("fit")
    """

    def __init__(self, config: RunConfig, root=None, configure_logging: bool = True):
        """
        Args:
            config: Resolved configuration (ablation flags included).
            root: Run directory; defaults to config.output_dir.
            configure_logging: Attach the console and run.log handlers.

        Raises:
            ValueError: no run directory given, or an inconsistent config.
        """
        root = root if root is not None else config.output_dir
        if not root:
            raise ValueError("an output directory is required (--out or DIFFTF_RUNS_DIR)")
        config.validate()
        self.config = config
        self.context: RunContext = create_run_context(root, config)
        if configure_logging:
            setup_logging(self.context.log_file, LOG_LEVEL)
        self.logger = logging.getLogger(__name__)
        self.reports: ReportBuilder = create_report_builder()

        self.stats = {
            "commands": 0,
            "failures": 0,
            "seconds": 0.0,
        }

        self.handlers = {
            CommandType.GEN_DATA: self.cmd_gen_data,
            CommandType.FIT: self.cmd_fit,
            CommandType.TRAIN: self.cmd_train,
            CommandType.SAMPLE: self.cmd_sample,
            CommandType.INTERPOLATE: self.cmd_interpolate,
            CommandType.EVAL: self.cmd_eval,
        }

    def run(self, command) -> CommandResult:
        """
        Execute one command and record it in the run manifest.

        Domain failures are logged and turned into exit code 1; anything else
        propagates.
        """
        command = CommandType(command)
        watch = Stopwatch()
        self.stats["commands"] += 1
        cfg = self.config

        log_banner(self.logger, f"[START] difftf {command.value} (seed={cfg.seed}, "
                                f"config={cfg.config_hash()[:12]}, variant={self.context.model_variant})")
        self.context.write_config()
        try:
            outputs = self.handlers[command]()
            result = CommandResult(command.value, EXIT_OK, outputs, "ok", watch.elapsed())
            self.logger.info(f"[SUCCESS] {command.value} finished in {result.seconds:.1f}s")
        except DiffTFError as e:
            self.stats["failures"] += 1
            self.logger.error(self.reports.build_error_message(command.value, e))
            result = CommandResult(command.value, EXIT_FAILURE, {}, str(e), watch.elapsed())

        self.stats["seconds"] += result.seconds
        self.context.record(CommandRecord(command, cfg.config_hash(), cfg.seed, result.exit_code,
                                          _jsonable(result.outputs), result.seconds))
        log_banner(self.logger, f"[{'OK' if result.ok else 'ERROR'}] difftf {command.value} "
                                f"exit={result.exit_code}")
        return result

    # ------------------------------------------------------------------
    # gen-data
    # ------------------------------------------------------------------
    def cmd_gen_data(self) -> Dict[str, Any]:
        data = self.config.data
        dataset = generate_dataset(
            data.num_objects, data.views_per_object, radius=data.camera_radius,
            resolution=data.resolution, seed=self.config.seed, fov_degrees=data.fov_degrees,
            kinds=data.kinds, workers=self.config.workers,
        )
        manifest = save_dataset(dataset, self.context.dataset_dir)
        stats = dataset.get_stats_summary()
        self.logger.info(f"[STATS] {stats['objects']} objects, {stats['views']} views, "
                         f"classes {stats['classes']}")
        return {"manifest": str(manifest), **stats}

    # ------------------------------------------------------------------
    # fit
    # ------------------------------------------------------------------
    def cmd_fit(self) -> Dict[str, Any]:
        """
        Shared decoder, then one triplane per training object, then both the
        normalized and the pass-through triplane sets.

        Resumes: a saved decoder skips the joint phase; objects whose raw
        triplane exists are not refitted.
        """
        ctx = self.context
        ctx.require_dataset()
        dataset = load_dataset(ctx.dataset_dir)
        objects = [e for e in dataset.objects if e.split == "train"]
        if not objects:
            raise DiffTFError(f"{ctx.dataset_dir}: dataset has no training objects")

        fit_cfg = self.config.effective_fit()
        with TelemetryWriter(ctx.telemetry_path(CommandType.FIT)) as telemetry:
            fitter = create_triplane_fitter(fit_cfg, self.config.seed, telemetry, self.config.progress)

            if (ctx.decoder_dir / "manifest.json").exists():
                decoder = load_decoder(ctx.decoder_dir)
                self.logger.info("[OK] Shared decoder found; joint phase skipped")
            else:
                decoder, _ = fitter.train_shared_decoder(
                    [(e.object_id, e.obj.class_label, e.as_training_views()) for e in objects])
                save_decoder(ctx.decoder_dir, decoder)

            raw, previous = [], self.reports.read_fit_summary(ctx.fit_dir)
            reports, fitted = [], 0
            for entry in objects:
                path = ctx.raw_triplane_dir / f"{entry.object_id}{TRIPLANE_SUFFIX}"
                if path.exists():
                    tri, _ = load_triplane(path)
                    self.logger.info(f"[OK] {entry.object_id}: triplane exists, skipped")
                    if entry.object_id in previous:
                        reports.append(previous[entry.object_id])
                else:
                    tri, report = fitter.fit_triplane(entry.object_id, entry.obj.class_label,
                                                      entry.as_training_views(), decoder)
                    save_triplane(ctx.raw_triplane_dir, tri)
                    reports.append(report.to_dict())
                    fitted += 1
                raw.append(tri)

        written = self._write_normalized_sets(raw)
        if reports:
            self.reports.write_fit_summary(ctx.fit_dir, reports)
        psnrs = [r["psnr_fg"] for r in reports if r["psnr_fg"] is not None and np.isfinite(r["psnr_fg"])]
        return {
            "objects": len(raw),
            "fitted": fitted,
            "mean_psnr_fg": float(np.mean(psnrs)) if psnrs else None,
            "decoder": str(ctx.decoder_dir),
            **written,
            "fitter": fitter.get_stats_summary(),
        }

    def _write_normalized_sets(self, raw: List[Triplane]) -> Dict[str, str]:
        """Dataset-statistics set ("norm") and pass-through set ("nonorm")."""
        ctx = self.context
        variants = {
            True: compute_norm_stats(raw, clamp=self.config.fit.norm_clamp),
            False: NormStats.identity(raw[0].channels),
        }
        written = {}
        for normalized, stats in variants.items():
            directory = ctx.normalized_dir_for(normalized)
            stats_path = save_norm_stats(directory, stats)
            for tri in raw:
                save_triplane(directory, normalize(tri, stats), normalized=normalized,
                              stats_ref=stats_path.name)
            written["norm_dir" if normalized else "nonorm_dir"] = str(directory)
        self.logger.info(f"[FILE] Normalized triplanes: {len(raw)} objects x 2 variants")
        return written

    # ------------------------------------------------------------------
    # train
    # ------------------------------------------------------------------
    def cmd_train(self) -> Dict[str, Any]:
        ctx = self.context
        ctx.require_normalized()
        triplanes = load_triplane_dir(ctx.normalized_dir)
        data = stack_planes(triplanes)
        labels = np.array([t.class_label for t in triplanes], dtype=np.int64)
        if np.any(labels < 0):
            labels = None

        net = create_denoiser(self.config.effective_denoiser(), self.config.seed)
        self.logger.info(f"[STATS] Denoiser: {net.get_stats_summary()}")
        with TelemetryWriter(ctx.telemetry_path(CommandType.TRAIN)) as telemetry:
            trainer = create_diffusion_trainer(self.config.diffusion, self.config.seed,
                                               telemetry, self.config.progress)
            state = trainer.train(net, data, labels, ctx.checkpoint_dir)
        return {
            "step": state.step,
            "checkpoint_dir": str(ctx.checkpoint_dir),
            "parameters": state.net.parameter_count(),
            **trainer.get_stats_summary(),
        }

    # ------------------------------------------------------------------
    # sample / interpolate
    # ------------------------------------------------------------------
    def _load_generator(self) -> Tuple[DenoiserNet, Dict, NormStats]:
        ctx = self.context
        ctx.require_checkpoint()
        ctx.require_decoder()
        ctx.require_normalized()
        net, meta = load_denoiser(ctx.checkpoint_dir)
        return net, meta, load_norm_stats(ctx.normalized_dir)

    def _class_labels(self, net: DenoiserNet) -> Optional[int]:
        label = self.config.sample.class_label
        if label is None:
            if self.config.diffusion.null_class_prob == 0:
                self.logger.warning("[WARN] No --class given and the model was trained without "
                                    "label dropout; null-class samples may be poor")
            return None
        if not 0 <= label < net.config.num_classes:
            raise DiffTFError(f"class {label} outside [0, {net.config.num_classes})")
        return label

    def _render_frames(self, triplanes: List[Triplane], views: int) -> List[np.ndarray]:
        """RGBA renders of every triplane from `views` cameras, triplane-major."""
        data, sample = self.config.data, self.config.sample
        decoder = load_decoder(self.context.decoder_dir)
        cameras = camera_ring(views, data.camera_radius, data.fov_degrees, sample.grid_resolution)
        return [render_image(t, decoder, cam, sample.render_samples) for t in triplanes for cam in cameras]

    def cmd_sample(self) -> Dict[str, Any]:
        ctx, cfg = self.context, self.config
        net, _, stats = self._load_generator()
        label = self._class_labels(net)
        schedule = schedule_from_config(cfg.diffusion)
        rng = make_rng(cfg.seed, "sample")
        count = cfg.sample.count
        steps = cfg.diffusion.inference_steps

        self.logger.info(f"[START] {cfg.sample.sampler.upper()} sampling: {count} triplanes, "
                         f"{steps} steps, class={label if label is not None else 'null'}")
        if cfg.sample.sampler == "ddim":
            z = rng.standard_normal((count,) + net.input_shape)
            x = ddim_sample(net, schedule, z, label, steps, progress=cfg.progress)
        else:
            x = ddpm_sample(net, schedule, count, rng, label, steps, progress=cfg.progress)

        clamp = stats.clamp if stats.clamp is not None else cfg.fit.norm_clamp
        inside = float(np.mean(np.abs(x) <= clamp))
        self.logger.info(f"[STATS] {inside:.2%} of sampled texels inside the +/-{clamp:g} envelope")

        class_label = -1 if label is None else label
        samples = []
        for i in range(count):
            tri = denormalize(Triplane(x[i], f"sample_{i:03d}", class_label), stats)
            save_triplane(ctx.samples_dir, tri)
            samples.append(tri)

        views = cfg.sample.grid_views
        frames = self._render_frames(samples, views)
        grid = self.reports.save_grid(rows_from_frames(frames, views), ctx.samples_dir / "grid.png")
        return {
            "samples": count,
            "sampler": cfg.sample.sampler,
            "class_label": label,
            "inside_clamp_fraction": inside,
            "samples_dir": str(ctx.samples_dir),
            "grid": str(grid),
        }

    def cmd_interpolate(self) -> Dict[str, Any]:
        """DDIM decodes of latents spaced along the great circle between two noise draws."""
        ctx, cfg = self.context, self.config
        net, _, stats = self._load_generator()
        label = self._class_labels(net)
        schedule = schedule_from_config(cfg.diffusion)
        rng = make_rng(cfg.seed, "interpolate")
        z1 = rng.standard_normal(net.input_shape)
        z2 = rng.standard_normal(net.input_shape)
        frames = cfg.sample.interpolation_frames

        latents = np.stack(interpolation_path(z1, z2, frames))
        x = ddim_sample(net, schedule, latents, label, cfg.diffusion.inference_steps,
                        progress=cfg.progress)
        class_label = -1 if label is None else label
        triplanes = []
        for i in range(frames):
            tri = denormalize(Triplane(x[i], f"frame_{i:03d}", class_label), stats)
            save_triplane(ctx.interpolation_dir, tri)
            triplanes.append(tri)

        strip = self.reports.save_strip(self._render_frames(triplanes, 1), ctx.interpolation_dir / "strip.png")
        return {"frames": frames, "interpolation_dir": str(ctx.interpolation_dir), "strip": str(strip)}

    # ------------------------------------------------------------------
    # eval
    # ------------------------------------------------------------------
    def cmd_eval(self) -> Dict[str, Any]:
        """COV and MMD of sampled shapes against the training objects' analytic surfaces."""
        ctx, cfg = self.context, self.config
        ctx.require_samples()
        ctx.require_decoder()
        ctx.require_dataset()
        decoder = load_decoder(ctx.decoder_dir)
        dataset = load_dataset(ctx.dataset_dir)
        ev = cfg.eval

        generated = []
        for path in list_triplanes(ctx.samples_dir)[: ev.set_size]:
            tri, _ = load_triplane(path)
            try:
                cloud = extract_point_cloud(triplane_density_fn(tri.planes, decoder), ev.points,
                                            ev.grid_resolution, rng=make_rng(cfg.seed, "eval", tri.object_id),
                                            source="generated", object_id=tri.object_id)
            except EmptyShapeError as e:
                self.logger.warning(f"[WARN] {tri.object_id}: {e}; excluded from S_g")
                continue
            generated.append(cloud)
        if not generated:
            raise EmptyShapeError(f"every sample in {ctx.samples_dir} is empty")

        reference = []
        for entry in [e for e in dataset.objects if e.split == "train"][: ev.set_size]:
            reference.append(extract_point_cloud(
                occupancy_density_fn(entry.obj), ev.points, ev.grid_resolution,
                rng=make_rng(cfg.seed, "eval", entry.object_id),
                source="reference", object_id=entry.object_id))

        result = evaluate_sets(generated, reference, cfg.workers)
        row = {"method": ctx.model_variant, "seed": cfg.seed, **result.to_dict()}
        paths = self.reports.write_metrics(ctx.eval_dir, [row])
        return {**result.to_dict(), "report": str(paths["table"]), "json": str(paths["json"])}

    def get_stats_summary(self) -> Dict[str, Any]:
        return {
            **self.stats,
            "seconds": round(self.stats["seconds"], 3),
            "run": self.context.get_run_summary(),
        }


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, np.generic):
        return value.item()
    return value


def create_pipeline_engine(config: RunConfig, root=None, configure_logging: bool = True) -> PipelineEngine:
    """Create a PipelineEngine for one run directory."""
    return PipelineEngine(config, root, configure_logging)
