"""
TRIPLANE FITTER
========================================

Responsibility: Fit triplanes to multi-view images with the shared decoder.

Flow:
1. train_shared_decoder: optimize one decoder jointly with a triplane per object
   (weak regularization, round-robin over objects)
2. fit_triplane: fit a fresh triplane per object; a private copy of the decoder keeps
   training at its own (lower) learning rate, then the triplane settles on the shared one
3. every step writes one telemetry record: step, mse_c, mse_m, tv, l2, psnr_fg, seconds
"""

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from autodiff import ops
from autodiff.optim import Adam
from autodiff.rng import make_rng
from autodiff.tensor import Tensor, backward, no_grad
from config.settings import FitConfig, FitPhase
from core.errors import NonFiniteError, TrainingDivergedError
from core.utils import Stopwatch
from triplane.decoder import SharedDecoder, create_shared_decoder
from triplane.renderer import Camera, render_image, render_view
from triplane.representation import Triplane

logger = logging.getLogger(__name__)

TelemetrySink = Callable[[Dict], None]


# ============================================================================
# LOSS TERMS
# ============================================================================

def tv_loss(planes) -> Tensor:
    """Sum of absolute neighbour differences along both in-plane axes of every plane."""
    planes = planes if isinstance(planes, Tensor) else Tensor(planes)
    along_w = ops.sub(planes[..., 1:, :], planes[..., :-1, :])
    along_h = ops.sub(planes[..., :, 1:], planes[..., :, :-1])
    return ops.add(ops.sum(ops.abs(along_w)), ops.sum(ops.abs(along_h)))


def l2_loss(planes) -> Tensor:
    """Plain sum of squared texel values."""
    planes = planes if isinstance(planes, Tensor) else Tensor(planes)
    return ops.sum(ops.square(planes))


@dataclass
class FitLossTerms:
    total: Tensor
    mse_c: float
    mse_m: float
    tv: float
    l2: float

    def as_dict(self) -> Dict[str, float]:
        return {"loss": float(self.total.item()), "mse_c": self.mse_c, "mse_m": self.mse_m,
                "tv": self.tv, "l2": self.l2}


def fit_loss(rgb: Tensor, mask: Tensor, gt_rgb, gt_mask, planes, phase: FitPhase) -> FitLossTerms:
    """
    MSE(color) + MSE(mask) + tv_weight * TV(F) + l2_weight * ||F||^2.

    Raises:
        NonFiniteError: naming the first non-finite term.
    """
    planes = planes if isinstance(planes, Tensor) else Tensor(planes)
    mse_c = ops.mean(ops.square(ops.sub(rgb, Tensor(gt_rgb))))
    mse_m = ops.mean(ops.square(ops.sub(mask, Tensor(gt_mask))))
    tv = tv_loss(planes)
    l2 = l2_loss(planes)

    for name, term in (("mse_c", mse_c), ("mse_m", mse_m), ("tv", tv), ("l2", l2)):
        if not np.isfinite(term.item()):
            raise NonFiniteError(f"fit loss term {name}", f"value {term.item()}")

    total = ops.add(ops.add(mse_c, mse_m),
                    ops.add(ops.mul(tv, phase.tv_weight), ops.mul(l2, phase.l2_weight)))
    return FitLossTerms(total, mse_c.item(), mse_m.item(), tv.item(), l2.item())


# ============================================================================
# PIXEL SAMPLING AND QUALITY
# ============================================================================

def sample_training_pixels(image: np.ndarray, mask: np.ndarray, rho: float, batch: int,
                           rng: np.random.Generator) -> np.ndarray:
    """
    Flat pixel indices for one step.

    With probability rho the whole batch comes from foreground pixels (mask > 0.5),
    otherwise from the full image. An empty foreground falls back to the full image.
    """
    mask = np.asarray(mask).reshape(-1)
    if np.asarray(image).shape[0] * np.asarray(image).shape[1] != mask.size:
        raise ValueError("mask and image sizes differ")
    foreground = np.flatnonzero(mask > 0.5)
    use_foreground = rng.random() < rho
    if use_foreground and foreground.size:
        return foreground[rng.integers(0, foreground.size, size=batch)]
    return rng.integers(0, mask.size, size=batch)


def psnr_foreground(pred_rgb: np.ndarray, gt_rgb: np.ndarray, gt_mask: np.ndarray) -> float:
    """PSNR over foreground pixels of colors in [0, 1]; NaN without foreground."""
    fg = np.asarray(gt_mask).reshape(-1) > 0.5
    if not fg.any():
        return float("nan")
    diff = np.asarray(pred_rgb, dtype=np.float64).reshape(-1, 3)[fg] - \
        np.asarray(gt_rgb, dtype=np.float64).reshape(-1, 3)[fg]
    mse = float(np.mean(diff * diff))
    return float("inf") if mse == 0.0 else -10.0 * math.log10(mse)


def split_rgba(image: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """uint8 or float RGBA -> (rgb (P, 3), mask (P,)) in [0, 1]."""
    values = np.asarray(image)
    if values.dtype == np.uint8:
        values = values.astype(np.float32) / 255.0
    flat = values.reshape(-1, 4)
    return flat[:, :3], flat[:, 3]


@dataclass
class FitReport:
    object_id: str
    psnr_fg: float
    seconds: float
    steps: int
    final_terms: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return asdict(self)


# ============================================================================
# FITTER
# ============================================================================

class TriplaneFitter:
    """
    Owns the fitting loops. Views are (Camera, RGBA image) pairs; objects are
    (object_id, class_label, views) tuples.
    """

    def __init__(self, cfg: FitConfig, seed: int = 0, telemetry: Optional[TelemetrySink] = None,
                 progress: bool = False):
        self.cfg = cfg
        self.seed = seed
        self.telemetry = telemetry
        self.progress = progress
        self.logger = logging.getLogger(__name__)
        self.stats = {"steps": 0, "objects_fitted": 0, "seconds": 0.0}

    # ------------------------------------------------------------------
    # Helpers
    # ------------------------------------------------------------------
    def init_planes(self, object_id: str, stream: str) -> Tensor:
        rng = make_rng(self.seed, "triplane-init", stream, object_id)
        shape = (3, self.cfg.channels, self.cfg.resolution, self.cfg.resolution)
        return Tensor(rng.normal(0.0, self.cfg.init_std, size=shape), requires_grad=True)

    def _emit(self, record: Dict) -> None:
        if self.telemetry is None:
            return
        clean = {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                 for k, v in record.items()}
        self.telemetry(clean)

    def _step(self, planes: Tensor, decoder: SharedDecoder, view: Tuple[Camera, np.ndarray],
              phase: FitPhase, rng: np.random.Generator,
              optimizers: Sequence[Adam]) -> Tuple[FitLossTerms, float]:
        cam, image = view
        gt_rgb_all, gt_mask_all = split_rgba(image)
        pixels = sample_training_pixels(image, gt_mask_all, self.cfg.rho, self.cfg.rays_per_step, rng)
        rgb, mask = render_view(planes, decoder, cam, pixels, self.cfg.samples_per_ray,
                                stratified=True, rng=rng)
        gt_rgb, gt_mask = gt_rgb_all[pixels], gt_mask_all[pixels]
        terms = fit_loss(rgb, mask, gt_rgb, gt_mask, planes, phase)

        for opt in optimizers:
            opt.zero_grad()
        backward(terms.total)
        for opt in optimizers:
            opt.step()
        return terms, psnr_foreground(rgb.data, gt_rgb, gt_mask)

    def _check_divergence(self, loss: float, initial: float, step: int, object_id: str) -> None:
        if not math.isfinite(loss) or loss > self.cfg.divergence_factor * initial:
            raise TrainingDivergedError(
                f"fitting diverged on {object_id} at step {step}: loss {loss:.4g} "
                f"> {self.cfg.divergence_factor} x initial {initial:.4g}",
                {"object_id": object_id, "step": step, "loss": loss, "initial_loss": initial},
            )

    def evaluate_psnr(self, planes, decoder: SharedDecoder, views) -> float:
        """Mean foreground PSNR over the first `psnr_views` full-frame renders."""
        scores = []
        for cam, image in list(views)[: max(1, self.cfg.psnr_views)]:
            pred = render_image(planes, decoder, cam, self.cfg.samples_per_ray)
            gt_rgb, gt_mask = split_rgba(image)
            scores.append(psnr_foreground(pred[..., :3], gt_rgb, gt_mask))
        finite = [s for s in scores if math.isfinite(s)]
        return float(np.mean(finite)) if finite else float("nan")

    # ------------------------------------------------------------------
    # Phase 1: shared decoder
    # ------------------------------------------------------------------
    def train_shared_decoder(self, objects, decoder: Optional[SharedDecoder] = None
                             ) -> Tuple[SharedDecoder, List[Triplane]]:
        """
        Jointly optimize one decoder and a triplane per object.

        Args:
            objects: Sequence of (object_id, class_label, views).
            decoder: Optional decoder to continue from.

        Returns:
            (decoder, fitted triplanes in object order)

        Raises:
            TrainingDivergedError: when an object's loss exceeds divergence_factor x its first loss.
        """
        objects = list(objects)
        if not objects:
            raise ValueError("joint phase needs at least one object")
        phase = self.cfg.joint
        if decoder is None:
            decoder = create_shared_decoder(self.cfg, make_rng(self.seed, "decoder-init"))

        planes = [self.init_planes(oid, "joint") for oid, _, _ in objects]
        plane_opts = [Adam([p], lr=phase.triplane_lr) for p in planes]
        decoder_opt = Adam(decoder.parameters(), lr=phase.decoder_lr)
        rng = make_rng(self.seed, "joint-phase")
        initial: Dict[int, float] = {}
        watch = Stopwatch()

        self.logger.info(f"[START] Joint phase: {len(objects)} objects, {phase.steps} steps")
        for step in tqdm(range(phase.steps), desc="joint", disable=not self.progress):
            k = step % len(objects)
            object_id, _, views = objects[k]
            view = views[int(rng.integers(0, len(views)))]
            terms, psnr = self._step(planes[k], decoder, view, phase, rng,
                                     (plane_opts[k], decoder_opt))
            loss = terms.total.item()
            initial.setdefault(k, loss)
            self._check_divergence(loss, initial[k], step, object_id)

            self._emit({"phase": "joint", "step": step, "object_id": object_id,
                        **{key: terms.as_dict()[key] for key in ("mse_c", "mse_m", "tv", "l2")},
                        "psnr_fg": psnr, "seconds": round(watch.elapsed(), 3)})
            if (step + 1) % self.cfg.log_every == 0:
                self.logger.info(f"[STATS] joint step {step + 1}/{phase.steps} loss={loss:.5f} "
                                 f"psnr_fg={psnr:.2f}")
            self.stats["steps"] += 1

        fitted = [Triplane(p.data.copy(), oid, label) for p, (oid, label, _) in zip(planes, objects)]
        self.stats["seconds"] += watch.elapsed()
        self.logger.info(f"[OK] Joint phase finished in {watch.elapsed():.1f}s")
        return decoder, fitted

    # ------------------------------------------------------------------
    # Phase 2: per-object fitting
    # ------------------------------------------------------------------
    def settle_steps(self) -> int:
        return int(round(self.cfg.refit.steps * self.cfg.refit_settle_fraction))

    def fit_triplane(self, object_id: str, class_label: int, views, decoder: SharedDecoder
                     ) -> Tuple[Triplane, FitReport]:
        """
        Fit a fresh triplane for one object.

        The first steps slow-train a private copy of `decoder` next to the
        triplane; the last `settle_steps()` train the triplane alone against
        `decoder` itself. `decoder` is never modified, so objects can be fitted
        in any order or in parallel, and the returned triplane and its PSNR
        belong to the decoder that gets saved.
        """
        phase = self.cfg.refit
        planes = self.init_planes(object_id, "refit")
        plane_opt = Adam([planes], lr=phase.triplane_lr)
        settle_from = phase.steps - self.settle_steps()
        private = copy.deepcopy(decoder) if settle_from > 0 and phase.decoder_lr > 0 else decoder
        adapting = (plane_opt, Adam(private.parameters(), lr=phase.decoder_lr)) \
            if private is not decoder else (plane_opt,)
        rng = make_rng(self.seed, "refit-phase", object_id)
        views = list(views)
        watch = Stopwatch()
        initial = None
        terms = None

        for step in tqdm(range(phase.steps), desc=object_id, disable=not self.progress):
            view = views[int(rng.integers(0, len(views)))]
            if step < settle_from:
                terms, psnr = self._step(planes, private, view, phase, rng, adapting)
            else:
                terms, psnr = self._step(planes, decoder, view, phase, rng, (plane_opt,))
            loss = terms.total.item()
            initial = loss if initial is None else initial
            self._check_divergence(loss, initial, step, object_id)
            self._emit({"phase": "refit", "step": step, "object_id": object_id,
                        "settling": step >= settle_from,
                        **{key: terms.as_dict()[key] for key in ("mse_c", "mse_m", "tv", "l2")},
                        "psnr_fg": psnr, "seconds": round(watch.elapsed(), 3)})
            self.stats["steps"] += 1

        decoder.zero_grad()
        with no_grad():
            final_psnr = self.evaluate_psnr(planes, decoder, views)
        seconds = watch.elapsed()
        self.stats["objects_fitted"] += 1
        self.stats["seconds"] += seconds
        self.logger.info(f"[OK] {object_id}: psnr_fg={final_psnr:.2f} dB in {seconds:.1f}s")

        report = FitReport(object_id, final_psnr, seconds, phase.steps,
                           terms.as_dict() if terms is not None else {})
        return Triplane(planes.data.copy(), object_id, class_label), report

    def get_stats_summary(self) -> Dict:
        return dict(self.stats)


def create_triplane_fitter(cfg: FitConfig, seed: int = 0, telemetry: Optional[TelemetrySink] = None,
                           progress: bool = False) -> TriplaneFitter:
    return TriplaneFitter(cfg, seed=seed, telemetry=telemetry, progress=progress)
