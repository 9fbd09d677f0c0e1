"""Symmetric contrastive core and its variants.

The core is CLIP-style symmetric InfoNCE over scaled cosine-similarity logits
with one learned temperature, initialized to ln(1/0.07) and clamped at 100.
Variants: single (unified threshold form covering vision-inference,
vision-clue and multi-task), dual, dual* (separate text encoders), triple, and
the weighted dual form with alpha + beta = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

VARIANTS = ("single", "mtl", "dual", "dual_star", "triple", "weighted_dual")

# CLI-facing spellings for the variant vocabulary.
VARIANT_ALIASES = {
    "single": "single", "mtl": "mtl", "dual": "dual", "dual-star": "dual_star",
    "dual_star": "dual_star", "triple": "triple",
    "weighted-dual": "weighted_dual", "weighted_dual": "weighted_dual",
}


@dataclass
class ContrastiveBatch:
    vis: torch.Tensor          # (N, d), rows unit-norm
    txt: torch.Tensor          # (N, d), rows unit-norm
    logit_scale: torch.Tensor  # positive scalar

    def __post_init__(self):
        if self.vis.shape != self.txt.shape or self.vis.ndim != 2 or self.vis.shape[0] < 1:
            raise ValueError(
                f"need matching (N, d) embeddings, got {tuple(self.vis.shape)} "
                f"vs {tuple(self.txt.shape)}")


@dataclass
class LossConfig:
    """Serialized loss selection for a run."""

    variant: str = "dual"
    threshold: float = 0.5   # single-loss threshold; 0 = vision-inference, 1 = vision-clue
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        self.variant = VARIANT_ALIASES.get(self.variant, self.variant)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown loss variant {self.variant!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.variant == "weighted_dual" and abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise ValueError("weighted_dual requires alpha + beta = 1")


def _scale(logit_scale) -> torch.Tensor:
    s = logit_scale if isinstance(logit_scale, torch.Tensor) else torch.tensor(float(logit_scale))
    if s <= 0:
        raise ValueError("logit_scale must be positive")
    return s.clamp(max=100.0)


def _info_nce(vis: torch.Tensor, txt: torch.Tensor, logit_scale) -> torch.Tensor:
    if not (torch.isfinite(vis).all() and torch.isfinite(txt).all()):
        raise ValueError("non-finite embeddings in contrastive batch")
    logits = _scale(logit_scale) * vis @ txt.T
    labels = torch.arange(vis.shape[0], device=vis.device)
    return (F.cross_entropy(logits, labels) + F.cross_entropy(logits.T, labels)) / 2


def contrastive(batch: ContrastiveBatch) -> torch.Tensor:
    """Mean of image-to-text and text-to-image cross-entropies."""
    return _info_nce(batch.vis, batch.txt, batch.logit_scale)


def single_loss(vis, clue_txt, inf_txt, threshold: float, rng: np.random.Generator,
                logit_scale=1.0) -> torch.Tensor:
    """Unified single-contrastive form with a per-sample random text target.

    Each sample draws p ~ U[0,1) and matches against the inference text when
    p > threshold, otherwise the clue (p == threshold goes to the clue branch;
    measure-zero for continuous p). threshold 0 / 1 / 0.5 degenerate to pure
    vision-inference / pure vision-clue / multi-task learning.
    """
    p = torch.from_numpy(rng.random(vis.shape[0]))
    pick_inf = (p > threshold).to(vis.device).unsqueeze(1)
    txt = torch.where(pick_inf, inf_txt, clue_txt)
    return _info_nce(vis, txt, logit_scale)


def dual_loss(vis, clue_txt, inf_txt, logit_scale=1.0) -> torch.Tensor:
    """Vision-clue plus vision-inference contrastive terms, one shared scale."""
    return (_info_nce(vis, clue_txt, logit_scale)
            + _info_nce(vis, inf_txt, logit_scale))


def triple_loss(vis, clue_txt, inf_txt, logit_scale=1.0) -> torch.Tensor:
    """Dual terms plus an inference-clue term of the same symmetric form."""
    return dual_loss(vis, clue_txt, inf_txt, logit_scale) + _info_nce(inf_txt, clue_txt, logit_scale)


def weighted_dual(vis, clue_txt, inf_txt, alpha: float, beta: float,
                  logit_scale=1.0) -> torch.Tensor:
    """alpha * vision-clue + beta * vision-inference, with alpha + beta = 1."""
    if abs(alpha + beta - 1.0) > 1e-9:
        raise ValueError(f"alpha + beta must equal 1, got {alpha} + {beta}")
    return (alpha * _info_nce(vis, clue_txt, logit_scale)
            + beta * _info_nce(vis, inf_txt, logit_scale))


def compute_loss(config: LossConfig, vis, clue_txt, inf_txt,
                 rng: np.random.Generator | None = None, logit_scale=1.0) -> torch.Tensor:
    """Dispatch on the configured variant.

    dual_star shares this arithmetic with dual; the difference (separate text
    encoders) lives in how clue_txt was produced upstream.
    """
    v = config.variant
    if v in ("dual", "dual_star"):
        return dual_loss(vis, clue_txt, inf_txt, logit_scale)
    if v == "triple":
        return triple_loss(vis, clue_txt, inf_txt, logit_scale)
    if v == "weighted_dual":
        return weighted_dual(vis, clue_txt, inf_txt, config.alpha, config.beta, logit_scale)
    threshold = 0.5 if v == "mtl" else config.threshold
    if rng is None:
        raise ValueError(f"variant {v!r} needs an explicit rng")
    return single_loss(vis, clue_txt, inf_txt, threshold, rng, logit_scale)
