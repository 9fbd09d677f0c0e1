"""Retrieval metrics, localization accuracy, and the modality-gap diagnostic.

Ranks are 1-based and count strictly greater scores only, so exact ties favor
the ground-truth match. P@1 is reported for the image-to-text direction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .imaging import RegionBox
from .losses import _info_nce


@dataclass
class SimilarityMatrix:
    """K x K scores; row = observation index, column = inference index.

    Ground truth lies on the diagonal.
    """

    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2 or self.scores.shape[0] != self.scores.shape[1]:
            raise ValueError(f"similarity matrix must be square, got {self.scores.shape}")
        if not np.isfinite(self.scores).all():
            raise ValueError("similarity matrix contains non-finite values")


@dataclass
class LocalizationCase:
    """One grounding problem: pick the candidate box matching an inference."""

    image: np.ndarray
    inference: str
    candidates: list[RegionBox]
    target: RegionBox
    mode: str = "gt"  # "gt": exact box match; "auto": IoU >= 0.5 counts

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("localization case needs at least one candidate box")
        if self.mode == "gt" and self.target not in self.candidates:
            raise ValueError("GT-mode case must list the target among candidates")


@dataclass
class EvalReport:
    mean_rank_im2txt: float
    mean_rank_txt2im: float
    p_at_1_im2txt: float
    loc_acc_gt: float | None = None
    loc_acc_auto: float | None = None
    gap_losses: dict | None = None
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "mean_rank_im2txt": self.mean_rank_im2txt,
            "mean_rank_txt2im": self.mean_rank_txt2im,
            "p_at_1_im2txt": self.p_at_1_im2txt,
            "loc_acc_gt": self.loc_acc_gt,
            "loc_acc_auto": self.loc_acc_auto,
            "gap_losses": self.gap_losses,
            "metadata": self.metadata,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls(**{k: d.get(k) for k in
                      ("mean_rank_im2txt", "mean_rank_txt2im", "p_at_1_im2txt",
                       "loc_acc_gt", "loc_acc_auto", "gap_losses", "metadata")})

    def format_table(self) -> str:
        def fmt(x):
            return "   -  " if x is None else f"{x:6.2f}"

        loc = "   -   " if self.loc_acc_gt is None else (
            f"{100 * self.loc_acc_gt:5.2f} / "
            + ("  -  " if self.loc_acc_auto is None else f"{100 * self.loc_acc_auto:5.2f}"))
        lines = [
            "              Retrieval               Localization",
            "im->txt(v)  txt->im(v)  P@1_i->t(^)   GT/Auto-Box(^)",
            f"{fmt(self.mean_rank_im2txt)}      {fmt(self.mean_rank_txt2im)}      "
            f"{fmt(100 * self.p_at_1_im2txt)}        {loc}",
        ]
        return "\n".join(lines)


def similarity_matrix(vis_embs, txt_embs) -> SimilarityMatrix:
    """Cosine similarities; unit-norm inputs make these plain dot products."""
    vis = _to_array(vis_embs)
    txt = _to_array(txt_embs)
    if vis.shape != txt.shape:
        raise ValueError("need equally many visual and textual embeddings")
    return SimilarityMatrix(vis @ txt.T)


def _to_array(embs) -> np.ndarray:
    if isinstance(embs, torch.Tensor):
        return embs.detach().cpu().double().numpy()
    return np.asarray(embs, dtype=np.float64)


def retrieval_metrics(m: SimilarityMatrix) -> dict:
    """Mean 1-based ranks in both directions plus image-to-text P@1.

    rank(row k) = 1 + #{j != k : m[k, j] > m[k, k]}; the text-to-image
    direction uses columns. Exact ties do not penalize the ground truth.
    """
    s = m.scores
    k = s.shape[0]
    if k == 0:
        raise ValueError("empty similarity matrix")
    diag = np.diag(s)
    ranks_im2txt = 1 + (s > diag[:, None]).sum(axis=1)
    ranks_txt2im = 1 + (s > diag[None, :]).sum(axis=0)
    return {
        "mean_rank_im2txt": float(ranks_im2txt.mean()),
        "mean_rank_txt2im": float(ranks_txt2im.mean()),
        "p_at_1_im2txt": float((ranks_im2txt == 1).mean()),
        "ranks_im2txt": ranks_im2txt,
        "ranks_txt2im": ranks_txt2im,
    }


def iou(a: RegionBox, b: RegionBox) -> float:
    x0 = max(a.x, b.x)
    y0 = max(a.y, b.y)
    x1 = min(a.x + a.w, b.x + b.w)
    y1 = min(a.y + a.h, b.y + b.h)
    inter = max(0, x1 - x0) * max(0, y1 - y0)
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def localization_accuracy(cases: list[LocalizationCase], scorer,
                          iou_threshold: float = 0.5) -> tuple[float | None, float | None]:
    """Grounding accuracy over GT-candidate and auto-detected-candidate cases.

    ``scorer(image, box, inference) -> float`` scores a candidate box as the
    observation's region against the inference text; the argmax is the
    prediction. GT cases require the exact annotated box; auto cases count a
    prediction with IoU >= ``iou_threshold`` against the target.
    """
    hits = {"gt": [], "auto": []}
    for case in cases:
        scores = [scorer(case.image, box, case.inference) for box in case.candidates]
        predicted = case.candidates[int(np.argmax(scores))]
        if case.mode == "gt":
            hits["gt"].append(predicted == case.target)
        else:
            hits["auto"].append(iou(predicted, case.target) >= iou_threshold)
    gt_acc = float(np.mean(hits["gt"])) if hits["gt"] else None
    auto_acc = float(np.mean(hits["auto"])) if hits["auto"] else None
    return gt_acc, auto_acc


GAP_BATCH_SIZE = 64  # fixed batching for the modality-gap diagnostic


def modality_gap_losses(vis, clue, inf, logit_scale=1.0,
                        batch_size: int = GAP_BATCH_SIZE) -> dict:
    """Contrastive loss between each modality pair over a full embedding set.

    Embeddings are consumed in their given order, chunked at a fixed batch
    size, and the per-chunk losses are averaged (chunks of size 1 are skipped:
    a single-element softmax is identically zero).
    """
    vis, clue, inf = (torch.as_tensor(_to_array(e)) for e in (vis, clue, inf))
    pairs = {"vis_clue": (vis, clue), "vis_inf": (vis, inf), "inf_clue": (inf, clue)}
    out = {}
    for name, (a, b) in pairs.items():
        chunk_losses = []
        for start in range(0, a.shape[0], batch_size):
            av, bv = a[start : start + batch_size], b[start : start + batch_size]
            if av.shape[0] < 2:
                continue
            with torch.no_grad():
                chunk_losses.append(_info_nce(av, bv, logit_scale).item())
        out[name] = float(np.mean(chunk_losses)) if chunk_losses else 0.0
    return out
