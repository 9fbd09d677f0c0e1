"""Patch-token geometry: patchify, positional-encoding inflation, assembly.

Patches are flattened row-major over the grid, and each patch's pixels are
flattened (row, col, channel) before the linear projection. Token length obeys
L = H*W / P^2 for every accepted input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .imaging import ComboImage

CLS = "cls"
REGION = "region"
CONTEXT = "context"


@dataclass(frozen=True)
class PatchGrid:
    rows: int
    cols: int
    patch_size: int

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0 or self.patch_size <= 0:
            raise ValueError(f"degenerate grid {self}")

    @property
    def length(self) -> int:
        return self.rows * self.cols

    @classmethod
    def for_image(cls, height: int, width: int, patch_size: int) -> "PatchGrid":
        if height % patch_size or width % patch_size:
            raise ValueError(
                f"image {height}x{width} not divisible by patch size {patch_size}; "
                "resize the input first")
        return cls(height // patch_size, width // patch_size, patch_size)


@dataclass
class PositionalEncoding:
    """A learned position table: one vector per grid cell plus a CLS vector."""

    grid: PatchGrid
    cls_vector: torch.Tensor    # (d,)
    grid_vectors: torch.Tensor  # (rows*cols, d)

    def __post_init__(self):
        if self.grid_vectors.shape[0] != self.grid.length:
            raise ValueError(
                f"grid_vectors has {self.grid_vectors.shape[0]} rows, "
                f"grid expects {self.grid.length}")


@dataclass
class TokenSequence:
    tokens: torch.Tensor  # (L, d), optionally with a leading CLS row
    segment_labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.segment_labels) != self.tokens.shape[0]:
            raise ValueError("segment_labels length must equal token count")


def image_to_tensor(image) -> torch.Tensor:
    if isinstance(image, torch.Tensor):
        return image if image.is_floating_point() else image.float()
    arr = np.ascontiguousarray(image)
    t = torch.from_numpy(arr)
    return t if t.is_floating_point() else t.float()


def flatten_patches(image, patch_size: int) -> tuple[torch.Tensor, PatchGrid]:
    """Cut an (H, W, 3) raster into row-major patches of shape (L, P*P*3)."""
    img = image_to_tensor(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) raster, got {tuple(img.shape)}")
    h, w, c = img.shape
    grid = PatchGrid.for_image(h, w, patch_size)
    p = patch_size
    patches = img.reshape(grid.rows, p, grid.cols, p, c)
    patches = patches.permute(0, 2, 1, 3, 4).reshape(grid.length, p * p * c)
    return patches, grid


def patchify(image, patch_size: int, projection) -> TokenSequence:
    """Linear patch embedding: L = H*W/P^2 tokens in row-major order.

    ``projection`` is any callable mapping (L, P*P*3) -> (L, d); labels default
    to context and are overwritten by the assembly steps.
    """
    patches, grid = flatten_patches(image, patch_size)
    return TokenSequence(projection(patches), [CONTEXT] * grid.length)


def inflate_pe(pe: PositionalEncoding, target: PatchGrid) -> PositionalEncoding:
    """Resize a positional-encoding grid by bilinear interpolation.

    The grid table is viewed as a 2-D field per channel and interpolated with
    the align-corners convention, so source corners map exactly onto target
    corners; the CLS vector is copied untouched.
    """
    src = pe.grid
    d = pe.grid_vectors.shape[1]
    field2d = pe.grid_vectors.reshape(src.rows, src.cols, d).permute(2, 0, 1).unsqueeze(0)
    out = F.interpolate(field2d, size=(target.rows, target.cols),
                        mode="bilinear", align_corners=True)
    grid_vectors = out.squeeze(0).permute(1, 2, 0).reshape(target.length, d)
    return PositionalEncoding(target, pe.cls_vector.clone(), grid_vectors)


def _as_tokens(stream) -> torch.Tensor:
    return stream.tokens if isinstance(stream, TokenSequence) else stream


def assemble_rgp(region_tokens, context_tokens,
                 pe1: PositionalEncoding, pe2: PositionalEncoding,
                 cls_embed: torch.Tensor | None = None,
                 cls_pos: torch.Tensor | None = None) -> TokenSequence:
    """Add per-stream positions, then concatenate region tokens before context.

    When ``cls_embed`` is given, a single CLS token (plus its own position
    vector, if any) is prepended to the concatenation.
    """
    r = _as_tokens(region_tokens)
    g = _as_tokens(context_tokens)
    if r.shape[0] != pe1.grid.length:
        raise ValueError(f"region stream has {r.shape[0]} tokens, pe1 grid expects {pe1.grid.length}")
    if g.shape[0] != pe2.grid.length:
        raise ValueError(f"context stream has {g.shape[0]} tokens, pe2 grid expects {pe2.grid.length}")
    parts = [r + pe1.grid_vectors, g + pe2.grid_vectors]
    labels = [REGION] * r.shape[0] + [CONTEXT] * g.shape[0]
    if cls_embed is not None:
        cls_tok = cls_embed if cls_pos is None else cls_embed + cls_pos
        parts.insert(0, cls_tok.reshape(1, -1))
        labels.insert(0, CLS)
    return TokenSequence(torch.cat(parts, dim=0), labels)


def combo_segment_labels(combo: ComboImage, grid: PatchGrid) -> list[str]:
    """Per-token region/context labels for a patchified combo image."""
    labels = []
    for r in range(grid.rows):
        for c in range(grid.cols):
            if combo.axis == "vertical":
                in_first = r < grid.rows // 2
                is_region = in_first == (combo.region_extent == "top")
            else:
                in_first = c < grid.cols // 2
                is_region = in_first == (combo.region_extent == "left")
            labels.append(REGION if is_region else CONTEXT)
    return labels


def assemble_rgps(combo: ComboImage, projection, pe_inter: PositionalEncoding,
                  cls_embed: torch.Tensor | None = None,
                  cls_pos: torch.Tensor | None = None) -> TokenSequence:
    """Patchify a combo image and add one interpolated positional encoding.

    ``pe_inter`` must cover the full combo grid (twice the single-image grid);
    segment labels follow the combo's declared region extent.
    """
    patches, grid = flatten_patches(combo.raster, pe_inter.grid.patch_size)
    if (grid.rows, grid.cols) != (pe_inter.grid.rows, pe_inter.grid.cols):
        raise ValueError(
            f"combo grid {grid.rows}x{grid.cols} does not match "
            f"pe_inter grid {pe_inter.grid.rows}x{pe_inter.grid.cols}")
    tokens = projection(patches) + pe_inter.grid_vectors
    labels = combo_segment_labels(combo, grid)
    if cls_embed is not None:
        cls_tok = cls_embed if cls_pos is None else cls_embed + cls_pos
        tokens = torch.cat([cls_tok.reshape(1, -1), tokens], dim=0)
        labels = [CLS] + labels
    return TokenSequence(tokens, labels)


def split_pe_halves(pe_inter: PositionalEncoding) -> tuple[PositionalEncoding, PositionalEncoding]:
    """Partition a vertical-combo PE into its top and bottom single-image halves."""
    g = pe_inter.grid
    if g.rows % 2:
        raise ValueError("pe_inter must have an even number of rows to split")
    half = PatchGrid(g.rows // 2, g.cols, g.patch_size)
    d = pe_inter.grid_vectors.shape[1]
    table = pe_inter.grid_vectors.reshape(g.rows, g.cols, d)
    top = table[: g.rows // 2].reshape(half.length, d)
    bottom = table[g.rows // 2 :].reshape(half.length, d)
    return (PositionalEncoding(half, pe_inter.cls_vector, top),
            PositionalEncoding(half, pe_inter.cls_vector, bottom))
