"""Two-tower encoders: region-conditioned visual pipelines and text towers.

The visual tower supports four main modes — ``cpt`` (colored-overlay baseline,
left/right halves averaged), ``cpt_x2`` (left/right crops as two token
streams), ``rgp`` (region + context streams with separate positional tables)
and ``rgp_s`` (one combo image with a single inflated positional table) — plus
three ablation modes (``region_only``, ``context_only``, ``plain_sum``).

Every encode_* entry point returns unit-L2-normalized embeddings. Per-sample
token assembly is cheap; batched entry points stack the assembled sequences
and run the transformer trunk once.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from . import imaging, tokens
from .imaging import ComboImage, RegionBox
from .tokens import PatchGrid, PositionalEncoding, TokenSequence

VISUAL_MODES = ("cpt", "cpt_x2", "rgp", "rgp_s")
ABLATION_MODES = ("region_only", "context_only", "plain_sum")
TEXT_MODES = ("shared", "separate")

LOGIT_SCALE_INIT = float(np.log(1.0 / 0.07))
LOGIT_SCALE_MAX = 100.0


@dataclass
class BackboneConfig:
    """Architecture descriptor shared by the visual and text towers."""

    layers: int = 2
    width: int = 32
    heads: int = 4
    patch_size: int = 4
    resolution_region: int = 16
    resolution_context: int = 16
    embed_dim: int = 32
    text_layers: int = 2
    text_width: int = 32
    vocab_size: int = 64
    max_text_len: int = 16
    combo_axis: str = "vertical"

    def __post_init__(self):
        if self.resolution_region % self.patch_size or self.resolution_context % self.patch_size:
            raise ValueError("resolutions must be divisible by the patch size")


def tiny_backbone(**overrides) -> BackboneConfig:
    """Desk-scale backbone: seconds-scale forwards, still a real transformer."""
    return BackboneConfig(**overrides)


class ResidualBlock(nn.Module):
    """Pre-norm transformer block: attention then MLP, both residual."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.ln2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, width * 4), nn.GELU(), nn.Linear(width * 4, width))

    def forward(self, x):
        h = self.ln1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.ln2(x))


class Trunk(nn.Module):
    def __init__(self, width: int, layers: int, heads: int):
        super().__init__()
        self.blocks = nn.ModuleList(ResidualBlock(width, heads) for _ in range(layers))
        self.ln_final = nn.LayerNorm(width)

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return self.ln_final(x)


class VisualTower(nn.Module):
    """Patch embedding + positional tables + shared trunk + projection head.

    Positional parameters depend on the mode: a single table for cpt and the
    ablation modes, two tables for rgp / cpt_x2, and one double-size table for
    rgp_s. The CLS token keeps its own position vector, never interpolated.
    """

    def __init__(self, cfg: BackboneConfig, mode: str):
        super().__init__()
        if mode not in VISUAL_MODES + ABLATION_MODES:
            raise ValueError(f"unknown visual mode {mode!r}")
        self.cfg = cfg
        self.mode = mode
        p, w = cfg.patch_size, cfg.width
        self.patch_proj = nn.Linear(3 * p * p, w)
        self.cls_embed = nn.Parameter(torch.randn(w) * 0.02)
        self.cls_pos = nn.Parameter(torch.randn(w) * 0.02)
        self.trunk = Trunk(w, cfg.layers, cfg.heads)
        self.proj = nn.Linear(w, cfg.embed_dim, bias=False)

        self.region_grid = PatchGrid.for_image(cfg.resolution_region, cfg.resolution_region, p)
        self.context_grid = PatchGrid.for_image(cfg.resolution_context, cfg.resolution_context, p)

        def table(grid):
            return nn.Parameter(torch.randn(grid.length, w) * 0.02)

        if mode in ("rgp", "cpt_x2"):
            self.pe1_grid = table(self.region_grid)
            self.pe2_grid = table(self.context_grid)
        elif mode == "rgp_s":
            self.combo_grid = self._combo_grid()
            self.pe_inter_grid = table(self.combo_grid)
        else:  # cpt and ablation modes share one single-image table
            self.pe_grid = table(self.context_grid)

    def _combo_grid(self) -> PatchGrid:
        cfg = self.cfg
        if cfg.resolution_region != cfg.resolution_context:
            raise ValueError("rgp_s requires equal region and context resolutions")
        g = self.context_grid
        if cfg.combo_axis == "vertical":
            return PatchGrid(2 * g.rows, g.cols, g.patch_size)
        return PatchGrid(g.rows, 2 * g.cols, g.patch_size)

    def pe(self, name: str) -> PositionalEncoding:
        """Positional table as a PositionalEncoding view over live parameters."""
        grids = {"pe": self.context_grid, "pe1": self.region_grid,
                 "pe2": self.context_grid, "pe_inter": getattr(self, "combo_grid", None)}
        return PositionalEncoding(grids[name], self.cls_pos, getattr(self, name + "_grid"))

    def project_patches(self, patches: torch.Tensor) -> torch.Tensor:
        return self.patch_proj(patches.to(self.patch_proj.weight.dtype))

    def pool_project(self, sequences: torch.Tensor) -> torch.Tensor:
        """(B, L, w) stacked CLS-leading sequences -> (B, embed_dim)."""
        out = self.trunk(sequences)
        return self.proj(out[:, 0])


class TextTokenizer:
    """Character-level tokenizer over a 64-symbol toy vocabulary."""

    PAD, BOS, EOS = 0, 1, 2

    def __init__(self, max_len: int = 16):
        chars = "abcdefghijklmnopqrstuvwxyz0123456789_ .,-!?'"
        self.stoi = {ch: i + 3 for i, ch in enumerate(chars)}
        self.vocab_size = 64
        self.max_len = max_len

    def encode(self, text: str) -> tuple[list[int], int]:
        """Return (ids padded to max_len, index of the EOS token)."""
        if not text:
            raise ValueError("cannot encode empty text")
        body = [self.stoi.get(ch, self.stoi[" "]) for ch in text.lower()]
        if len(body) > self.max_len - 2:
            warnings.warn(f"text {text!r} truncated to {self.max_len - 2} symbols")
            body = body[: self.max_len - 2]
        ids = [self.BOS] + body + [self.EOS]
        eos = len(ids) - 1
        ids = ids + [self.PAD] * (self.max_len - len(ids))
        return ids, eos


class TextTower(nn.Module):
    """Character transformer pooled at the EOS position."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        w = cfg.text_width
        self.tokenizer = TextTokenizer(cfg.max_text_len)
        self.token_embed = nn.Embedding(cfg.vocab_size, w)
        self.pos_embed = nn.Parameter(torch.randn(cfg.max_text_len, w) * 0.02)
        self.trunk = Trunk(w, cfg.text_layers, cfg.heads)
        self.proj = nn.Linear(w, cfg.embed_dim, bias=False)

    def forward(self, texts: list[str]) -> torch.Tensor:
        encoded = [self.tokenizer.encode(t) for t in texts]
        ids = torch.tensor([ids for ids, _ in encoded])
        eos = torch.tensor([eos for _, eos in encoded])
        x = self.token_embed(ids) + self.pos_embed
        out = self.trunk(x)
        return self.proj(out[torch.arange(len(texts)), eos])


def normalize(v: torch.Tensor) -> torch.Tensor:
    return v / v.norm(dim=-1, keepdim=True)


class EncoderBundle(nn.Module):
    """A full two-tower model: one visual pipeline plus one or two text towers.

    ``text_mode="separate"`` keeps two text towers with identical architecture,
    the second initialized as a copy of the first and optimized independently
    (the Dual-Contrast* configuration).
    """

    def __init__(self, cfg: BackboneConfig | None = None, visual_mode: str = "rgp_s",
                 text_mode: str = "shared"):
        super().__init__()
        if text_mode not in TEXT_MODES:
            raise ValueError(f"unknown text mode {text_mode!r}")
        self.cfg = cfg or BackboneConfig()
        self.visual_mode = visual_mode
        self.text_mode = text_mode
        self.visual = VisualTower(self.cfg, visual_mode)
        self.text1 = TextTower(self.cfg)
        if text_mode == "separate":
            self.text2 = TextTower(self.cfg)
            self.text2.load_state_dict(self.text1.state_dict())
        else:
            self.text2 = None
        self.log_logit_scale = nn.Parameter(torch.tensor(LOGIT_SCALE_INIT))

    @property
    def logit_scale(self) -> torch.Tensor:
        return self.log_logit_scale.exp().clamp(max=LOGIT_SCALE_MAX)

    # ---- pre-trunk sequence assembly (single sample, cheap) --------------

    def _seq_single(self, image, pe_name: str = "pe") -> torch.Tensor:
        v = self.visual
        seq = tokens.patchify(image, self.cfg.patch_size, v.project_patches)
        pe = v.pe(pe_name)
        if seq.tokens.shape[0] != pe.grid.length:
            raise ValueError(
                f"image yields {seq.tokens.shape[0]} tokens, table expects {pe.grid.length}")
        return torch.cat([(v.cls_embed + v.cls_pos).reshape(1, -1),
                          seq.tokens + pe.grid_vectors])

    def _seq_two_stream(self, first, second) -> torch.Tensor:
        v = self.visual
        r = tokens.patchify(first, self.cfg.patch_size, v.project_patches)
        g = tokens.patchify(second, self.cfg.patch_size, v.project_patches)
        seq = tokens.assemble_rgp(r, g, v.pe("pe1"), v.pe("pe2"),
                                  cls_embed=v.cls_embed, cls_pos=v.cls_pos)
        return seq.tokens

    def _seq_combo(self, combo: ComboImage) -> torch.Tensor:
        v = self.visual
        seq = tokens.assemble_rgps(combo, v.project_patches, v.pe("pe_inter"),
                                   cls_embed=v.cls_embed, cls_pos=v.cls_pos)
        return seq.tokens

    def _cpt_halves(self, image, box: RegionBox) -> tuple[np.ndarray, np.ndarray]:
        """Overlay in original coordinates, then resize to side x 2*side and split."""
        side = self.cfg.resolution_context
        altered = imaging.apply_cpt_overlay(np.asarray(image, dtype=np.float32), box)
        wide = imaging.resize(altered, side, 2 * side)
        return imaging.split_left_right(wide)

    def _observation_sequences(self, image, box: RegionBox) -> list[torch.Tensor]:
        """Pre-trunk sequences for one observation; 2 entries when the mode
        averages or sums two independent forwards."""
        mode = self.visual_mode
        img = np.asarray(image, dtype=np.float32)
        if mode == "cpt":
            left, right = self._cpt_halves(img, box)
            return [self._seq_single(left), self._seq_single(right)]
        if mode == "cpt_x2":
            left, right = self._cpt_halves(img, box)
            return [self._seq_two_stream(left, right)]
        side = self.cfg.resolution_context
        context = imaging.resize(img, side, side)
        if mode == "context_only":
            return [self._seq_single(context)]
        region_side = side if mode in ABLATION_MODES else self.cfg.resolution_region
        region = imaging.crop_region(img, box, region_side)
        if mode == "rgp":
            return [self._seq_two_stream(region, context)]
        if mode == "rgp_s":
            return [self._seq_combo(imaging.make_combo(region, context, self.cfg.combo_axis))]
        if mode == "region_only":
            return [self._seq_single(region)]
        if mode == "plain_sum":
            return [self._seq_single(region), self._seq_single(context)]
        raise ValueError(f"unknown visual mode {mode!r}")

    # ---- batched entry points --------------------------------------------

    def encode_observations(self, images, boxes) -> torch.Tensor:
        """Preprocess + forward a batch of observations; one trunk call."""
        per_sample = [self._observation_sequences(img, box)
                      for img, box in zip(images, boxes)]
        flat = [s for seqs in per_sample for s in seqs]
        feats = self.visual.pool_project(torch.stack(flat))
        out, i = [], 0
        for seqs in per_sample:
            n = len(seqs)
            # two-forward modes combine features before normalization:
            # cpt averages the halves, plain_sum adds region and context
            chunk = feats[i : i + n]
            vec = chunk[0] if n == 1 else (chunk.mean(0) if self.visual_mode == "cpt"
                                           else chunk.sum(0))
            out.append(vec)
            i += n
        return normalize(torch.stack(out))

    def encode_observation(self, image, box: RegionBox) -> torch.Tensor:
        """Full preprocessing + forward for one observation."""
        return self.encode_observations([image], [box])[0]

    def encode_texts(self, texts: list[str], role: str = "inference") -> torch.Tensor:
        """Encode clue or inference sentences; routing depends on text_mode."""
        if role not in ("clue", "inference"):
            raise ValueError(f"role must be 'clue' or 'inference', got {role!r}")
        tower = self.text1
        if self.text_mode == "separate" and role == "clue":
            tower = self.text2
        return normalize(tower(texts))

    def encode_text(self, text: str, role: str = "inference") -> torch.Tensor:
        return self.encode_texts([text], role)[0]

    # ---- per-pipeline entry points (single sample) ------------------------

    def encode_visual_cpt(self, image, box: RegionBox) -> torch.Tensor:
        """Overlay -> resize -> split -> encode halves -> mean -> normalize."""
        left, right = self._cpt_halves(np.asarray(image, dtype=np.float32), box)
        feats = self.visual.pool_project(
            torch.stack([self._seq_single(left), self._seq_single(right)]))
        return normalize(feats.mean(0))

    def encode_visual_cpt_x2(self, image, box: RegionBox) -> torch.Tensor:
        """Left/right crops of the overlaid image as two token streams."""
        left, right = self._cpt_halves(np.asarray(image, dtype=np.float32), box)
        seq = self._seq_two_stream(left, right)
        return normalize(self.visual.pool_project(seq.unsqueeze(0))[0])

    def encode_visual_rgp(self, region_img, context_img) -> torch.Tensor:
        """Fine-grained region tokens concatenated before coarse context tokens."""
        seq = self._seq_two_stream(region_img, context_img)
        return normalize(self.visual.pool_project(seq.unsqueeze(0))[0])

    def encode_visual_rgps(self, region_img, context_img,
                           axis: str | None = None) -> torch.Tensor:
        """Stack region and context into a combo image under one positional table."""
        combo = imaging.make_combo(np.asarray(region_img, dtype=np.float32),
                                   np.asarray(context_img, dtype=np.float32),
                                   axis or self.cfg.combo_axis)
        return self.encode_combo(combo)

    def encode_combo(self, combo: ComboImage) -> torch.Tensor:
        seq = self._seq_combo(combo)
        return normalize(self.visual.pool_project(seq.unsqueeze(0))[0])


# ---- pretrained-weight adapter -------------------------------------------
#
# Archive format: a flat dict of named tensors saved with torch.save. Names
# follow the module tree of a single-positional-table bundle:
#   visual.patch_proj.{weight,bias}   patch embedding
#   visual.cls_embed / visual.cls_pos CLS token and its position vector
#   visual.pe_grid                    single-image positional table (L, width)
#   visual.trunk.*                    transformer blocks + final layer norm
#   visual.proj.weight                projection head
#   text1.* / text2.*                 text towers (text2 optional)
#   log_logit_scale                   learned temperature
# pe_grid rows must match the configured single-image grid; a mismatch is
# rejected unless allow_pe_inflate=True, in which case the table is resized by
# bilinear interpolation before mode-specific placement.


def save_weights(bundle: EncoderBundle, path) -> None:
    archive = {k: v.detach().clone() for k, v in bundle.state_dict().items()}
    if "visual.pe_grid" not in archive and "visual.pe2_grid" in archive:
        # canonical single-table entry, exported from the context-stream table
        archive["visual.pe_grid"] = archive["visual.pe2_grid"]
    torch.save(archive, path)


def load_weights(bundle: EncoderBundle, path, allow_pe_inflate: bool = False) -> EncoderBundle:
    """Load a named-tensor archive into a bundle, adapting positional tables.

    Trunk, towers and temperature load verbatim. The archive's single-image
    table ``visual.pe_grid`` seeds the mode-specific tables: copied into pe /
    pe1 / pe2, or bilinearly inflated into pe_inter (separately initialized,
    independently optimized afterwards).
    """
    archive = torch.load(path, weights_only=True)
    own = bundle.state_dict()
    v = bundle.visual

    pe_src = archive.get("visual.pe_grid")
    if pe_src is None:
        raise KeyError("archive missing 'visual.pe_grid'")
    src_len = pe_src.shape[0]
    side = int(round(src_len ** 0.5))
    src_grid = PatchGrid(side, side, v.cfg.patch_size)
    src_pe = PositionalEncoding(src_grid, archive["visual.cls_pos"], pe_src)

    def fit(grid: PatchGrid) -> torch.Tensor:
        if (grid.rows, grid.cols) == (src_grid.rows, src_grid.cols):
            return pe_src.clone()
        if not allow_pe_inflate:
            raise ValueError(
                f"positional grid {grid.rows}x{grid.cols} conflicts with archive "
                f"{src_grid.rows}x{src_grid.cols}; pass allow_pe_inflate=True")
        return tokens.inflate_pe(src_pe, grid).grid_vectors

    state = {}
    for key, tensor in own.items():
        if key == "visual.pe_grid":
            state[key] = fit(v.context_grid)
        elif key == "visual.pe1_grid":
            state[key] = fit(v.region_grid)
        elif key == "visual.pe2_grid":
            state[key] = fit(v.context_grid)
        elif key == "visual.pe_inter_grid":
            state[key] = fit(v.combo_grid)
        elif key in archive:
            state[key] = archive[key]
        elif key.startswith("text2."):
            # separate-encoder mode seeded from the archive's first text tower
            state[key] = archive["text1." + key[len("text2."):]]
        else:
            raise KeyError(f"archive missing tensor {key!r}")
    bundle.load_state_dict(state)
    return bundle
