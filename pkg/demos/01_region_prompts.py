"""Walkthrough of the region-conditioned visual prompts.

Builds each visual input variant for one observation: the colored-overlay
baseline, the two-stream region+context token sequence, and the combo-image
variant with a single inflated positional table.
"""

import numpy as np
import torch

from regionprompt import imaging, tokens
from regionprompt.data import synth_corpus
from regionprompt.encoders import EncoderBundle
from regionprompt.tokens import PatchGrid

obs = synth_corpus(seed=0, n=1).observations[0]
print(f"observation {obs.sample_id}: box={obs.box}, clue={obs.clue!r}, "
      f"inference={obs.inference!r}")

# colored-overlay baseline: tint the region, widen to side x 2*side, split
altered = imaging.apply_cpt_overlay(obs.image, obs.box)
wide = imaging.resize(altered, 16, 32)
left, right = imaging.split_left_right(wide)
print(f"overlay halves: {left.shape} + {right.shape}")

# two-stream prompt: region crop at fine granularity plus the whole image
region = imaging.crop_region(obs.image, obs.box, 16)
context = imaging.resize(obs.image, 16, 16)
print(f"region crop {region.shape}, context {context.shape}")

# combo-image variant: stack the two vertically, tokens share one table
combo = imaging.make_combo(region, context, axis="vertical")
print(f"combo raster {combo.raster.shape}, region half: {combo.region_half().shape}")

# token accounting: L = H*W/P^2 per stream, plus the CLS token
grid = PatchGrid.for_image(16, 16, 4)
print(f"each 16x16 stream at patch size 4 -> {grid.length} tokens; "
      f"two streams + CLS -> {2 * grid.length + 1}")

# a pretrained single-image positional table seeds the combo table by
# bilinear inflation with exact corner preservation
torch.manual_seed(0)
bundle = EncoderBundle(visual_mode="cpt")
pe = bundle.visual.pe("pe")
inflated = tokens.inflate_pe(pe, PatchGrid(8, 4, 4))
src = pe.grid_vectors.reshape(4, 4, -1)
dst = inflated.grid_vectors.reshape(8, 4, -1)
print("corner preserved exactly:",
      bool(torch.allclose(src[0, 0], dst[0, 0]) and torch.allclose(src[-1, -1], dst[-1, -1])))

# end to end: every pipeline maps the same observation to a unit vector
for mode in ("cpt", "cpt_x2", "rgp", "rgp_s"):
    torch.manual_seed(0)
    bundle = EncoderBundle(visual_mode=mode)
    with torch.no_grad():
        emb = bundle.encode_observation(obs.image, obs.box)
    print(f"{mode:>6}: embedding dim {emb.shape[0]}, norm {emb.norm():.6f}")
