"""The contrastive-loss family and its exact degeneracies.

Five variants share one symmetric InfoNCE core: a threshold-mixed single
loss, the dual sum, the dual sum with separate text towers, a triple sum
adding the text-text term, and a convex-weighted dual.
"""

import math

import numpy as np
import torch

from regionprompt.losses import (
    ContrastiveBatch, LossConfig, compute_loss, contrastive, dual_loss,
    single_loss, triple_loss, weighted_dual)

g = torch.Generator().manual_seed(0)
def unit(n, d):
    m = torch.randn(n, d, generator=g, dtype=torch.float64)
    return m / m.norm(dim=-1, keepdim=True)

vis, clue, inf = unit(8, 16), unit(8, 16), unit(8, 16)
s = 1 / 0.07  # the learned temperature's initial value

print("core symmetric InfoNCE:",
      f"{contrastive(ContrastiveBatch(vis, inf, torch.tensor(s))).item():.4f}")

# threshold endpoints collapse the mixed loss onto a single pairing
rng = np.random.default_rng(0)
print("threshold 0 == vision-inference:",
      torch.equal(single_loss(vis, clue, inf, 0.0, rng, s),
                  contrastive(ContrastiveBatch(vis, inf, torch.tensor(s)))))
print("threshold 1 == vision-clue:",
      torch.equal(single_loss(vis, clue, inf, 1.0, rng, s),
                  contrastive(ContrastiveBatch(vis, clue, torch.tensor(s)))))

# algebraic relations between the variants
d = dual_loss(vis, clue, inf, s)
print("balanced weighted == dual / 2:",
      torch.allclose(weighted_dual(vis, clue, inf, 0.5, 0.5, s), d / 2))
print("triple - dual == text-text term:",
      torch.allclose(triple_loss(vis, clue, inf, s) - d,
                     contrastive(ContrastiveBatch(inf, clue, torch.tensor(s)))))

# two perfectly separated samples have the closed form ln(1 + e^{-s})
eye = torch.eye(2, dtype=torch.float64)
for scale in (1.0, 4.0, 14.0):
    got = contrastive(ContrastiveBatch(eye, eye.clone(), torch.tensor(scale))).item()
    print(f"N=2 closed form at s={scale:5.1f}: {got:.6f} "
          f"(expected {math.log(1 + math.exp(-scale)):.6f})")

# the dispatch layer is what the train loop calls
for variant in ("single", "mtl", "dual", "dual_star", "triple", "weighted_dual"):
    cfg = LossConfig(variant=variant, alpha=0.3, beta=0.7)
    loss = compute_loss(cfg, vis, clue, inf, rng=np.random.default_rng(1),
                        logit_scale=s)
    print(f"{variant:>13}: {loss.item():.4f}")
