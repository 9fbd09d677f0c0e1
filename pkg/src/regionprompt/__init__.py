"""Regional prompt tuning toolkit for visual abductive reasoning."""

from .imaging import (RegionBox, ComboImage, crop_region, make_combo,
                      apply_cpt_overlay, split_left_right, resize)
from .tokens import (PatchGrid, PositionalEncoding, TokenSequence,
                     patchify, inflate_pe, assemble_rgp, assemble_rgps)
from .encoders import BackboneConfig, EncoderBundle, tiny_backbone
from .losses import (ContrastiveBatch, LossConfig, contrastive, single_loss,
                     dual_loss, triple_loss, weighted_dual)
from .evaluation import (SimilarityMatrix, LocalizationCase, EvalReport,
                         similarity_matrix, retrieval_metrics,
                         localization_accuracy, modality_gap_losses, iou)
from .data import Observation, DatasetSplit, load_sherlock, synth_corpus
from .training import RunConfig, Checkpoint, train, evaluate, ablate, cosine_lr

__version__ = "0.1.0"
