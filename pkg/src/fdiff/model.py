"""Assembly of the denoiser and the optional trajectory fusion module per variant."""
from __future__ import annotations

import math

import numpy as np

from fdiff.attention import AttentionFusion, IterativeAttentionFusion
from fdiff.config import RunConfig
from fdiff.denoiser import Denoiser, UNetConfig
from fdiff.numerics.nn import Module
from fdiff.numerics.rng import SeededRng
from fdiff.numerics.tensor import Tensor

DTYPE = np.float32

# Stream indices mixed into the run seed (see SeededRng.derive_seed).
STREAM_INIT, STREAM_TRAIN, STREAM_SAMPLE = 1, 2, 3


def fusion_reduction(channels: int, r: int) -> int:
    """Largest divisor of ``channels`` not above ``r``, so MS-CAM fits any mask channel count."""
    return math.gcd(channels, r)


class FDiffModel(Module):
    """Denoiser plus (for fusion variants) an AF or IAF module over mask probabilities."""

    def __init__(self, cfg: RunConfig, rng: SeededRng):
        self.variant = cfg.variant
        c = cfg.phantom.n_classes
        self.unet_config = UNetConfig(mask_channels=c, image_channels=1, depth=cfg.depth,
                                      base_channels=cfg.base_channels, time_embed_dim=cfg.time_embed_dim,
                                      M=cfg.M, flm_enabled=[cfg.use_flm] * cfg.depth)
        self.denoiser = Denoiser(self.unet_config, rng)
        r = fusion_reduction(c, cfg.r)
        if cfg.fusion == "af":
            self.fusion = AttentionFusion(c, r, rng)
        elif cfg.fusion == "iaf":
            self.fusion = IterativeAttentionFusion(c, r, rng)
        else:
            self.fusion = None

    def predict_logits(self, x_t: Tensor, image: Tensor, t) -> Tensor:
        return self.denoiser(x_t, image, t)

    def fuse(self, x: Tensor, y: Tensor) -> Tensor:
        return self.fusion(x, y)

    @property
    def fuser(self):
        return None if self.fusion is None else self.fuse

    def fuzzy_layers(self):
        return self.denoiser.unet.fuzzy_layers()


def build_model(cfg: RunConfig) -> FDiffModel:
    rng = SeededRng(SeededRng.derive_seed(cfg.seed, STREAM_INIT))
    return FDiffModel(cfg, rng).astype(DTYPE)
