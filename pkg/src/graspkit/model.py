"""Encoder + decoder assembled into one grasp detector."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import SHAPES
from .decoder import DecoderConfig, decode_candidates, fuse_scales, grasp_head, init_decoder, nms_filter
from .encoder import EncoderConfig, encoder_forward, init_encoder

STRIDE = 8


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    k_angle: int = 18
    k_obj: int = len(SHAPES)
    fused_dim: int = 64
    head_dim: int = 64

    @classmethod
    def micro(cls, k_obj: int = len(SHAPES)) -> "ModelConfig":
        return cls(EncoderConfig.micro(), k_angle=18, k_obj=k_obj, fused_dim=64, head_dim=64)

    @property
    def decoder(self) -> DecoderConfig:
        dims = tuple(self.encoder.stage_dim(s) for s in (1, 2, 3))
        return DecoderConfig(dims, self.fused_dim, self.head_dim, self.k_angle, self.k_obj)

    @property
    def grid(self) -> int:
        return self.encoder.image_size // STRIDE


class GraspNet:
    """Holds named parameters and runs image batches through encoder, fusion and head."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, params: dict | None = None):
        self.cfg = cfg
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            params.update({"encoder." + k: v for k, v in init_encoder(cfg.encoder, rng).items()})
            params.update({"decoder." + k: v for k, v in init_decoder(cfg.decoder, rng).items()})
        self.params = params
        self._enc = {k[len("encoder."):]: v for k, v in params.items() if k.startswith("encoder.")}
        self._dec = {k[len("decoder."):]: v for k, v in params.items() if k.startswith("decoder.")}

    @classmethod
    def from_arrays(cls, cfg: ModelConfig, arrays: dict) -> "GraspNet":
        """Wrap loaded arrays, checking names and shapes against a fresh model."""
        ref = cls(cfg)
        missing = sorted(set(ref.params) - set(arrays))
        unknown = sorted(set(arrays) - set(ref.params))
        if missing or unknown:
            raise ValueError(f"parameter names differ: missing {missing[:3]}, unexpected {unknown[:3]}")
        for k, t in ref.params.items():
            if tuple(arrays[k].shape) != t.shape:
                raise ValueError(f"{k}: shape {tuple(arrays[k].shape)} vs model {t.shape}")
        return cls(cfg, params={k: T.Tensor(np.array(v, dtype=np.float64), requires_grad=True)
                                for k, v in arrays.items()})

    @property
    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def forward(self, images):
        images = np.asarray(images.data if isinstance(images, T.Tensor) else images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        pyramid = encoder_forward(T.Tensor(images), self.cfg.encoder, self._enc)
        fused = fuse_scales(pyramid, self._dec)
        return grasp_head(fused, self._dec, self.cfg.decoder, STRIDE)

    __call__ = forward

    def predict(self, images, score_threshold: float = 0.5, iou_threshold: float = 0.25,
                per_category: bool = False, top1_fallback: bool = True) -> list:
        """Per image: decode, then NMS. Returns a list of GraspCandidate lists.

        With ``top1_fallback`` an image where no cell clears the threshold still
        yields its single best cell.
        """
        with T.no_grad():
            gmap = self.forward(images)
        out = []
        for b in range(gmap.data.shape[0]):
            cands = decode_candidates(gmap, STRIDE, score_threshold, batch_index=b)
            if not cands and top1_fallback:
                best = float(gmap.data.data[b, -1].max())
                cands = decode_candidates(gmap, STRIDE, -1.0, batch_index=b)
                cands = [c for c in cands if c.score >= 1.0 / (1.0 + np.exp(-best))][:1]
            out.append(nms_filter(cands, iou_threshold, per_category))
        return out
