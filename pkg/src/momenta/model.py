"""Hierarchical attention fusion network with harm and target heads.

Per meme the network

1. pools the variable-length proposal (n x 4096) and attribute (m x 768) sets with
   a content-based self-attention scorer,
2. projects each pooled vector to 512-d and mixes it with the matching global
   embedding using a learnable 2-weight combination (image side, text side),
3. scores the two modality streams with a small dense network, softmaxes the
   scores into ``(a_v, a_t)`` and combines ``(1 + a_v) * image`` and
   ``(1 + a_t) * text`` with another learnable 2-weight mix,
4. feeds the 512-d meme representation to two affine heads.

The ablation variants skip stage 2 on one or both sides, or replace stage 3 by
concatenation followed by a 1024 -> 512 dense layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoders import ATTRIBUTE_DIM, GLOBAL_DIM, PROPOSAL_DIM, EmbeddingBundle
from .types import NUM_TARGET_CLASSES

VARIANTS = ("full", "clip_only", "clip_proposals", "clip_attributes", "no_cmaf")
INIT_STD = 0.02
_MASK_FILL = -1e9


class VariantMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    c_harm: int = 3
    hidden: int = 128
    variant: str = "full"

    def __post_init__(self) -> None:
        if self.c_harm not in (2, 3):
            raise ValueError(f"c_harm must be 2 or 3, got {self.c_harm}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.hidden <= 0:
            raise ValueError("hidden width must be positive")


@dataclass
class Batch:
    """Padded inputs. Masks are True on real rows."""

    f_image: torch.Tensor  # (B, 512)
    f_text: torch.Tensor  # (B, 512)
    proposals: torch.Tensor  # (B, N, 4096)
    proposal_mask: torch.Tensor  # (B, N) bool
    attributes: torch.Tensor  # (B, M, 768)
    attribute_mask: torch.Tensor  # (B, M) bool

    def __len__(self) -> int:
        return self.f_image.shape[0]

    def select(self, index: torch.Tensor) -> "Batch":
        return Batch(*(t[index] for t in (
            self.f_image, self.f_text, self.proposals, self.proposal_mask, self.attributes, self.attribute_mask
        )))

    def to(self, dtype: torch.dtype) -> "Batch":
        return Batch(
            self.f_image.to(dtype), self.f_text.to(dtype), self.proposals.to(dtype), self.proposal_mask,
            self.attributes.to(dtype), self.attribute_mask,
        )


def collate(bundles: Sequence[EmbeddingBundle], dtype: torch.dtype = torch.float32) -> Batch:
    b = len(bundles)
    n = max([x.n_proposals for x in bundles] + [0])
    m = max([x.n_attributes for x in bundles] + [0])
    proposals = np.zeros((b, n, PROPOSAL_DIM), dtype=np.float32)
    attributes = np.zeros((b, m, ATTRIBUTE_DIM), dtype=np.float32)
    pmask = np.zeros((b, n), dtype=bool)
    amask = np.zeros((b, m), dtype=bool)
    for i, x in enumerate(bundles):
        proposals[i, : x.n_proposals] = x.proposals
        attributes[i, : x.n_attributes] = x.attributes
        pmask[i, : x.n_proposals] = True
        amask[i, : x.n_attributes] = True
    return Batch(
        torch.from_numpy(np.stack([x.f_image for x in bundles])).to(dtype),
        torch.from_numpy(np.stack([x.f_text for x in bundles])).to(dtype),
        torch.from_numpy(proposals).to(dtype),
        torch.from_numpy(pmask),
        torch.from_numpy(attributes).to(dtype),
        torch.from_numpy(amask),
    )


def self_attend(rows: torch.Tensor, scorer: torch.Tensor, mask: Optional[torch.Tensor] = None):
    """Softmax-weighted pooling of ``rows`` (..., k, d) by ``rows @ scorer``.

    Returns ``(pooled, weights)``. Masked-out rows get weight exactly zero; a set
    with no real rows pools to the zero vector.
    """
    if rows.shape[-1] != scorer.shape[-1]:
        raise ValueError(f"row dim {rows.shape[-1]} does not match scorer dim {scorer.shape[-1]}")
    if rows.shape[-2] == 0:
        return rows.new_zeros(rows.shape[:-2] + rows.shape[-1:]), rows.new_zeros(rows.shape[:-1])
    scores = rows @ scorer
    if mask is not None:
        scores = scores.masked_fill(~mask, _MASK_FILL)
    weights = torch.softmax(scores, dim=-1)
    if mask is not None:
        weights = weights * mask.to(weights.dtype)
    pooled = (weights.unsqueeze(-1) * rows).sum(dim=-2)
    return pooled, weights


def fuse_intra(global_vec: torch.Tensor, local_pooled: torch.Tensor, proj: nn.Linear, mix: torch.Tensor) -> torch.Tensor:
    """``mix[0] * global + mix[1] * proj(local)``."""
    projected = proj(local_pooled)
    if projected.shape[-1] != global_vec.shape[-1]:
        raise ValueError(f"projection gives {projected.shape[-1]} dims, global vector has {global_vec.shape[-1]}")
    return mix[0] * global_vec + mix[1] * projected


def cmaf(f_i_res: torch.Tensor, f_t_res: torch.Tensor, hidden: nn.Linear, out: nn.Linear, mix: torch.Tensor):
    """Cross-modality attention fusion. Returns ``(f_meme, a_v, a_t)``."""
    scores = torch.softmax(out(F.softplus(hidden(torch.cat([f_i_res, f_t_res], dim=-1)))), dim=-1)
    a_v, a_t = scores[..., 0], scores[..., 1]
    visual = (1.0 + a_v).unsqueeze(-1) * f_i_res
    textual = (1.0 + a_t).unsqueeze(-1) * f_t_res
    return mix[0] * visual + mix[1] * textual, a_v, a_t


@dataclass
class ForwardTrace:
    h_att: torch.Tensor
    g_att: torch.Tensor
    f_i_res: torch.Tensor
    f_t_res: torch.Tensor
    a_v: Optional[torch.Tensor]
    a_t: Optional[torch.Tensor]
    f_meme: torch.Tensor
    logits_harm: torch.Tensor
    logits_target: torch.Tensor
    proposal_weights: torch.Tensor
    attribute_weights: torch.Tensor


class MomentaNet(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig()) -> None:
        super().__init__()
        self.config = config
        self.scorer_H = nn.Parameter(torch.zeros(PROPOSAL_DIM))
        self.scorer_G = nn.Parameter(torch.zeros(ATTRIBUTE_DIM))
        self.proj_H = nn.Linear(PROPOSAL_DIM, GLOBAL_DIM)
        self.proj_G = nn.Linear(ATTRIBUTE_DIM, GLOBAL_DIM)
        self.mix_I = nn.Parameter(torch.zeros(2))
        self.mix_T = nn.Parameter(torch.zeros(2))
        self.cmaf_hidden = nn.Linear(2 * GLOBAL_DIM, config.hidden)
        self.cmaf_out = nn.Linear(config.hidden, 2)
        self.mix_F = nn.Parameter(torch.zeros(2))
        self.head_harm = nn.Linear(GLOBAL_DIM, config.c_harm)
        self.head_target = nn.Linear(GLOBAL_DIM, NUM_TARGET_CLASSES)
        if config.variant == "no_cmaf":
            self.concat_proj = nn.Linear(2 * GLOBAL_DIM, GLOBAL_DIM)

    @property
    def variant(self) -> str:
        return self.config.variant

    def forward(self, batch: Batch, variant: Optional[str] = None) -> ForwardTrace:
        variant = variant or self.variant
        if variant not in VARIANTS:
            raise VariantMismatchError(f"unknown variant {variant!r}")
        if (variant == "no_cmaf") != hasattr(self, "concat_proj"):
            raise VariantMismatchError(f"parameters built for {self.variant!r} cannot run {variant!r}")

        h_att, w_h = self_attend(batch.proposals, self.scorer_H, batch.proposal_mask)
        g_att, w_g = self_attend(batch.attributes, self.scorer_G, batch.attribute_mask)

        use_props = variant in ("full", "clip_proposals", "no_cmaf")
        use_attrs = variant in ("full", "clip_attributes", "no_cmaf")
        f_i = fuse_intra(batch.f_image, h_att, self.proj_H, self.mix_I) if use_props else batch.f_image
        f_t = fuse_intra(batch.f_text, g_att, self.proj_G, self.mix_T) if use_attrs else batch.f_text

        if variant == "no_cmaf":
            f_meme = self.concat_proj(torch.cat([f_i, f_t], dim=-1))
            a_v = a_t = None
        else:
            f_meme, a_v, a_t = cmaf(f_i, f_t, self.cmaf_hidden, self.cmaf_out, self.mix_F)

        return ForwardTrace(
            h_att=h_att, g_att=g_att, f_i_res=f_i, f_t_res=f_t, a_v=a_v, a_t=a_t, f_meme=f_meme,
            logits_harm=self.head_harm(f_meme), logits_target=self.head_target(f_meme),
            proposal_weights=w_h, attribute_weights=w_g,
        )

    def parameter_groups(self) -> dict[str, list[str]]:
        """Parameter names grouped by the component that owns them."""
        groups: dict[str, list[str]] = {}
        for name, _ in self.named_parameters():
            groups.setdefault(name.split(".")[0], []).append(name)
        return groups


def init_params(seed: int, config: ModelConfig = ModelConfig(), dtype: torch.dtype = torch.float32) -> MomentaNet:
    """Weights ~ N(0, 0.02^2) from a generator seeded with ``seed``; biases zero."""
    model = MomentaNet(config)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith(".bias"):
                p.zero_()
            else:
                p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64) * INIT_STD)
    return model.to(dtype)


def predict_trace(model: MomentaNet, bundle: EmbeddingBundle) -> dict:
    """Single-meme explanation surface as plain numpy arrays."""
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        tr = model(collate([bundle], dtype))
    out = {
        "a_v": None if tr.a_v is None else float(tr.a_v[0]),
        "a_t": None if tr.a_t is None else float(tr.a_t[0]),
        "proposal_weights": tr.proposal_weights[0, : bundle.n_proposals].numpy(),
        "attribute_weights": tr.attribute_weights[0, : bundle.n_attributes].numpy(),
        "logits_harm": tr.logits_harm[0].numpy(),
        "logits_target": tr.logits_target[0].numpy(),
    }
    return out


# --- checkpoints --------------------------------------------------------------


def save_checkpoint(model: MomentaNet, path: Union[str, Path], seed: Optional[int] = None) -> Path:
    """Tensors go to ``path`` (record container), metadata to ``<path>.meta.json``."""
    import json

    from .container import RecordFile

    path = Path(path)
    if path.exists():
        path.unlink()
    rf = RecordFile(path, "a")
    for name, tensor in model.state_dict().items():
        rf.put(name, {"value": tensor.detach().cpu().numpy()})
    meta = {
        "format": "momenta-checkpoint",
        "variant": model.config.variant,
        "c_harm": model.config.c_harm,
        "hidden": model.config.hidden,
        "seed": seed,
        "tensors": list(model.state_dict()),
    }
    meta_path = path.with_name(path.name + ".meta.json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return meta_path


def load_checkpoint(path: Union[str, Path]) -> MomentaNet:
    import json

    from .container import RecordFile

    path = Path(path)
    meta_path = path.with_name(path.name + ".meta.json")
    if not path.exists() or not meta_path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    model = MomentaNet(ModelConfig(c_harm=meta["c_harm"], hidden=meta["hidden"], variant=meta["variant"]))
    rf = RecordFile(path, "r")
    state = {}
    for name in meta["tensors"]:
        stored = rf.get(name)
        if stored is None:
            raise KeyError(f"checkpoint {path} lacks tensor {name!r}")
        state[name] = torch.from_numpy(stored.tensors["value"])
    model.load_state_dict(state)
    return model
