"""Model assemblies and parameter grouping.

``BasicTagger`` is the baseline: one encoder, a CRF head per domain (one head
for in-domain training, two for multi-domain training). ``DisentangledTagger``
adds the second encoder, reconstruction decoder, domain predictor, and the
three MI critics. Parameter groups partition every parameter for phase
control: theta (embedder/encoders/heads), psi (decoder), theta_d (domain
predictor), phi (critics).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import torch
from torch import nn

from .corpus import Batch, LabelScheme
from .crf import CRFHead, batch_nll, batch_viterbi, tag_representation
from .disentangler import (
    DomainPredictor,
    MICritic,
    ReconstructionDecoder,
)
from .embedder import TokenEmbedder, dropout
from .encoders import SequenceEncoder


@dataclass(frozen=True)
class ModelDims:
    word_dim: int = 100
    char_dim: int = 100
    char_filters: int = 100
    char_window: int = 3
    hidden_dim: int = 100
    num_heads: int = 4
    head_dim: int = 50
    decoder_hidden: int = 200
    critic_hidden: int = 128
    dropout: float = 0.5

    @property
    def emb_dim(self) -> int:
        return self.word_dim + self.char_filters

    @property
    def latent_dim(self) -> int:
        return 2 * self.hidden_dim


@dataclass
class RunOutput:
    w: torch.Tensor          # clean token embeddings (B, L, emb_dim)
    z: torch.Tensor | None   # domain-specific latents, None for BasicTagger
    v: torch.Tensor | None   # domain-invariant latents, None for BasicTagger
    rep: torch.Tensor        # input to the CRF projection
    emissions: torch.Tensor  # (B, L, T)


class BasicTagger(nn.Module):
    """Single shared encoder with one CRF head per training domain."""

    def __init__(
        self,
        num_words: int,
        num_chars: int,
        dims: ModelDims,
        schemes: dict[str, LabelScheme],
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        self.dims = dims
        self.embedder = TokenEmbedder(
            num_words,
            num_chars,
            dims.word_dim,
            dims.char_dim,
            dims.char_filters,
            dims.char_window,
            generator=generator,
        )
        self.encoder = SequenceEncoder(
            dims.emb_dim, dims.hidden_dim, dims.num_heads, dims.head_dim, generator
        )
        self.heads = nn.ModuleDict(
            {
                key: CRFHead(dims.latent_dim, scheme.num_tags, generator)
                for key, scheme in schemes.items()
            }
        )

    def run(
        self,
        batch: Batch,
        key: str,
        *,
        training: bool = False,
        generator: torch.Generator | None = None,
    ) -> RunOutput:
        w = self.embedder(batch.word_ids, batch.char_ids)
        x = dropout(w, self.dims.dropout, generator, training)
        rep = self.encoder(x, batch.mask)
        rep = dropout(rep, self.dims.dropout, generator, training)
        return RunOutput(w=w, z=None, v=None, rep=rep, emissions=self.heads[key].emissions(rep))

    def sentence_nll(
        self,
        batch: Batch,
        key: str,
        *,
        training: bool = False,
        generator: torch.Generator | None = None,
    ) -> torch.Tensor:
        out = self.run(batch, key, training=training, generator=generator)
        return batch_nll(self.heads[key], out.emissions, batch.label_ids, batch.mask)

    def decode(self, batch: Batch, key: str) -> list[list[int]]:
        out = self.run(batch, key, training=False)
        return batch_viterbi(self.heads[key], out.emissions, batch.mask)


class DisentangledTagger(nn.Module):
    """Dual encoders over shared embeddings plus disentanglement heads."""

    def __init__(
        self,
        num_words: int,
        num_chars: int,
        dims: ModelDims,
        schemes: dict[str, LabelScheme],
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        self.dims = dims
        self.embedder = TokenEmbedder(
            num_words,
            num_chars,
            dims.word_dim,
            dims.char_dim,
            dims.char_filters,
            dims.char_window,
            generator=generator,
        )
        self.enc_z = SequenceEncoder(
            dims.emb_dim, dims.hidden_dim, dims.num_heads, dims.head_dim, generator
        )
        self.enc_v = SequenceEncoder(
            dims.emb_dim, dims.hidden_dim, dims.num_heads, dims.head_dim, generator
        )
        self.heads = nn.ModuleDict(
            {
                key: CRFHead(2 * dims.latent_dim, scheme.num_tags, generator)
                for key, scheme in schemes.items()
            }
        )
        self.decoder = ReconstructionDecoder(
            2 * dims.latent_dim, dims.decoder_hidden, dims.emb_dim, generator
        )
        self.domain_pred = DomainPredictor(dims.latent_dim, generator)
        self.critics = nn.ModuleDict(
            {
                "phi_e": MICritic(
                    dims.latent_dim, dims.latent_dim, dims.critic_hidden, generator
                ),
                "phi_z": MICritic(
                    dims.emb_dim, dims.latent_dim, dims.critic_hidden, generator
                ),
                "phi_v": MICritic(
                    dims.emb_dim, dims.latent_dim, dims.critic_hidden, generator
                ),
            }
        )

    def encode(
        self,
        batch: Batch,
        *,
        training: bool = False,
        generator: torch.Generator | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Clean embeddings plus the two latent sequences (w, z, v)."""
        w = self.embedder(batch.word_ids, batch.char_ids)
        x = dropout(w, self.dims.dropout, generator, training)
        z = self.enc_z(x, batch.mask)
        v = self.enc_v(x, batch.mask)
        return w, z, v

    def run(
        self,
        batch: Batch,
        key: str,
        *,
        training: bool = False,
        generator: torch.Generator | None = None,
    ) -> RunOutput:
        w, z, v = self.encode(batch, training=training, generator=generator)
        rep = tag_representation(z, v)
        rep_in = dropout(rep, self.dims.dropout, generator, training)
        return RunOutput(
            w=w, z=z, v=v, rep=rep, emissions=self.heads[key].emissions(rep_in)
        )

    def sentence_nll(
        self,
        batch: Batch,
        key: str,
        *,
        training: bool = False,
        generator: torch.Generator | None = None,
    ) -> torch.Tensor:
        out = self.run(batch, key, training=training, generator=generator)
        return batch_nll(self.heads[key], out.emissions, batch.label_ids, batch.mask)

    def decode(self, batch: Batch, key: str) -> list[list[int]]:
        out = self.run(batch, key, training=False)
        return batch_viterbi(self.heads[key], out.emissions, batch.mask)


_GROUP_BY_PREFIX = {
    "embedder": "theta",
    "encoder": "theta",
    "enc_z": "theta",
    "enc_v": "theta",
    "heads": "theta",
    "decoder": "psi",
    "domain_pred": "theta_d",
    "critics": "phi",
}


def parameter_groups(model: nn.Module) -> dict[str, dict[str, torch.Tensor]]:
    """Partition named parameters into theta/psi/theta_d/phi groups."""
    groups: dict[str, dict[str, torch.Tensor]] = {}
    for name, param in model.named_parameters():
        prefix = name.split(".", 1)[0]
        try:
            group = _GROUP_BY_PREFIX[prefix]
        except KeyError:
            raise ValueError(f"parameter {name!r} belongs to no known group")
        groups.setdefault(group, {})[name] = param
    return groups


def group_checksums(model: nn.Module) -> dict[str, str]:
    """SHA-256 digest of every group's parameters, for phase-isolation checks."""
    digests = {g: hashlib.sha256() for g in ("theta", "psi", "theta_d", "phi")}
    for group, params in sorted(parameter_groups(model).items()):
        for name in sorted(params):
            digests[group].update(name.encode())
            digests[group].update(
                params[name].detach().cpu().contiguous().numpy().tobytes()
            )
    return {g: h.hexdigest() for g, h in digests.items()}
