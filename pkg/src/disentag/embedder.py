"""Token representation: word embeddings concatenated with char-CNN features.

The char CNN pads symmetrically with PAD, slides width-w windows centered on
real characters only, and max-pools over positions, so appending PAD chars to
a token never changes its feature vector.
"""
from __future__ import annotations

import math
from typing import IO, Iterable, Sequence

import torch
from torch import nn

from .corpus import FormatError, PAD_ID, Vocabulary, normalize_word


def uniform_(tensor: torch.Tensor, fan_in: int, generator: torch.Generator | None = None) -> torch.Tensor:
    bound = math.sqrt(3.0 / fan_in)
    with torch.no_grad():
        return tensor.uniform_(-bound, bound, generator=generator)


def dropout(
    x: torch.Tensor,
    rate: float,
    generator: torch.Generator | None,
    training: bool,
) -> torch.Tensor:
    """Inverted dropout drawing its mask from an explicit generator."""
    if not training or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    keep = (
        torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device)
        >= rate
    ).to(x.dtype)
    return x * keep / (1.0 - rate)


class CharCNN(nn.Module):
    """Width-w convolution over char embeddings with masked max pooling."""

    def __init__(
        self,
        num_chars: int,
        char_dim: int,
        num_filters: int,
        window: int = 3,
        activation: str = "relu",
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        if window < 1 or window % 2 == 0:
            raise ValueError("window must be a positive odd width")
        if activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        self.char_dim = char_dim
        self.num_filters = num_filters
        self.window = window
        self.activation = activation
        self.emb = nn.Embedding(num_chars, char_dim, padding_idx=PAD_ID)
        self.weight = nn.Parameter(torch.empty(window * char_dim, num_filters))
        self.bias = nn.Parameter(torch.zeros(num_filters))
        uniform_(self.emb.weight, char_dim, generator)
        with torch.no_grad():
            self.emb.weight[PAD_ID].zero_()
        uniform_(self.weight, window * char_dim, generator)

    def forward(self, char_ids: torch.Tensor) -> torch.Tensor:
        """char_ids (B, L, J) -> features (B, L, num_filters).

        Tokens with no real characters (all PAD) get a zero feature vector.
        """
        bsz, seq, jmax = char_ids.shape
        valid = char_ids != PAD_ID
        x = self.emb(char_ids)  # (B, L, J, C)
        half = (self.window - 1) // 2
        if half:
            pad = x.new_zeros(bsz, seq, half, self.char_dim)
            x = torch.cat([pad, x, pad], dim=2)
        windows = torch.cat(
            [x[:, :, off : off + jmax, :] for off in range(self.window)], dim=-1
        )  # (B, L, J, w*C)
        resp = windows @ self.weight + self.bias  # (B, L, J, F)
        if self.activation == "relu":
            resp = torch.relu(resp)
        resp = resp.masked_fill(~valid.unsqueeze(-1), float("-inf"))
        pooled = resp.max(dim=2).values
        return torch.where(
            valid.any(dim=2, keepdim=True), pooled, torch.zeros_like(pooled)
        )


def char_feature(cnn: CharCNN, char_ids: Sequence[int]) -> torch.Tensor:
    """Feature vector for a single token's character ids."""
    if len(char_ids) == 0:
        return torch.zeros(cnn.num_filters)
    grid = torch.tensor(char_ids, dtype=torch.long).view(1, 1, -1)
    return cnn(grid)[0, 0]


class TokenEmbedder(nn.Module):
    """Concatenation of word embedding and char-CNN feature per token."""

    def __init__(
        self,
        num_words: int,
        num_chars: int,
        word_dim: int,
        char_dim: int,
        num_filters: int,
        window: int = 3,
        activation: str = "relu",
        generator: torch.Generator | None = None,
        pretrained: torch.Tensor | None = None,
    ) -> None:
        super().__init__()
        self.word_emb = nn.Embedding(num_words, word_dim, padding_idx=PAD_ID)
        if pretrained is not None:
            if tuple(pretrained.shape) != (num_words, word_dim):
                raise FormatError(
                    f"pretrained matrix shape {tuple(pretrained.shape)} does not "
                    f"match ({num_words}, {word_dim})"
                )
            with torch.no_grad():
                self.word_emb.weight.copy_(pretrained)
        else:
            uniform_(self.word_emb.weight, word_dim, generator)
        with torch.no_grad():
            self.word_emb.weight[PAD_ID].zero_()
        self.char_cnn = CharCNN(
            num_chars, char_dim, num_filters, window, activation, generator
        )
        self.out_dim = word_dim + num_filters

    def forward(self, word_ids: torch.Tensor, char_ids: torch.Tensor) -> torch.Tensor:
        """(B, L) word ids + (B, L, J) char ids -> (B, L, word_dim+filters)."""
        return torch.cat([self.word_emb(word_ids), self.char_cnn(char_ids)], dim=-1)


def load_pretrained(
    stream: IO[str] | Iterable[str],
    vocab: Vocabulary,
    word_dim: int,
    seed: int = 0,
) -> torch.Tensor:
    """Build a (num_words, word_dim) matrix from a text embedding file.

    Each line is ``word v1 v2 ...``. File words are normalized before lookup
    and the first occurrence wins; vocabulary words missing from the file get
    uniform random rows. The PAD row is zero.
    """
    gen = torch.Generator().manual_seed(seed)
    matrix = torch.empty(vocab.num_words, word_dim)
    uniform_(matrix, word_dim, gen)
    matrix[PAD_ID].zero_()
    seen: set[int] = set()
    for raw in stream:
        parts = raw.rstrip("\n").split()
        if not parts:
            continue
        if len(parts) != word_dim + 1:
            raise FormatError(
                f"embedding row for {parts[0]!r} has {len(parts) - 1} values, "
                f"expected {word_dim}"
            )
        wid = vocab.word_map.get(normalize_word(parts[0]))
        if wid is None or wid in seen or wid == PAD_ID:
            continue
        seen.add(wid)
        matrix[wid] = torch.tensor([float(v) for v in parts[1:]])
    return matrix
