"""Sequence encoders: masked BiLSTM followed by multi-head self-attention.

Padded positions are inert: LSTM state carries over them unchanged, attention
never attends to them, and their output rows are zero. Each encoder instance
owns its parameters; the model builds two instances for the two latent views.
"""
from __future__ import annotations

import math

import torch
from torch import nn

from .embedder import uniform_


class MaskedBiLSTM(nn.Module):
    """Two independent LSTM passes with explicit mask handling.

    Recurrent weights are orthogonally initialized per gate block and forget
    gate biases start at 1.
    """

    def __init__(
        self,
        input_dim: int,
        hidden_dim: int,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.fwd = nn.LSTMCell(input_dim, hidden_dim)
        self.bwd = nn.LSTMCell(input_dim, hidden_dim)
        for cell in (self.fwd, self.bwd):
            self._init_cell(cell, generator)

    def _init_cell(self, cell: nn.LSTMCell, generator: torch.Generator | None) -> None:
        uniform_(cell.weight_ih, self.input_dim, generator)
        with torch.no_grad():
            for block in cell.weight_hh.chunk(4, dim=0):
                q = torch.empty_like(block)
                nn.init.orthogonal_(q, generator=generator)
                block.copy_(q)
            cell.bias_ih.zero_()
            cell.bias_hh.zero_()
            # gate order in torch is (input, forget, cell, output)
            cell.bias_ih[self.hidden_dim : 2 * self.hidden_dim] = 1.0

    def _run(
        self,
        cell: nn.LSTMCell,
        x: torch.Tensor,
        mask: torch.Tensor,
        reverse: bool,
    ) -> torch.Tensor:
        bsz, seq, _ = x.shape
        h = x.new_zeros(bsz, self.hidden_dim)
        c = x.new_zeros(bsz, self.hidden_dim)
        steps = range(seq - 1, -1, -1) if reverse else range(seq)
        out = x.new_zeros(bsz, seq, self.hidden_dim)
        for t in steps:
            step_mask = mask[:, t].unsqueeze(-1).to(x.dtype)
            h_new, c_new = cell(x[:, t], (h, c))
            h = step_mask * h_new + (1.0 - step_mask) * h
            c = step_mask * c_new + (1.0 - step_mask) * c
            out[:, t] = h * step_mask
        return out

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(B, L, D) + (B, L) mask -> (B, L, 2*hidden)."""
        fwd = self._run(self.fwd, x, mask, reverse=False)
        bwd = self._run(self.bwd, x, mask, reverse=True)
        return torch.cat([fwd, bwd], dim=-1)


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product self-attention with per-head projections.

    Heads are concatenated and mixed by an output matrix back to the input
    width; masked key positions are excluded from the softmax and masked
    query rows are zeroed.
    """

    def __init__(
        self,
        model_dim: int,
        num_heads: int,
        head_dim: int,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        self.model_dim = model_dim
        self.num_heads = num_heads
        self.head_dim = head_dim
        self.w_q = nn.Parameter(torch.empty(num_heads, model_dim, head_dim))
        self.w_k = nn.Parameter(torch.empty(num_heads, model_dim, head_dim))
        self.w_v = nn.Parameter(torch.empty(num_heads, model_dim, head_dim))
        self.w_o = nn.Parameter(torch.empty(num_heads * head_dim, model_dim))
        for w in (self.w_q, self.w_k, self.w_v):
            uniform_(w, model_dim, generator)
        uniform_(self.w_o, num_heads * head_dim, generator)

    def scores(self, h: torch.Tensor) -> torch.Tensor:
        """Pre-softmax attention scores, (B, heads, L, L)."""
        q = torch.einsum("bld,hdu->bhlu", h, self.w_q)
        k = torch.einsum("bld,hdu->bhlu", h, self.w_k)
        return q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)

    def forward(self, h: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(B, L, model_dim) + (B, L) mask -> (B, L, model_dim)."""
        if not bool(mask.any(dim=1).all()):
            raise ValueError("attention requires at least one unmasked position per row")
        # Trim columns that are padding in every row before any arithmetic.
        # Masked keys get zero weight either way, but float reductions group
        # terms by tensor width, so a wider batch would otherwise perturb
        # unmasked outputs at the last few bits.
        width = int(mask.sum(dim=1).max())
        if width < h.shape[1]:
            out = self.forward(h[:, :width], mask[:, :width])
            pad = torch.zeros(
                h.shape[0], h.shape[1] - width, out.shape[-1], dtype=out.dtype
            )
            return torch.cat([out, pad], dim=1)
        scores = self.scores(h)
        key_mask = mask[:, None, None, :]  # (B, 1, 1, L)
        scores = scores.masked_fill(~key_mask, -1e9)
        attn = torch.softmax(scores, dim=-1)
        v = torch.einsum("bld,hdu->bhlu", h, self.w_v)
        mixed = attn @ v  # (B, heads, L, u)
        mixed = mixed.transpose(1, 2).reshape(h.shape[0], h.shape[1], -1)
        out = mixed @ self.w_o
        return out * mask.unsqueeze(-1).to(out.dtype)


class SequenceEncoder(nn.Module):
    """BiLSTM context encoding refined by multi-head self-attention.

    Output width is 2*hidden_dim; the attention block is residual-free, its
    output simply replaces the BiLSTM reading as the latent sequence.
    """

    def __init__(
        self,
        input_dim: int,
        hidden_dim: int,
        num_heads: int,
        head_dim: int,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        self.lstm = MaskedBiLSTM(input_dim, hidden_dim, generator)
        self.attn = MultiHeadSelfAttention(2 * hidden_dim, num_heads, head_dim, generator)
        self.out_dim = 2 * hidden_dim

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self.attn(self.lstm(x, mask), mask)
