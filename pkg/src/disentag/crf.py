"""Linear-chain CRF scoring, partition, NLL, and Viterbi decoding.

Transitions live in a (T+2, T+2) table with virtual START=T and STOP=T+1.
Only entries reachable by a real path are ever read: START->tag, tag->tag,
and tag->STOP. The remaining entries are reported as -inf by ``transition``
but stay finite in the underlying parameter so optimizers see no infinities.

Per-sentence functions operate on (L, T) emission matrices; batched variants
accept (B, L, T) plus a mask and must agree with the per-sentence ones.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from torch import nn

from .embedder import uniform_


class CRFHead(nn.Module):
    """Emission projection plus transition table for one tag inventory."""

    def __init__(
        self,
        rep_dim: int,
        num_tags: int,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        if num_tags < 1:
            raise ValueError("need at least one tag")
        self.num_tags = num_tags
        self.start = num_tags
        self.stop = num_tags + 1
        self.proj = nn.Linear(rep_dim, num_tags)
        uniform_(self.proj.weight, rep_dim, generator)
        with torch.no_grad():
            self.proj.bias.zero_()
        self.trans = nn.Parameter(torch.zeros(num_tags + 2, num_tags + 2))

    def emissions(self, rep: torch.Tensor) -> torch.Tensor:
        """(..., rep_dim) -> (..., num_tags) emission scores."""
        return self.proj(rep)

    def transition(self, prev: int, nxt: int) -> float:
        """Transition score with forbidden moves reported as -inf."""
        T = self.num_tags
        ok = (prev == self.start and nxt < T) or (
            prev < T and (nxt < T or nxt == self.stop)
        )
        if not ok:
            return float("-inf")
        return float(self.trans[prev, nxt].detach())


def path_score(head: CRFHead, emissions: torch.Tensor, path: Sequence[int]) -> torch.Tensor:
    """Score of one tag path: START transition + emissions + transitions + STOP."""
    L, T = emissions.shape
    if len(path) != L:
        raise ValueError("path length must match emissions")
    if any(not 0 <= p < T for p in path):
        raise ValueError("tag id out of range")
    total = head.trans[head.start, path[0]] + emissions[0, path[0]]
    for i in range(1, L):
        total = total + head.trans[path[i - 1], path[i]] + emissions[i, path[i]]
    return total + head.trans[path[L - 1], head.stop]


def log_partition(head: CRFHead, emissions: torch.Tensor) -> torch.Tensor:
    """Log of the sum of exp path scores over all T^L paths (forward pass)."""
    L, T = emissions.shape
    alpha = head.trans[head.start, :T] + emissions[0]
    for i in range(1, L):
        alpha = torch.logsumexp(
            alpha.unsqueeze(1) + head.trans[:T, :T], dim=0
        ) + emissions[i]
    return torch.logsumexp(alpha + head.trans[:T, head.stop], dim=0)


def crf_nll(head: CRFHead, emissions: torch.Tensor, gold: Sequence[int]) -> torch.Tensor:
    """Negative log-likelihood of the gold path; always >= 0."""
    return log_partition(head, emissions) - path_score(head, emissions, gold)


def viterbi(head: CRFHead, emissions: torch.Tensor) -> list[int]:
    """Highest-scoring path; score ties prefer the lowest tag id.

    Runs in float64 numpy. Backpointers use argmax's first-maximum rule and
    ties are resolved right to left during backtracking.
    """
    with torch.no_grad():
        em = emissions.detach().cpu().double().numpy()
        L, T = em.shape
        trans = head.trans.detach().cpu().double().numpy()
    score = trans[head.start, :T] + em[0]
    pointers = np.zeros((L, T), dtype=np.int64)
    for i in range(1, L):
        cand = score[:, None] + trans[:T, :T]  # (prev, next)
        pointers[i] = np.argmax(cand, axis=0)
        score = cand[pointers[i], np.arange(T)] + em[i]
    final = score + trans[:T, head.stop]
    best = int(np.argmax(final))
    path = [best]
    for i in range(L - 1, 0, -1):
        best = int(pointers[i, best])
        path.append(best)
    path.reverse()
    return path


def batch_path_score(
    head: CRFHead, emissions: torch.Tensor, labels: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """(B, L, T), (B, L), (B, L) -> per-sentence path scores (B,)."""
    B, L, T = emissions.shape
    fmask = mask.to(emissions.dtype)
    em = emissions.gather(2, labels.clamp(max=T - 1).unsqueeze(-1)).squeeze(-1)
    total = (em * fmask).sum(dim=1)
    total = total + head.trans[head.start, :T][labels[:, 0]]
    if L > 1:
        steps = head.trans[:T, :T][labels[:, :-1], labels[:, 1:]]  # (B, L-1)
        total = total + (steps * fmask[:, 1:]).sum(dim=1)
    last = (mask.sum(dim=1) - 1).clamp(min=0)
    last_labels = labels.gather(1, last.unsqueeze(-1)).squeeze(-1)
    return total + head.trans[:T, head.stop][last_labels]


def batch_log_partition(
    head: CRFHead, emissions: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """(B, L, T), (B, L) -> per-sentence log partition values (B,)."""
    B, L, T = emissions.shape
    alpha = head.trans[head.start, :T].unsqueeze(0) + emissions[:, 0]
    for i in range(1, L):
        new = torch.logsumexp(
            alpha.unsqueeze(2) + head.trans[:T, :T].unsqueeze(0), dim=1
        ) + emissions[:, i]
        keep = mask[:, i].unsqueeze(-1)
        alpha = torch.where(keep, new, alpha)
    return torch.logsumexp(alpha + head.trans[:T, head.stop].unsqueeze(0), dim=1)


def batch_nll(
    head: CRFHead, emissions: torch.Tensor, labels: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """Per-sentence NLL vector (B,)."""
    return batch_log_partition(head, emissions, mask) - batch_path_score(
        head, emissions, labels, mask
    )


def batch_viterbi(
    head: CRFHead, emissions: torch.Tensor, mask: torch.Tensor
) -> list[list[int]]:
    lengths = mask.sum(dim=1).tolist()
    return [
        viterbi(head, emissions[b, : lengths[b]]) for b in range(emissions.shape[0])
    ]


def tag_representation(z: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Per-token input to the CRF heads: concatenation of both latents."""
    return torch.cat([z, v], dim=-1)


def joint_tagging_loss(model, source_batch, target_batch) -> torch.Tensor:
    """Mean source NLL plus mean target NLL through the model's two heads."""
    src = model.sentence_nll(source_batch, "source").mean()
    tgt = model.sentence_nll(target_batch, "target").mean()
    return src + tgt
