"""Disentanglement machinery: reconstruction decoder, domain predictor, and
neural mutual-information estimators.

The MI estimator is the Donsker-Varadhan lower bound
``E_joint[T] - log(E_marginal[exp(T)])`` with a small MLP critic per pair.
Critic updates maximize the bound with an EMA-corrected gradient for the
log-denominator term; the encoder-phase regularizer uses the plain bound
value with critic parameters frozen.
"""
from __future__ import annotations

import math
import random
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import torch
from torch import nn

from .embedder import uniform_

EMA_DECAY = 0.99
PROB_FLOOR = 1e-12


class ReconstructionDecoder(nn.Module):
    """Two stacked affine maps (tanh between) from z||v back to the embedding."""

    def __init__(
        self,
        latent_dim: int,
        hidden_dim: int,
        out_dim: int,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        self.inner = nn.Linear(latent_dim, hidden_dim)
        self.outer = nn.Linear(hidden_dim, out_dim)
        uniform_(self.inner.weight, latent_dim, generator)
        uniform_(self.outer.weight, hidden_dim, generator)
        with torch.no_grad():
            self.inner.bias.zero_()
            self.outer.bias.zero_()

    def forward(self, z: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        return self.outer(torch.tanh(self.inner(torch.cat([z, v], dim=-1))))


def reconstruction_loss(
    pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """Mean squared error per token feature, averaged over unmasked tokens.

    Reduces over the selected real tokens rather than a mask-weighted grid:
    the selected elements are the same tensor whatever the padded width, so
    extra padding columns cannot nudge the sum through reduction order.
    """
    per_token = ((pred - target) ** 2).mean(dim=-1)
    real = per_token[mask]
    if real.numel() == 0:
        return per_token.sum() * 0.0
    return real.mean()


class DomainPredictor(nn.Module):
    """Max-pool the z sequence over real tokens, then affine to 2 domains."""

    def __init__(self, z_dim: int, generator: torch.Generator | None = None) -> None:
        super().__init__()
        self.proj = nn.Linear(z_dim, 2)
        uniform_(self.proj.weight, z_dim, generator)
        with torch.no_grad():
            self.proj.bias.zero_()

    def pooled(self, z: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if not bool(mask.any(dim=1).all()):
            raise ValueError("domain pooling needs one real token per sentence")
        filled = z.masked_fill(~mask.unsqueeze(-1), float("-inf"))
        return filled.max(dim=1).values

    def forward(self, z: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(B, L, z_dim) + mask -> (B, 2) probability rows."""
        return torch.softmax(self.proj(self.pooled(z, mask)), dim=-1)


def domain_loss(probs: torch.Tensor, domain_ids: torch.Tensor) -> torch.Tensor:
    """Cross entropy -log p(true domain), with probabilities floored."""
    picked = probs.gather(1, domain_ids.view(-1, 1)).squeeze(1)
    return -torch.log(picked.clamp(min=PROB_FLOOR)).mean()


class MICritic(nn.Module):
    """Scalar scoring MLP over concatenated sample pairs.

    The raw MLP output is soft-clamped through a scaled tanh: any bounded
    function is a valid DV witness, and the bound keeps the encoder phase
    from inflating the estimate without limit when it plays against frozen
    critic weights. The clamp scale caps representable MI near 2 *
    SCORE_SCALE nats, far above anything measured here.

    Holds the log-domain EMA of the marginal denominator used to correct the
    gradient during training; the buffer travels with checkpoints.
    """

    SCORE_SCALE = 8.0

    def __init__(
        self,
        a_dim: int,
        b_dim: int,
        hidden_dim: int,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        self.a_dim = a_dim
        self.b_dim = b_dim
        self.inner = nn.Linear(a_dim + b_dim, hidden_dim)
        self.outer = nn.Linear(hidden_dim, 1)
        uniform_(self.inner.weight, a_dim + b_dim, generator)
        uniform_(self.outer.weight, hidden_dim, generator)
        with torch.no_grad():
            self.inner.bias.zero_()
            self.outer.bias.zero_()
        self.register_buffer("log_ema", torch.tensor(0.0))
        self.register_buffer("ema_set", torch.tensor(False))

    def score(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        """(N, a_dim), (N, b_dim) -> (N,) soft-clamped critic scores."""
        if a.shape[0] != b.shape[0]:
            raise ValueError("paired samples must align")
        raw = self.outer(torch.relu(self.inner(torch.cat([a, b], dim=-1)))).squeeze(-1)
        return self.SCORE_SCALE * torch.tanh(raw / self.SCORE_SCALE)


@dataclass(frozen=True)
class MIEstimate:
    """DV bound report: value == joint_mean - log_marginal_mean."""

    value: float
    joint_mean: float
    log_marginal_mean: float


def shuffle_marginals(
    a: torch.Tensor, b: torch.Tensor, seed: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Break pairing by permuting b, preferring derangements.

    Re-shuffles up to 16 times looking for a fixed-point-free permutation and
    accepts the last attempt otherwise, so the result is a pure function of
    the seed.
    """
    n = b.shape[0]
    rng = random.Random(seed)
    perm = list(range(n))
    for _ in range(16):
        rng.shuffle(perm)
        if all(perm[i] != i for i in range(n)):
            break
    return a, b[torch.tensor(perm, dtype=torch.long, device=b.device)]


def _dv_terms(
    critic: MICritic,
    joint: tuple[torch.Tensor, torch.Tensor],
    marginal: tuple[torch.Tensor, torch.Tensor],
) -> tuple[torch.Tensor, torch.Tensor]:
    """(mean critic score on joint pairs, log mean exp score on marginal pairs).

    Reductions run in float64 so a constant critic cancels to zero at machine
    precision; single-precision means leave ~1e-7 residue otherwise.
    """
    t_joint = critic.score(*joint).double()
    t_marg = critic.score(*marginal).double()
    joint_mean = t_joint.mean()
    log_marg_mean = torch.logsumexp(t_marg, dim=0) - math.log(t_marg.shape[0])
    return joint_mean, log_marg_mean


def mi_lower_bound(
    critic: MICritic,
    joint: tuple[torch.Tensor, torch.Tensor],
    marginal: tuple[torch.Tensor, torch.Tensor],
) -> MIEstimate:
    """Evaluate the DV bound without touching gradients or EMA state."""
    with torch.no_grad():
        joint_mean, log_marg_mean = _dv_terms(critic, joint, marginal)
    return MIEstimate(
        value=float(joint_mean - log_marg_mean),
        joint_mean=float(joint_mean),
        log_marginal_mean=float(log_marg_mean),
    )


def critic_training_loss(
    critic: MICritic,
    joint: tuple[torch.Tensor, torch.Tensor],
    marginal: tuple[torch.Tensor, torch.Tensor],
) -> tuple[torch.Tensor, MIEstimate]:
    """Loss whose descent ascends the bound, plus the uncorrected estimate.

    The denominator gradient is rescaled by batch/EMA so its expectation
    matches the true bound gradient; the EMA buffer is updated first (the
    first batch initializes it).
    """
    joint_mean, log_marg_mean = _dv_terms(critic, joint, marginal)
    with torch.no_grad():
        if bool(critic.ema_set):
            critic.log_ema.copy_(
                torch.logaddexp(
                    critic.log_ema + math.log(EMA_DECAY),
                    log_marg_mean.detach() + math.log(1.0 - EMA_DECAY),
                )
            )
        else:
            critic.log_ema.copy_(log_marg_mean.detach())
            critic.ema_set.fill_(True)
    correction = torch.exp(log_marg_mean - critic.log_ema.detach())
    loss = -(joint_mean - correction)
    estimate = MIEstimate(
        value=float((joint_mean - log_marg_mean).detach()),
        joint_mean=float(joint_mean.detach()),
        log_marginal_mean=float(log_marg_mean.detach()),
    )
    return loss, estimate


@dataclass(frozen=True)
class TokenSamples:
    """One critic-step minibatch of aligned per-token latents."""

    w: torch.Tensor
    z: torch.Tensor
    v: torch.Tensor
    seed: int


def critic_pairs(
    critics: dict[str, MICritic], samples: TokenSamples
) -> dict[str, tuple[tuple[torch.Tensor, torch.Tensor], tuple[torch.Tensor, torch.Tensor]]]:
    """Joint and shuffled-marginal pairs for each of the three critics."""
    w, z, v = samples.w.detach(), samples.z.detach(), samples.v.detach()
    out = {}
    if "phi_e" in critics:
        out["phi_e"] = ((z, v), shuffle_marginals(z, v, samples.seed))
    if "phi_z" in critics:
        out["phi_z"] = ((w, z), shuffle_marginals(w, z, samples.seed + 1))
    if "phi_v" in critics:
        out["phi_v"] = ((w, v), shuffle_marginals(w, v, samples.seed + 2))
    return out


def train_critics(
    critics: dict[str, MICritic],
    sample_stream: Iterable[TokenSamples],
    optimizer,
    hook: Callable[[int, dict[str, MIEstimate]], None] | None = None,
) -> dict[str, MIEstimate]:
    """Run one critic phase: every critic independently maximizes its bound.

    ``optimizer`` covers exactly the critic parameters; inputs are detached,
    so nothing else can receive gradient. Returns the last step's estimates.
    """
    last: dict[str, MIEstimate] = {}
    for step, samples in enumerate(sample_stream):
        pairs = critic_pairs(critics, samples)
        total = None
        for name, (joint, marginal) in pairs.items():
            loss, est = critic_training_loss(critics[name], joint, marginal)
            total = loss if total is None else total + loss
            last[name] = est
        optimizer.zero_grad()
        total.backward()
        optimizer.step()
        if hook is not None:
            hook(step, dict(last))
    return last


@contextmanager
def frozen(*modules: nn.Module) -> Iterator[None]:
    saved = []
    for m in modules:
        for p in m.parameters():
            saved.append((p, p.requires_grad))
            p.requires_grad_(False)
    try:
        yield
    finally:
        for p, state in saved:
            p.requires_grad_(state)


def encoder_mi_regularizer(
    critics: dict[str, MICritic],
    w: torch.Tensor,
    z: torch.Tensor,
    v: torch.Tensor,
    seed: int,
) -> torch.Tensor:
    """I(z,v) - I(w,z) - I(w,v) under frozen critics, as a tensor.

    Gradients flow only into the latent inputs; minimizing this pushes z and
    v apart while keeping both informative about the token embedding.
    """
    with frozen(*critics.values()):
        je, me = _dv_terms(critics["phi_e"], (z, v), shuffle_marginals(z, v, seed))
        jz, mz = _dv_terms(critics["phi_z"], (w, z), shuffle_marginals(w, z, seed + 1))
        jv, mv = _dv_terms(critics["phi_v"], (w, v), shuffle_marginals(w, v, seed + 2))
        return (je - me) - (jz - mz) - (jv - mv)
