"""A minimal Adam keyed by parameter name.

Slot tensors (first/second moment, step count) are addressable by name so the
checkpoint format can serialize them next to the model tensors and restore
bit-exactly. Update rule is standard Adam with bias correction and no weight
decay.
"""
from __future__ import annotations

import torch


class Adam:
    def __init__(
        self,
        named_params: dict[str, torch.Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        self.params = dict(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.v = {k: torch.zeros_like(p) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    @torch.no_grad()
    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name].mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
            self.v[name].mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.add_(m_hat / (v_hat.sqrt() + self.eps), alpha=-self.lr)

    def state_tensors(self) -> dict[str, torch.Tensor]:
        out: dict[str, torch.Tensor] = {}
        for name in self.params:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, tensors: dict[str, torch.Tensor], step_count: int) -> None:
        for name in self.params:
            self.m[name] = tensors[f"m.{name}"].clone()
            self.v[name] = tensors[f"v.{name}"].clone()
        self.step_count = step_count


def clip_grad_norm(params: list[torch.Tensor], max_norm: float) -> float:
    """Scale gradients jointly so their global L2 norm is at most max_norm."""
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 0.0
    total = torch.sqrt(sum((g.detach() ** 2).sum() for g in grads))
    norm = float(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        with torch.no_grad():
            for g in grads:
                g.mul_(scale)
    return norm
