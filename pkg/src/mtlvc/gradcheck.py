"""Finite-difference verification of the model's analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

import torch

from .model import ModelConfig, MultitaskVCTTS, Task
from .training import loss_fn


def tiny_config(**overrides) -> ModelConfig:
    """A configuration small enough to finite-difference every weight."""
    base = dict(
        vocab_size=6,
        char_embed_dim=4,
        style_dim=3,
        encoder_dim=4,
        attention_dim=4,
        attention_rnn_dim=4,
        decoder_dim=4,
        n_mels=4,
        n_linear=5,
        reduction_factor=2,
        prenet_dims=(4, 3),
        text_cbhg_k=2,
        post_cbhg_k=2,
        cbhg_bank_channels=2,
        cbhg_proj_dim=4,
        highway_layers=1,
        post_dim=2,
        contents_hidden=3,
        style_hidden=3,
        dropout=0.0,
        max_decoder_steps=4,
    )
    base.update(overrides)
    return ModelConfig(**base)


@dataclass
class GradCheckReport:
    relative_errors: Dict[str, float]
    n_evaluations: int

    @property
    def worst(self) -> float:
        return max(self.relative_errors.values())

    def failures(self, tol: float) -> List[str]:
        return [n for n, e in self.relative_errors.items() if not e < tol]


def _relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    scale = max(float(analytic.norm()), float(numeric.norm()))
    if scale < 1e-12:
        return 0.0
    return float((analytic - numeric).norm()) / scale


def gradient_check(
    cfg: Optional[ModelConfig] = None,
    seed: int = 0,
    n_positions: int = 4,
    decoder_steps: int = 2,
    eps: float = 1e-6,
) -> GradCheckReport:
    """Compare autograd against central differences for every parameter.

    The objective sums the teacher-forced loss of one VC and one TTS batch so
    both encoders receive gradient. Parameters are redrawn from a normal
    distribution first: zero biases would put ReLU units exactly on their kink.
    """
    cfg = cfg or tiny_config()
    if cfg.dropout != 0.0:
        raise ValueError("gradient check needs dropout 0")
    gen = torch.Generator().manual_seed(seed)
    model = MultitaskVCTTS(cfg).double()
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(0.5 * torch.randn(p.shape, generator=gen, dtype=torch.float64))

    batch = 2
    t_out = decoder_steps * cfg.reduction_factor
    mel_in = torch.rand(batch, n_positions, cfg.n_mels, generator=gen, dtype=torch.float64)
    tokens = torch.randint(2, cfg.vocab_size, (batch, n_positions), generator=gen)
    lengths = torch.tensor([n_positions, n_positions - 1])
    ref = torch.rand(batch, 3, cfg.n_mels, generator=gen, dtype=torch.float64)
    ref_lengths = torch.tensor([3, 2])
    m_gt = torch.rand(batch, t_out, cfg.n_mels, generator=gen, dtype=torch.float64)
    l_gt = torch.rand(batch, t_out, cfg.n_linear, generator=gen, dtype=torch.float64)

    def objective() -> torch.Tensor:
        total = torch.zeros((), dtype=torch.float64)
        for task, ling in ((Task.VC, mel_in), (Task.TTS, tokens)):
            out = model(task, ling, lengths, ref, ref_lengths, target_mel=m_gt)
            total = total + loss_fn(out.mel, out.linear, m_gt, l_gt)
        return total

    model.zero_grad()
    objective().backward()
    errors: Dict[str, float] = {}
    n_eval = 0
    with torch.no_grad():
        for name, p in model.named_parameters():
            analytic = p.grad.detach().clone()
            numeric = torch.zeros_like(p)
            flat, num_flat = p.view(-1), numeric.view(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + eps
                up = float(objective())
                flat[i] = orig - eps
                down = float(objective())
                flat[i] = orig
                num_flat[i] = (up - down) / (2 * eps)
                n_eval += 2
            errors[name] = _relative_error(analytic, numeric)
    return GradCheckReport(errors, n_eval)
