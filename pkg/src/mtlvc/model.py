"""Shared-decoder seq2seq network for voice conversion and text-to-speech.

A text encoder (embedding, prenet, CBHG) and a contents encoder (2-layer
bidirectional LSTM over mel frames) map their inputs into the same
linguistic space; exactly one of them feeds the attention decoder for any
batch. A style encoder turns a reference mel into a fixed-size vector that is
concatenated to the inputs of both the attention RNN and the decoder RNN at
every step. The decoder emits ``r`` mel frames per step and a CBHG
post-processor maps the mel sequence to a linear spectrogram.

Tensors are batch-first: ``(B, T, F)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import BothPresent, NeitherPresent


class Task(str, enum.Enum):
    VC = "vc"
    TTS = "tts"


@dataclass
class ModelConfig:
    vocab_size: int = 32
    char_embed_dim: int = 256
    style_dim: int = 32
    encoder_dim: int = 256
    attention_dim: int = 256
    attention_rnn_dim: int = 256
    decoder_dim: int = 256
    n_mels: int = 80
    n_linear: int = 1025
    reduction_factor: int = 5
    prenet_dims: Tuple[int, ...] = (256, 128)
    text_cbhg_k: int = 16
    post_cbhg_k: int = 8
    cbhg_bank_channels: int = 128
    cbhg_proj_dim: int = 256
    highway_layers: int = 4
    post_dim: int = 128
    contents_hidden: int = 256
    style_hidden: int = 128
    dropout: float = 0.5
    max_decoder_steps: int = 200
    stop_threshold: float = 0.05
    stop_patience: int = 2

    def __post_init__(self) -> None:
        self.prenet_dims = tuple(int(d) for d in self.prenet_dims)
        dims = [
            self.vocab_size, self.char_embed_dim, self.style_dim, self.encoder_dim, self.attention_dim,
            self.attention_rnn_dim, self.decoder_dim, self.n_mels, self.n_linear, self.text_cbhg_k,
            self.post_cbhg_k, self.cbhg_bank_channels, self.cbhg_proj_dim, self.post_dim,
            self.contents_hidden, self.style_hidden, self.max_decoder_steps, *self.prenet_dims,
        ]
        if any(d <= 0 for d in dims) or not self.prenet_dims:
            raise ValueError("all model dimensions must be positive")
        if self.reduction_factor < 1:
            raise ValueError("reduction_factor must be >= 1")
        if self.encoder_dim % 2:
            raise ValueError("encoder_dim must be even (bidirectional GRU halves)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prenet_dims"] = list(self.prenet_dims)
        return d


# --- building blocks -------------------------------------------------------------


def _lengths_mask(lengths: Tensor, max_len: int) -> Tensor:
    return torch.arange(max_len, device=lengths.device)[None, :] < lengths[:, None]


class Prenet(nn.Module):
    """Stack of Linear -> ReLU -> dropout layers.

    Dropout masks are drawn with ``torch.rand`` from the global generator,
    one layer at a time, and only in training mode.
    """

    def __init__(self, in_dim: int, dims: Sequence[int], dropout: float):
        super().__init__()
        sizes = [in_dim, *dims]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(sizes[:-1], sizes[1:]))
        self.dropout = dropout

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_features

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = F.relu(layer(x))
            if self.training and self.dropout > 0:
                keep = torch.rand(x.shape, dtype=x.dtype, device=x.device) >= self.dropout
                x = x * keep / (1.0 - self.dropout)
        return x


class Highway(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.transform = nn.Linear(dim, dim)
        self.gate = nn.Linear(dim, dim)

    def forward(self, x: Tensor) -> Tensor:
        h = F.relu(self.transform(x))
        t = torch.sigmoid(self.gate(x))
        return h * t + x * (1.0 - t)


class CBHG(nn.Module):
    """Conv bank (widths 1..K) -> max-pool -> projections (+ residual) ->
    highway stack -> bidirectional GRU. Sequence length is preserved."""

    def __init__(
        self,
        in_dim: int,
        K: int,
        bank_channels: int,
        proj_dim: int,
        n_highway: int,
        gru_dim: int,
    ):
        super().__init__()
        self.bank = nn.ModuleList(nn.Conv1d(in_dim, bank_channels, k) for k in range(1, K + 1))
        self.proj1 = nn.Conv1d(K * bank_channels, proj_dim, 3, padding=1)
        self.proj2 = nn.Conv1d(proj_dim, in_dim, 3, padding=1)
        self.pre_highway = nn.Linear(in_dim, gru_dim) if in_dim != gru_dim else None
        self.highways = nn.ModuleList(Highway(gru_dim) for _ in range(n_highway))
        self.gru = BiRNN("gru", gru_dim, gru_dim)
        self.out_dim = 2 * gru_dim

    def forward(self, x: Tensor, lengths: Optional[Tensor] = None) -> Tensor:
        # x: (B, L, in_dim)
        if x.shape[1] < 1:
            raise ValueError("CBHG needs at least one time step")
        residual = x
        y = x.transpose(1, 2)
        banked = []
        for conv in self.bank:
            k = conv.kernel_size[0]
            padded = F.pad(y, ((k - 1) // 2, k // 2))
            banked.append(F.relu(conv(padded)))
        y = torch.cat(banked, dim=1)
        y = F.max_pool1d(F.pad(y, (0, 1), mode="replicate"), kernel_size=2, stride=1)
        y = F.relu(self.proj1(y))
        y = self.proj2(y).transpose(1, 2) + residual
        if self.pre_highway is not None:
            y = self.pre_highway(y)
        for hw in self.highways:
            y = hw(y)
        return self.gru(y, lengths)


def reverse_padded(x: Tensor, lengths: Optional[Tensor]) -> Tensor:
    """Reverse each sequence's first ``lengths[b]`` steps, leaving padding in place."""
    if lengths is None:
        return x.flip(1)
    steps = torch.arange(x.shape[1], device=x.device)[None, :]
    idx = torch.where(steps < lengths[:, None], lengths[:, None] - 1 - steps, steps)
    return x.gather(1, idx[:, :, None].expand(-1, -1, x.shape[2]))


class BiRNN(nn.Module):
    """Stacked bidirectional LSTM/GRU that respects per-example lengths.

    The backward direction runs over each sequence's reversed valid prefix,
    so padding never reaches real time steps (same result as packing, at a
    fraction of the CPU cost).
    """

    def __init__(self, kind: str, in_dim: int, hidden: int, num_layers: int = 1):
        super().__init__()
        rnn = {"lstm": nn.LSTM, "gru": nn.GRU}[kind]
        self.fwd = nn.ModuleList()
        self.bwd = nn.ModuleList()
        for layer in range(num_layers):
            d = in_dim if layer == 0 else 2 * hidden
            self.fwd.append(rnn(d, hidden, batch_first=True))
            self.bwd.append(rnn(d, hidden, batch_first=True))

    def forward(self, x: Tensor, lengths: Optional[Tensor] = None) -> Tensor:
        for fwd, bwd in zip(self.fwd, self.bwd):
            ahead, _ = fwd(x)
            behind, _ = bwd(reverse_padded(x, lengths))
            x = torch.cat([ahead, reverse_padded(behind, lengths)], dim=-1)
        return x


# --- encoders -------------------------------------------------------------------


@dataclass
class EncodedLinguistic:
    values: Tensor  # (B, L, encoder_dim)
    lengths: Tensor  # (B,)
    source: Task


def xor_route(h_c: Optional[EncodedLinguistic] = None, h_t: Optional[EncodedLinguistic] = None) -> EncodedLinguistic:
    """Return whichever linguistic encoding is present; exactly one must be."""
    if h_c is not None and h_t is not None:
        raise BothPresent("both contents and text encodings were given")
    if h_c is None and h_t is None:
        raise NeitherPresent("one of the contents or text encodings is required")
    return h_c if h_c is not None else h_t


class TextEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.embedding = nn.Embedding(cfg.vocab_size, cfg.char_embed_dim)
        self.prenet = Prenet(cfg.char_embed_dim, cfg.prenet_dims, cfg.dropout)
        self.cbhg = CBHG(
            self.prenet.out_dim, cfg.text_cbhg_k, cfg.cbhg_bank_channels, cfg.cbhg_proj_dim,
            cfg.highway_layers, cfg.encoder_dim // 2,
        )

    def forward(self, tokens: Tensor, lengths: Tensor) -> EncodedLinguistic:
        x = self.prenet(self.embedding(tokens))
        return EncodedLinguistic(self.cbhg(x, lengths), lengths, Task.TTS)


class ContentsEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.lstm = BiRNN("lstm", cfg.n_mels, cfg.contents_hidden, num_layers=2)
        self.proj = nn.Linear(2 * cfg.contents_hidden, cfg.encoder_dim)

    def forward(self, mel: Tensor, lengths: Tensor) -> EncodedLinguistic:
        if mel.shape[1] == 0:
            raise ValueError("contents encoder got an empty input")
        return EncodedLinguistic(self.proj(self.lstm(mel, lengths)), lengths, Task.VC)


class StyleEncoder(nn.Module):
    """2-layer LSTM; the top layer's state at the last valid frame -> affine."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.lstm = nn.LSTM(cfg.n_mels, cfg.style_hidden, num_layers=2, batch_first=True)
        self.proj = nn.Linear(cfg.style_hidden, cfg.style_dim)

    def forward(self, mel: Tensor, lengths: Optional[Tensor] = None) -> Tensor:
        if mel.shape[1] == 0:
            raise ValueError("style encoder got an empty input")
        out, _ = self.lstm(mel)  # causal: padding after a step cannot affect it
        if lengths is None:
            last = out[:, -1]
        else:
            last = out[torch.arange(out.shape[0]), lengths - 1]
        return self.proj(last)


# --- decoder --------------------------------------------------------------------


@dataclass
class DecoderState:
    h_att: Tensor
    h_dec: List[Tensor]
    context: Tensor
    prev_frames: Tensor  # (B, r, n_mels): the previous output group
    step: int = 0


def attention_weights(energies: Tensor, mask: Optional[Tensor] = None) -> Tensor:
    if mask is not None:
        energies = energies.masked_fill(~mask, float("-inf"))
    return torch.softmax(energies, dim=-1)


class Attention(nn.Module):
    """Attention RNN (GRU) followed by additive (Bahdanau) attention."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.prenet = Prenet(cfg.n_mels, cfg.prenet_dims, cfg.dropout)
        self.rnn = nn.GRUCell(self.prenet.out_dim + cfg.style_dim + cfg.encoder_dim, cfg.attention_rnn_dim)
        self.query = nn.Linear(cfg.attention_rnn_dim, cfg.attention_dim, bias=False)
        self.memory = nn.Linear(cfg.encoder_dim, cfg.attention_dim, bias=False)
        self.v = nn.Linear(cfg.attention_dim, 1, bias=False)

    def energies(self, o: Tensor, keys: Tensor) -> Tensor:
        # keys: memory(h_l), precomputed once per utterance
        return self.v(torch.tanh(self.query(o)[:, None, :] + keys)).squeeze(-1)

    def forward(
        self,
        prev_in: Tensor,
        h_s: Tensor,
        h_l: Tensor,
        keys: Tensor,
        mask: Optional[Tensor],
        h_att: Tensor,
        context: Tensor,
    ) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
        """``prev_in`` is the prenet output for the previous frame.

        Returns ``(h_att, context, o, weights)``; for a GRU the output ``o``
        equals the new hidden state.
        """
        h_att = self.rnn(torch.cat([prev_in, h_s, context], dim=-1), h_att)
        o = h_att
        weights = attention_weights(self.energies(o, keys), mask)
        context = torch.bmm(weights[:, None, :], h_l).squeeze(1)
        return h_att, context, o, weights


class Decoder(nn.Module):
    """concat(c, o, h_s) -> affine -> 2 residual GRU layers -> r frames."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.r = cfg.reduction_factor
        self.n_mels = cfg.n_mels
        self.in_proj = nn.Linear(cfg.encoder_dim + cfg.attention_rnn_dim + cfg.style_dim, cfg.decoder_dim)
        self.rnns = nn.ModuleList(nn.GRUCell(cfg.decoder_dim, cfg.decoder_dim) for _ in range(2))
        self.out = nn.Linear(cfg.decoder_dim, self.r * cfg.n_mels)

    def forward(self, context: Tensor, o: Tensor, h_s: Tensor, h_dec: List[Tensor]) -> Tuple[List[Tensor], Tensor]:
        x = self.in_proj(torch.cat([context, o, h_s], dim=-1))
        new_h = []
        for rnn, h in zip(self.rnns, h_dec):
            h = rnn(x, h)
            new_h.append(h)
            x = x + h
        frames = self.out(x).view(-1, self.r, self.n_mels)
        return new_h, frames


class PostProcessor(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cbhg = CBHG(
            cfg.n_mels, cfg.post_cbhg_k, cfg.cbhg_bank_channels, cfg.cbhg_proj_dim, cfg.highway_layers, cfg.post_dim
        )
        self.out = nn.Linear(self.cbhg.out_dim, cfg.n_linear)

    def forward(self, mel: Tensor, lengths: Optional[Tensor] = None) -> Tensor:
        return self.out(self.cbhg(mel, lengths))


# --- full model -----------------------------------------------------------------


@dataclass
class SynthesisResult:
    mel: Tensor  # (B, steps*r, n_mels)
    linear: Tensor  # (B, steps*r, n_linear)
    alignment: Tensor  # (B, steps, L)
    lengths: Tensor  # valid output frames per example
    truncated: Tensor = field(default=None)  # bool (B,): hit max_decoder_steps while free-running

    @property
    def steps(self) -> int:
        return self.alignment.shape[1]


class MultitaskVCTTS(nn.Module):
    """VC when given ``(mel, style_ref)``, TTS when given ``(tokens, style_ref)``."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.text_encoder = TextEncoder(cfg)
        self.contents_encoder = ContentsEncoder(cfg)
        self.style_encoder = StyleEncoder(cfg)
        self.attention = Attention(cfg)
        self.decoder = Decoder(cfg)
        self.post = PostProcessor(cfg)
        reset_parameters(self)

    @property
    def dtype(self) -> torch.dtype:
        return self.decoder.out.weight.dtype

    def encode(self, task: Task, linguistic: Tensor, lengths: Tensor) -> EncodedLinguistic:
        task = Task(task)
        if task is Task.TTS:
            if linguistic.dtype not in (torch.int64, torch.int32):
                raise TypeError("TTS expects integer token ids")
            return xor_route(h_t=self.text_encoder(linguistic.long(), lengths))
        if not linguistic.is_floating_point() or linguistic.dim() != 3:
            raise TypeError("VC expects a (B, T, n_mels) float mel tensor")
        return xor_route(h_c=self.contents_encoder(linguistic.to(self.dtype), lengths))

    def initial_state(self, batch: int, h_l: Tensor) -> DecoderState:
        cfg, dt = self.cfg, h_l.dtype
        return DecoderState(
            h_att=h_l.new_zeros(batch, cfg.attention_rnn_dim),
            h_dec=[h_l.new_zeros(batch, cfg.decoder_dim) for _ in range(2)],
            context=h_l.new_zeros(batch, cfg.encoder_dim),
            prev_frames=torch.zeros(batch, cfg.reduction_factor, cfg.n_mels, dtype=dt, device=h_l.device),
        )

    def forward(
        self,
        task: Task,
        linguistic: Tensor,
        linguistic_lengths: Tensor,
        style_ref: Tensor,
        style_lengths: Optional[Tensor] = None,
        target_mel: Optional[Tensor] = None,
        max_steps: Optional[int] = None,
    ) -> SynthesisResult:
        """Teacher-forced when ``target_mel`` is given (its length must be a
        multiple of r), free-running otherwise."""
        cfg = self.cfg
        r = cfg.reduction_factor
        enc = self.encode(task, linguistic, linguistic_lengths)
        h_l = enc.values
        batch = h_l.shape[0]
        mask = _lengths_mask(enc.lengths, h_l.shape[1])
        h_s = self.style_encoder(style_ref.to(self.dtype), style_lengths)
        keys = self.attention.memory(h_l)
        state = self.initial_state(batch, h_l)

        groups: List[Tensor] = []
        aligns: List[Tensor] = []

        def step(prev_in: Tensor) -> Tensor:
            state.h_att, state.context, o, w = self.attention(
                prev_in, h_s, h_l, keys, mask, state.h_att, state.context
            )
            state.h_dec, frames = self.decoder(state.context, o, h_s, state.h_dec)
            state.prev_frames = frames
            state.step += 1
            aligns.append(w)
            groups.append(frames)
            return frames

        if target_mel is not None:
            target_mel = target_mel.to(self.dtype)
            if target_mel.shape[1] % r:
                raise ValueError(f"target length {target_mel.shape[1]} is not a multiple of r={r}")
            n_steps = target_mel.shape[1] // r
            go = target_mel.new_zeros(batch, 1, cfg.n_mels)
            prev = torch.cat([go, target_mel[:, r - 1 : -1 : r]], dim=1) if n_steps > 1 else go
            prev_in = self.attention.prenet(prev)
            for t in range(n_steps):
                step(prev_in[:, t])
            mel = torch.cat(groups, dim=1)
            lengths = torch.full((batch,), mel.shape[1], dtype=torch.long)
            truncated = torch.zeros(batch, dtype=torch.bool)
            linear = self.post(mel)
        else:
            limit = max_steps or cfg.max_decoder_steps
            quiet = torch.zeros(batch, dtype=torch.long)
            done_at = torch.full((batch,), -1, dtype=torch.long)
            prev = h_l.new_zeros(batch, cfg.n_mels)
            for t in range(limit):
                frames = step(self.attention.prenet(prev))
                prev = frames[:, -1]
                silent = (frames < cfg.stop_threshold).flatten(1).all(dim=1)
                quiet = torch.where(silent, quiet + 1, torch.zeros_like(quiet))
                newly = (quiet >= cfg.stop_patience) & (done_at < 0)
                done_at[newly] = t + 1
                if bool((done_at >= 0).all()):
                    break
            truncated = done_at < 0
            n_steps = len(groups)
            done_at[truncated] = n_steps
            mel = torch.cat(groups, dim=1)
            lengths = done_at * r
            linear = self.post(mel, lengths)
        return SynthesisResult(mel, linear, torch.stack(aligns, dim=1), lengths, truncated)

    # --- parameter bookkeeping ----------------------------------------------

    def named_parameter_shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        return [(n, tuple(p.shape)) for n, p in self.named_parameters()]


TEXT_ONLY_PREFIX = "text_encoder."
CONTENTS_ONLY_PREFIX = "contents_encoder."
SHARED_PREFIXES = ("style_encoder.", "attention.", "decoder.", "post.")


# Spectrogram targets are mostly near zero; starting the output projections
# small keeps early predictions near the L1 median and shortens the plateau.
OUTPUT_INIT_SCALE = 0.1
OUTPUT_WEIGHTS = ("decoder.out.weight", "post.out.weight")


def reset_parameters(module: nn.Module) -> None:
    """Fan-in uniform weights, orthogonal recurrent matrices, zero biases,
    down-scaled spectrogram output projections."""
    for name, p in module.named_parameters():
        leaf = name.rsplit(".", 1)[-1]
        with torch.no_grad():
            if "bias" in leaf:
                p.zero_()
            elif leaf.startswith("weight_hh"):
                hidden = p.shape[1]
                for g in range(p.shape[0] // hidden):
                    nn.init.orthogonal_(p[g * hidden : (g + 1) * hidden])
            elif name.endswith("embedding.weight"):
                nn.init.uniform_(p, -math.sqrt(3.0), math.sqrt(3.0))
            else:
                fan_in = p[0].numel()
                bound = math.sqrt(3.0 / fan_in)
                if name in OUTPUT_WEIGHTS:
                    bound *= OUTPUT_INIT_SCALE
                nn.init.uniform_(p, -bound, bound)
