"""Multitask training loop: task sampling, pair sampling, padding, teacher-forced
L1 loss, clipped Adam updates, checkpointing and exact resume."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import CorpusTooSmall, NonFiniteLoss
from .model import ModelConfig, MultitaskVCTTS, Task
from .synthcorpus import CorpusManifest
from .text import PAD_ID

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    grad_clip: float = 1.0
    p_vc: float = 0.5
    total_steps: int = 10000
    checkpoint_interval: int = 1000
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_vc <= 1.0:
            raise ValueError("p_vc must lie in [0, 1]")
        if self.total_steps <= 0 or self.batch_size <= 0:
            raise ValueError("total_steps and batch_size must be positive")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingExample:
    task: Task
    linguistic: np.ndarray  # token ids (VC: mel frames)
    style_ref: np.ndarray
    target_mel: np.ndarray
    target_linear: np.ndarray
    sentence_id: int
    style_ref_sentence_id: int
    source_style: Optional[int]  # VC only
    target_style: int


@dataclass
class Batch:
    task: Task
    linguistic: torch.Tensor
    linguistic_lengths: torch.Tensor
    style_ref: torch.Tensor
    style_lengths: torch.Tensor
    target_mel: torch.Tensor
    target_linear: torch.Tensor
    target_lengths: torch.Tensor  # unpadded; bookkeeping only

    def __len__(self) -> int:
        return self.linguistic.shape[0]


def sample_task(rng: np.random.Generator, p_vc: float = 0.5) -> Task:
    return Task.VC if rng.random() < p_vc else Task.TTS


def sample_example(manifest: CorpusManifest, task: Task, rng: np.random.Generator) -> TrainingExample:
    """Draw one (input, style reference, target) triple.

    The style reference shares the target style but comes from a different
    sentence whenever the corpus has more than one. Style ids are recorded
    for auditing only.
    """
    styles = manifest.style_ids
    sentences = manifest.sentence_ids
    if len(styles) < 2:
        raise CorpusTooSmall(f"need at least 2 styles, corpus has {len(styles)}")
    if not sentences:
        raise CorpusTooSmall("corpus has no sentences")
    task = Task(task)
    s = sentences[int(rng.integers(len(sentences)))]
    e_t = styles[int(rng.integers(len(styles)))]
    target = manifest.row(s, e_t)
    e_src = None
    if task is Task.VC:
        others = [e for e in styles if e != e_t]
        e_src = others[int(rng.integers(len(others)))]
        linguistic = manifest.mel(manifest.row(s, e_src)).values
    else:
        linguistic = np.asarray(manifest.token_ids(target), dtype=np.int64)
    ref_pool = [x for x in sentences if x != s] or [s]
    s_ref = ref_pool[int(rng.integers(len(ref_pool)))]
    return TrainingExample(
        task=task,
        linguistic=linguistic,
        style_ref=manifest.mel(manifest.row(s_ref, e_t)).values,
        target_mel=manifest.mel(target).values,
        target_linear=manifest.linear(target).values,
        sentence_id=s,
        style_ref_sentence_id=s_ref,
        source_style=e_src,
        target_style=e_t,
    )


def _pad_stack(arrays: Sequence[np.ndarray], length: int, value=0) -> np.ndarray:
    first = arrays[0]
    out = np.full((len(arrays), length) + first.shape[1:], value, dtype=first.dtype)
    for i, a in enumerate(arrays):
        out[i, : len(a)] = a
    return out


def pad_batch(examples: Sequence[TrainingExample], r: int, dtype: torch.dtype = torch.float32) -> Batch:
    """Zero-pad to the longest example; target frames to a multiple of ``r``."""
    if not examples:
        raise ValueError("empty batch")
    task = examples[0].task
    if any(e.task != task for e in examples):
        raise ValueError("batch mixes VC and TTS examples")
    ling_len = np.array([len(e.linguistic) for e in examples])
    ref_len = np.array([len(e.style_ref) for e in examples])
    tgt_len = np.array([len(e.target_mel) for e in examples])
    t_pad = int(math.ceil(tgt_len.max() / r) * r)
    if task is Task.TTS:
        ling = torch.from_numpy(_pad_stack([e.linguistic for e in examples], int(ling_len.max()), PAD_ID))
    else:
        ling = torch.from_numpy(_pad_stack([e.linguistic for e in examples], int(ling_len.max()))).to(dtype)
    return Batch(
        task=task,
        linguistic=ling,
        linguistic_lengths=torch.from_numpy(ling_len),
        style_ref=torch.from_numpy(_pad_stack([e.style_ref for e in examples], int(ref_len.max()))).to(dtype),
        style_lengths=torch.from_numpy(ref_len),
        target_mel=torch.from_numpy(_pad_stack([e.target_mel for e in examples], t_pad)).to(dtype),
        target_linear=torch.from_numpy(_pad_stack([e.target_linear for e in examples], t_pad)).to(dtype),
        target_lengths=torch.from_numpy(tgt_len),
    )


def loss_fn(m: torch.Tensor, l: torch.Tensor, m_gt: torch.Tensor, l_gt: torch.Tensor) -> torch.Tensor:
    """Mean absolute error on mel plus mean absolute error on linear, padding included."""
    if m.shape != m_gt.shape or l.shape != l_gt.shape:
        raise ValueError(f"shape mismatch: {tuple(m.shape)} vs {tuple(m_gt.shape)}, {tuple(l.shape)} vs {tuple(l_gt.shape)}")
    return (m - m_gt).abs().mean() + (l - l_gt).abs().mean()


def batch_loss(model: MultitaskVCTTS, batch: Batch) -> torch.Tensor:
    out = model(
        batch.task,
        batch.linguistic,
        batch.linguistic_lengths,
        batch.style_ref,
        batch.style_lengths,
        target_mel=batch.target_mel,
    )
    return loss_fn(out.mel, out.linear, batch.target_mel, batch.target_linear)


def clip_gradients(params: Sequence[torch.nn.Parameter], max_norm: float) -> float:
    """Global-norm clipping; returns the pre-clip norm."""
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 0.0
    norm = float(torch.linalg.vector_norm(torch.stack([torch.linalg.vector_norm(g) for g in grads])))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for g in grads:
            g.mul_(scale)
    return norm


def global_grad_norm(params: Sequence[torch.nn.Parameter]) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 0.0
    return float(torch.linalg.vector_norm(torch.stack([torch.linalg.vector_norm(g) for g in grads])))


METRICS_COLUMNS = ["step", "task", "loss", "grad_norm", "wall_ms"]


class Trainer:
    """Owns the model, optimizer and both RNG streams for one training run."""

    def __init__(
        self,
        manifest: CorpusManifest,
        train_cfg: TrainConfig,
        model_cfg: ModelConfig,
        run_dir: Optional[Union[str, Path]] = None,
    ):
        self.manifest = manifest
        self.cfg = train_cfg
        self.model_cfg = model_cfg
        self.dtype = _DTYPES[train_cfg.dtype]
        self.run_dir = Path(run_dir) if run_dir is not None else None
        torch.manual_seed(train_cfg.seed)
        self.model = MultitaskVCTTS(model_cfg).to(self.dtype)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=train_cfg.learning_rate)
        self.rng = np.random.default_rng(train_cfg.seed)
        self.step = 0
        self.history: List[Tuple[int, str, float, float]] = []
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            snapshot = {"train": train_cfg.to_dict(), "model": model_cfg.to_dict()}
            (self.run_dir / "config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n")

    # --- sampling -----------------------------------------------------------

    def next_batch(self) -> Batch:
        task = sample_task(self.rng, self.cfg.p_vc)
        examples = [sample_example(self.manifest, task, self.rng) for _ in range(self.cfg.batch_size)]
        return pad_batch(examples, self.model_cfg.reduction_factor, self.dtype)

    # --- optimisation -------------------------------------------------------

    def train_step(self, batch: Batch) -> Tuple[float, float]:
        """One clipped Adam update; returns (loss before update, pre-clip grad norm)."""
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        loss = batch_loss(self.model, batch)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise NonFiniteLoss(self.step + 1, value)
        loss.backward()
        norm = clip_gradients(list(self.model.parameters()), self.cfg.grad_clip)
        self.optimizer.step()
        self.step += 1
        return value, norm

    def run(self, until: Optional[int] = None, log: bool = True) -> List[Tuple[int, str, float, float]]:
        until = self.cfg.total_steps if until is None else until
        metrics = None
        if self.run_dir is not None and log:
            path = self.run_dir / "metrics.tsv"
            fresh = not path.exists() or self.step == 0
            metrics = open(path, "w" if fresh else "a", encoding="utf-8", newline="")
            writer = csv.writer(metrics, delimiter="\t", lineterminator="\n")
            if fresh:
                writer.writerow(METRICS_COLUMNS)
        try:
            while self.step < until:
                t0 = time.perf_counter()
                batch = self.next_batch()
                loss, norm = self.train_step(batch)
                wall = (time.perf_counter() - t0) * 1000.0
                self.history.append((self.step, batch.task.value, loss, norm))
                if metrics is not None:
                    writer.writerow([self.step, batch.task.value, repr(loss), repr(norm), f"{wall:.1f}"])
                if self.run_dir is not None and self.cfg.checkpoint_interval and (
                    self.step % self.cfg.checkpoint_interval == 0 or self.step == until
                ):
                    self.save()
        finally:
            if metrics is not None:
                metrics.close()
        return self.history

    # --- persistence --------------------------------------------------------

    def save(self, path: Optional[Union[str, Path]] = None) -> Path:
        if path is None:
            if self.run_dir is None:
                raise ValueError("no run directory configured")
            path = self.run_dir / f"ckpt_{self.step}.bin"
        extra = {
            "train_config": self.cfg.to_dict(),
            "numpy_rng": self.rng.bit_generator.state,
        }
        return save_checkpoint(path, self.model, self.optimizer, self.step, extra, torch.get_rng_state())

    @classmethod
    def resume(
        cls,
        checkpoint: Union[str, Path, Checkpoint],
        manifest: CorpusManifest,
        run_dir: Optional[Union[str, Path]] = None,
        total_steps: Optional[int] = None,
    ) -> "Trainer":
        ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
        train_cfg = TrainConfig(**ckpt.extra["train_config"])
        if total_steps is not None:
            train_cfg.total_steps = total_steps
        trainer = cls.__new__(cls)
        trainer.manifest = manifest
        trainer.cfg = train_cfg
        trainer.model_cfg = ckpt.model_config
        trainer.dtype = _DTYPES[train_cfg.dtype]
        trainer.run_dir = Path(run_dir) if run_dir is not None else (ckpt.path.parent if ckpt.path else None)
        trainer.model = MultitaskVCTTS(trainer.model_cfg).to(trainer.dtype)
        ckpt.restore_model(trainer.model)
        trainer.optimizer = torch.optim.Adam(trainer.model.parameters(), lr=train_cfg.learning_rate)
        ckpt.restore_optimizer(trainer.model, trainer.optimizer)
        trainer.rng = np.random.default_rng()
        trainer.rng.bit_generator.state = ckpt.extra["numpy_rng"]
        rng_state = ckpt.torch_rng()
        if rng_state is not None:
            torch.set_rng_state(rng_state)
        trainer.step = ckpt.step
        trainer.history = []
        return trainer


def train(
    manifest: CorpusManifest,
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    run_dir: Optional[Union[str, Path]] = None,
) -> Trainer:
    trainer = Trainer(manifest, train_cfg, model_cfg, run_dir)
    trainer.run()
    return trainer


def read_metrics(path: Union[str, Path]) -> List[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))
