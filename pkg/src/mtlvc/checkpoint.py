"""Checkpoint container: an ``.npz`` archive written to ``ckpt_{step}.bin``.

Entries:

* ``meta``            JSON (format version, model config, global step, extras)
* ``param/<name>``    every named parameter as float32
* ``adam_m/<name>``, ``adam_v/<name>``, ``adam_step/<name>``  optimizer moments
* ``torch_rng``       torch CPU generator state (uint8)
"""

from __future__ import annotations

import io
import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import torch

from .errors import CheckpointError
from .model import ModelConfig, MultitaskVCTTS

FORMAT_VERSION = 1


def save_checkpoint(
    path: Union[str, Path],
    model: MultitaskVCTTS,
    optimizer: Optional[torch.optim.Optimizer] = None,
    step: int = 0,
    extra: Optional[Dict[str, Any]] = None,
    torch_rng: Optional[torch.Tensor] = None,
) -> Path:
    path = Path(path)
    arrays: Dict[str, np.ndarray] = {}
    names = {}
    for name, p in model.named_parameters():
        arrays[f"param/{name}"] = p.detach().cpu().numpy().astype(np.float32)
        names[p] = name
    if optimizer is not None:
        for p, st in optimizer.state.items():
            name = names[p]
            arrays[f"adam_m/{name}"] = st["exp_avg"].detach().cpu().numpy().astype(np.float32)
            arrays[f"adam_v/{name}"] = st["exp_avg_sq"].detach().cpu().numpy().astype(np.float32)
            arrays[f"adam_step/{name}"] = np.array(float(st["step"]), dtype=np.float64)
    if torch_rng is not None:
        arrays["torch_rng"] = torch_rng.numpy().astype(np.uint8)
    meta = {
        "format_version": FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "step": int(step),
        "extra": extra or {},
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)
    return path


class Checkpoint:
    def __init__(self, meta: dict, arrays: Dict[str, np.ndarray], path: Optional[Path] = None):
        self.meta = meta
        self.arrays = arrays
        self.path = path

    @property
    def step(self) -> int:
        return int(self.meta["step"])

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.meta["model_config"])

    @property
    def extra(self) -> dict:
        return self.meta.get("extra", {})

    def params(self) -> Dict[str, np.ndarray]:
        return {k[len("param/") :]: v for k, v in self.arrays.items() if k.startswith("param/")}

    def build_model(self, dtype: torch.dtype = torch.float32) -> MultitaskVCTTS:
        model = MultitaskVCTTS(self.model_config).to(dtype)
        self.restore_model(model)
        model.eval()
        return model

    def restore_model(self, model: MultitaskVCTTS) -> None:
        stored = self.params()
        expected = dict(model.named_parameters())
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        if missing or extra:
            raise CheckpointError(f"parameter mismatch: missing={missing} unexpected={extra}")
        for name, p in expected.items():
            arr = stored[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise CheckpointError(f"{name}: stored shape {arr.shape}, model expects {tuple(p.shape)}")
            with torch.no_grad():
                p.copy_(torch.from_numpy(arr).to(p.dtype))

    def restore_optimizer(self, model: MultitaskVCTTS, optimizer: torch.optim.Optimizer) -> None:
        for name, p in model.named_parameters():
            key = f"adam_m/{name}"
            if key not in self.arrays:
                continue
            optimizer.state[p] = {
                "step": torch.tensor(float(self.arrays[f"adam_step/{name}"]), dtype=torch.float32),
                "exp_avg": torch.from_numpy(self.arrays[key].copy()).to(p.dtype),
                "exp_avg_sq": torch.from_numpy(self.arrays[f"adam_v/{name}"].copy()).to(p.dtype),
            }

    def torch_rng(self) -> Optional[torch.Tensor]:
        if "torch_rng" not in self.arrays:
            return None
        return torch.from_numpy(self.arrays["torch_rng"].copy())


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    if "meta" not in arrays:
        raise CheckpointError(f"{path}: missing meta entry")
    meta = json.loads(arrays.pop("meta").tobytes().decode("utf-8"))
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {meta.get('format_version')}")
    return Checkpoint(meta, arrays, path)
