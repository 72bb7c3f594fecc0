"""Machine-measurable evaluations: token error rate per model variant, the
style-vector cosine confusion matrix, and spectrogram conversion grids."""

from __future__ import annotations

import contextlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from . import kernels
from .errors import EmptyReference
from .features import FeatureKind, FeatureMatrix, write_features
from .model import MultitaskVCTTS, Task
from .synthcorpus import Articulator, CorpusManifest, OracleDecoder
from .text import EOS_ID, PAD_ID


@dataclass(frozen=True)
class VariantSpec:
    name: str
    p_vc: float
    inference: Task


VARIANTS: Dict[str, VariantSpec] = {
    "VC": VariantSpec("VC", 1.0, Task.VC),
    "VCTTS-V": VariantSpec("VCTTS-V", 0.5, Task.VC),
    "VCTTS-T": VariantSpec("VCTTS-T", 0.5, Task.TTS),
    "TTS": VariantSpec("TTS", 0.0, Task.TTS),
}


def _strip(seq: Sequence[int]) -> List[int]:
    return [int(t) for t in seq if t not in (EOS_ID, PAD_ID)]


def token_error_rate(ref: Sequence[int], hyp: Sequence[int]) -> float:
    """Levenshtein distance / reference length, EOS and PAD ignored."""
    r, h = _strip(ref), _strip(hyp)
    if not r:
        raise EmptyReference("reference has no tokens")
    return kernels.edit_distance(r, h) / len(r)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


# --- batched inference -----------------------------------------------------------


@dataclass
class Synthesis:
    mel: np.ndarray
    linear: np.ndarray
    alignment: np.ndarray
    truncated: bool


def _pad(arrays: Sequence[np.ndarray], value=0) -> Tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(a) for a in arrays])
    out = np.full((len(arrays), lengths.max()) + arrays[0].shape[1:], value, dtype=arrays[0].dtype)
    for i, a in enumerate(arrays):
        out[i, : len(a)] = a
    return out, lengths


@contextlib.contextmanager
def _eval_mode(model: torch.nn.Module):
    """Switch to inference mode, restoring the caller's mode afterwards."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            yield
    finally:
        model.train(was_training)


def synthesize(
    model: MultitaskVCTTS,
    task: Task,
    inputs: Sequence[np.ndarray],
    style_refs: Sequence[np.ndarray],
    batch_size: int = 32,
    max_steps: Optional[int] = None,
) -> List[Synthesis]:
    """Free-running inference; each output is trimmed to its own stop point."""
    task = Task(task)
    results: List[Synthesis] = []
    with _eval_mode(model):
        for lo in range(0, len(inputs), batch_size):
            chunk = inputs[lo : lo + batch_size]
            refs = style_refs[lo : lo + batch_size]
            if task is Task.TTS:
                ling, ling_len = _pad([np.asarray(x, dtype=np.int64) for x in chunk], PAD_ID)
                ling_t = torch.from_numpy(ling)
            else:
                ling, ling_len = _pad([np.asarray(x, dtype=np.float32) for x in chunk])
                ling_t = torch.from_numpy(ling).to(model.dtype)
            ref, ref_len = _pad([np.asarray(x, dtype=np.float32) for x in refs])
            out = model(
                task,
                ling_t,
                torch.from_numpy(ling_len),
                torch.from_numpy(ref).to(model.dtype),
                torch.from_numpy(ref_len),
                max_steps=max_steps,
            )
            r = model.cfg.reduction_factor
            for b in range(len(chunk)):
                n = int(out.lengths[b])
                results.append(
                    Synthesis(
                        mel=out.mel[b, :n].float().numpy(),
                        linear=out.linear[b, :n].float().numpy(),
                        alignment=out.alignment[b, : n // r, : int(ling_len[b])].float().numpy(),
                        truncated=bool(out.truncated[b]),
                    )
                )
    return results


# --- token error rate -----------------------------------------------------------


@dataclass
class UtteranceResult:
    sentence_id: int
    source_style: Optional[int]
    target_style: int
    ter: float
    edits: int
    ref_len: int
    decoded_style: int
    n_frames: int
    truncated: bool


@dataclass
class VariantReport:
    variant: str
    mean_ter: float
    pooled_ter: float
    terminated_fraction: float
    style_accuracy: float
    utterances: List[UtteranceResult] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["utterances"] = [asdict(u) for u in self.utterances]
        return d


def eval_variant(
    model: MultitaskVCTTS,
    heldout: CorpusManifest,
    variant: VariantSpec,
    articulator: Articulator,
    style_manifest: Optional[CorpusManifest] = None,
    style_ref_sentence: Optional[int] = None,
    batch_size: int = 32,
) -> VariantReport:
    """Run the variant's inference path on every held-out sentence and score
    the oracle transcription against the true tokens.

    VC inputs cover every ordered (source, target) style pair; TTS covers
    every target style. The style reference is one fixed sentence from
    ``style_manifest`` (default: the first sentence of ``heldout``) rendered
    in the target style.
    """
    style_manifest = style_manifest or heldout
    if style_ref_sentence is None:
        style_ref_sentence = style_manifest.sentence_ids[0]
    styles = heldout.style_ids
    jobs = []
    for sid in heldout.sentence_ids:
        for tgt in styles:
            ref = style_manifest.mel(style_manifest.row(style_ref_sentence, tgt)).values
            if variant.inference is Task.VC:
                for src in styles:
                    if src != tgt:
                        jobs.append((sid, src, tgt, heldout.mel(heldout.row(sid, src)).values, ref))
            else:
                tokens = np.asarray(heldout.token_ids(heldout.row(sid, tgt)), dtype=np.int64)
                jobs.append((sid, None, tgt, tokens, ref))

    outputs = synthesize(model, variant.inference, [j[3] for j in jobs], [j[4] for j in jobs], batch_size)
    decoder = OracleDecoder(articulator)
    rows = []
    for (sid, src, tgt, _, _), out in zip(jobs, outputs):
        truth = _strip(heldout.token_ids(heldout.row(sid, tgt)))
        hyp, style = decoder.decode(out.mel)
        hyp = _strip(hyp)
        edits = kernels.edit_distance(truth, hyp)
        rows.append(
            UtteranceResult(sid, src, tgt, edits / len(truth), edits, len(truth), style, len(out.mel), out.truncated)
        )
    return VariantReport(
        variant=variant.name,
        mean_ter=float(np.mean([u.ter for u in rows])),
        pooled_ter=float(sum(u.edits for u in rows) / sum(u.ref_len for u in rows)),
        terminated_fraction=float(np.mean([not u.truncated for u in rows])),
        style_accuracy=float(np.mean([u.decoded_style == u.target_style for u in rows])),
        utterances=rows,
    )


def write_ter_table(path: Union[str, Path], reports: Sequence[VariantReport], meta: Optional[dict] = None) -> None:
    """Results file: JSON with the Table-1-shaped summary first."""
    doc = {
        "table": {r.variant: {"mean_ter": r.mean_ter, "pooled_ter": r.pooled_ter} for r in reports},
        "meta": meta or {},
        "variants": [r.to_dict() for r in reports],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# --- style confusion --------------------------------------------------------------


@dataclass
class ConfusionMatrix:
    styles: List[int]
    matrix: np.ndarray
    counts: List[int]

    @property
    def diagonal_margin(self) -> float:
        """Mean diagonal minus mean off-diagonal entry."""
        m = self.matrix
        off = m[~np.eye(len(m), dtype=bool)]
        return float(np.mean(np.diag(m)) - (off.mean() if off.size else 0.0))

    def diagonal_dominant(self) -> bool:
        m = self.matrix
        n = len(m)
        if n < 2:
            return True
        for i in range(n):
            off = np.delete(m[i], i)
            if not m[i, i] > off.mean():
                return False
        return True

    def save(self, out_dir: Union[str, Path], names: Optional[Sequence[str]] = None) -> Tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        labels = list(names) if names else [f"style{s}" for s in self.styles]
        csv_path = out_dir / "style_confusion.csv"
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("," + ",".join(labels) + "\n")
            for lab, row in zip(labels, self.matrix):
                fh.write(lab + "," + ",".join(f"{v:.6f}" for v in row) + "\n")
        png_path = out_dir / "style_confusion.png"
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(1.2 * len(labels) + 2, 1.2 * len(labels) + 1.5))
        im = ax.imshow(self.matrix, vmin=-1, vmax=1, cmap="coolwarm")
        ax.set_xticks(range(len(labels)), labels, rotation=45)
        ax.set_yticks(range(len(labels)), labels)
        for i in range(len(labels)):
            for j in range(len(labels)):
                ax.text(j, i, f"{self.matrix[i, j]:.2f}", ha="center", va="center", fontsize=8)
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        fig.savefig(png_path, dpi=100)
        plt.close(fig)
        return csv_path, png_path


def style_vectors(model: MultitaskVCTTS, mels: Sequence[np.ndarray], batch_size: int = 64) -> np.ndarray:
    out = []
    with _eval_mode(model):
        for lo in range(0, len(mels), batch_size):
            x, lengths = _pad([np.asarray(m, dtype=np.float32) for m in mels[lo : lo + batch_size]])
            h_s = model.style_encoder(torch.from_numpy(x).to(model.dtype), torch.from_numpy(lengths))
            out.append(h_s.double().numpy())
    return np.concatenate(out)


def confusion_from_vectors(vectors: Dict[int, np.ndarray]) -> ConfusionMatrix:
    """Mean pairwise cosine similarity between style groups (self-pairs excluded)."""
    styles = sorted(vectors)
    unit = {}
    for s in styles:
        v = vectors[s]
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        unit[s] = v / np.where(norms == 0, 1.0, norms)
    n = len(styles)
    m = np.zeros((n, n))
    for i, a in enumerate(styles):
        for j, b in enumerate(styles):
            sims = unit[a] @ unit[b].T
            if i == j:
                k = len(sims)
                m[i, j] = (sims.sum() - np.trace(sims)) / (k * (k - 1)) if k > 1 else 1.0
            else:
                m[i, j] = sims.mean()
    m = np.clip((m + m.T) / 2.0, -1.0, 1.0)
    return ConfusionMatrix(styles, m, [len(vectors[s]) for s in styles])


def style_confusion(
    model: MultitaskVCTTS,
    manifest: CorpusManifest,
    n_per_style: int = 20,
    seed: int = 0,
) -> ConfusionMatrix:
    if n_per_style < 2:
        raise ValueError("n_per_style must be at least 2")
    rng = np.random.default_rng(seed)
    vectors = {}
    sentences = manifest.sentence_ids
    for s in manifest.style_ids:
        chosen = rng.choice(sentences, size=n_per_style, replace=len(sentences) < n_per_style)
        mels = [manifest.mel(manifest.row(int(sid), s)).values for sid in chosen]
        vectors[s] = style_vectors(model, mels)
    return confusion_from_vectors(vectors)


# --- conversion grid ------------------------------------------------------------


@dataclass
class ConversionGrid:
    rows: List[Tuple[str, Path]]  # (label, feature file), source first
    frame_counts: Dict[str, int]
    image: Optional[Path]


def dump_conversion_grid(
    model: MultitaskVCTTS,
    manifest: CorpusManifest,
    source: Tuple[int, int],
    out_dir: Union[str, Path],
    style_ref_sentence: Optional[int] = None,
    style_manifest: Optional[CorpusManifest] = None,
    image: bool = True,
) -> ConversionGrid:
    """Convert one source utterance into every style; write features + a stacked image."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    style_manifest = style_manifest or manifest
    sid, src_style = source
    src_row = manifest.row(sid, src_style)
    if style_ref_sentence is None:
        others = [s for s in style_manifest.sentence_ids if s != sid]
        style_ref_sentence = (others or style_manifest.sentence_ids)[0]
    styles = manifest.style_ids
    refs = [style_manifest.mel(style_manifest.row(style_ref_sentence, t)).values for t in styles]
    src_mel = manifest.mel(src_row).values
    outputs = synthesize(model, Task.VC, [src_mel] * len(styles), refs)

    rows: List[Tuple[str, Path]] = []
    counts: Dict[str, int] = {}
    path = out_dir / f"source_s{sid}_e{src_style}.mel"
    write_features(path, FeatureMatrix(src_mel, FeatureKind.MEL))
    rows.append(("source", path))
    counts["source"] = len(src_mel)
    for t, out in zip(styles, outputs):
        label = f"to_style{t}"
        path = out_dir / f"{label}.mel"
        write_features(path, FeatureMatrix(np.clip(out.mel, 0.0, 1.0), FeatureKind.MEL))
        rows.append((label, path))
        counts[label] = _voiced_frames(out.mel)
    img = None
    if image:
        img = out_dir / "conversion_grid.png"
        _plot_grid([(lab, np.clip(m, 0, 1)) for lab, m in zip(
            [r[0] for r in rows], [src_mel] + [o.mel for o in outputs])], img)
    (out_dir / "frame_counts.json").write_text(json.dumps(counts, indent=2) + "\n")
    return ConversionGrid(rows, counts, img)


def _voiced_frames(mel: np.ndarray, threshold: float = 0.05) -> int:
    """Frames up to the last one with any bin above ``threshold``."""
    loud = np.flatnonzero((mel > threshold).any(axis=1))
    return int(loud[-1] + 1) if loud.size else 0


def _plot_grid(rows: Sequence[Tuple[str, np.ndarray]], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    width = max(m.shape[0] for _, m in rows)
    fig, axes = plt.subplots(len(rows), 1, figsize=(8, 1.4 * len(rows)), sharex=True)
    axes = np.atleast_1d(axes)
    for ax, (label, m) in zip(axes, rows):
        canvas = np.zeros((m.shape[1], width))
        canvas[:, : m.shape[0]] = m.T
        ax.imshow(canvas, origin="lower", aspect="auto", vmin=0, vmax=1, cmap="magma")
        ax.set_ylabel(label, rotation=0, ha="right", fontsize=8)
        ax.set_yticks([])
    axes[-1].set_xlabel("frame")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
