"""Deterministic synthetic parallel "emotional speech" corpus.

Every content token is a horizontal band of energy (a Gaussian bump across
mel bins held for a few frames). A style moves the bump (``bin_shift``),
stretches it in time (``duration_scale``), and changes its level and spectral
tilt. Because the rendering is known exactly, :func:`oracle_decode` can invert
it and serve as the recognizer for token-error-rate evaluation.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import kernels
from .dsp import SpectroConfig, mel_center_frequencies
from .errors import InvalidStyle
from .features import FeatureKind, FeatureMatrix, read_features, write_features
from .text import EOS_ID, SymbolVocabulary

FIRST_CONTENT_ID = 2  # ids 0/1 are PAD/EOS

# Up to seven styles, mirroring a seven-emotion recording setup.
_STYLE_TABLE = [
    # bin_shift, duration_scale, tilt, gain
    (0, 1.0, 0.0, 0.80),
    (6, 1.25, 0.010, 0.90),
    (-6, 0.8, -0.010, 0.60),
    (12, 1.1, 0.005, 0.70),
    (3, 1.5, -0.005, 0.85),
    (-3, 0.9, 0.015, 0.65),
    (9, 1.2, -0.015, 0.75),
]


def token_symbol(k: int) -> str:
    return f"t{k:02d}"


def synthetic_vocabulary(vocab_size: int) -> SymbolVocabulary:
    return SymbolVocabulary(token_symbol(k) for k in range(vocab_size))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class StyleTransform:
    bin_shift: int = 0
    duration_scale: float = 1.0
    tilt: float = 0.0
    gain: float = 1.0


@dataclass
class Articulator:
    centers: List[int]
    bandwidths: List[float]
    base_durations: List[int]
    styles: List[StyleTransform]
    noise_std: float = 0.02
    seed: int = 0
    spectro: SpectroConfig = field(default_factory=SpectroConfig)

    def __post_init__(self) -> None:
        self.styles = [s if isinstance(s, StyleTransform) else StyleTransform(**s) for s in self.styles]
        if isinstance(self.spectro, dict):
            self.spectro = SpectroConfig(**self.spectro)
        if not (len(self.centers) == len(self.bandwidths) == len(self.base_durations)):
            raise ValueError("per-token template lists must have equal length")
        n_mels = self.spectro.n_mels
        for s in self.styles:
            if s.duration_scale <= 0:
                raise ValueError("duration_scale must be positive")
            for k, c in enumerate(self.centers):
                if not 0 <= c + s.bin_shift < n_mels:
                    raise ValueError(f"token {k} shifted to bin {c + s.bin_shift}, outside [0, {n_mels})")
                if _round_half_up(self.base_durations[k] * s.duration_scale) < 2:
                    raise ValueError(f"token {k} would last fewer than 2 frames")
        for s in self.styles:
            shifted = [c + s.bin_shift for c in self.centers]
            if len(set(shifted)) != len(shifted):
                raise ValueError("token templates are not distinguishable within a style")

    # Wide bumps keep the spectra dense: with narrow ones the L1-optimal guess
    # under uncertain attention is all zeros, and attention never starts to align.
    @classmethod
    def default(
        cls,
        vocab_size: int = 30,
        n_styles: int = 4,
        base_duration: int = 4,
        bandwidth: float = 8.0,
        noise_std: float = 0.02,
        seed: int = 0,
        spectro: Optional[SpectroConfig] = None,
    ) -> "Articulator":
        spectro = spectro or SpectroConfig()
        if not 1 <= n_styles <= len(_STYLE_TABLE):
            raise ValueError(f"n_styles must be in [1, {len(_STYLE_TABLE)}]")
        styles = [StyleTransform(*row) for row in _STYLE_TABLE[:n_styles]]
        lo = max(0, -min(s.bin_shift for s in styles))
        hi = spectro.n_mels - 1 - max(0, max(s.bin_shift for s in styles))
        slots = np.linspace(lo, hi, vocab_size)
        if vocab_size > hi - lo + 1:
            raise ValueError(f"{vocab_size} tokens do not fit in {hi - lo + 1} bins")
        order = np.random.default_rng(seed).permutation(vocab_size)
        centers = [int(round(slots[i])) for i in order]
        return cls(
            centers=centers,
            bandwidths=[bandwidth] * vocab_size,
            base_durations=[base_duration] * vocab_size,
            styles=styles,
            noise_std=noise_std,
            seed=seed,
            spectro=spectro,
        )

    @property
    def vocab_size(self) -> int:
        return len(self.centers)

    @property
    def n_styles(self) -> int:
        return len(self.styles)

    def duration(self, k: int, style_id: int) -> int:
        return _round_half_up(self.base_durations[k] * self.styles[style_id].duration_scale)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["styles"] = [asdict(s) for s in self.styles]
        d["spectro"] = self.spectro.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Articulator":
        return cls(**d)

    # --- templates ---------------------------------------------------------

    def mel_template(self, k: int, style_id: int) -> np.ndarray:
        s = self.styles[style_id]
        bins = np.arange(self.spectro.n_mels, dtype=np.float64)
        center = self.centers[k] + s.bin_shift
        bump = np.exp(-0.5 * ((bins - center) / self.bandwidths[k]) ** 2)
        shaped = s.gain * bump * (1.0 + s.tilt * (bins - center))
        return np.clip(shaped, 0.0, 1.0)

    def linear_template(self, k: int, style_id: int) -> np.ndarray:
        s = self.styles[style_id]
        c = self.spectro
        mel_bins = np.arange(c.n_mels, dtype=np.float64)
        hz = mel_center_frequencies(c)
        center = self.centers[k] + s.bin_shift
        bw = self.bandwidths[k]
        hz_c, hz_lo, hz_hi = np.interp([center, center - bw, center + bw], mel_bins, hz)
        bin_hz = c.sample_rate / c.nfft
        lin_center = hz_c / bin_hz
        lin_bw = max((hz_hi - hz_lo) / 2.0 / bin_hz, 0.5)
        bins = np.arange(c.n_freqs, dtype=np.float64)
        bump = np.exp(-0.5 * ((bins - lin_center) / lin_bw) ** 2)
        # tilt is per mel bin; rescale to linear-bin distance
        slope = s.tilt * bw / lin_bw
        shaped = s.gain * bump * (1.0 + slope * (bins - lin_center))
        return np.clip(shaped, 0.0, 1.0)


def content_tokens(tokens: Sequence[int]) -> List[int]:
    return [t - FIRST_CONTENT_ID for t in tokens if t != EOS_ID]


def render_utterance(
    tokens: Sequence[int],
    style_id: int,
    a: Articulator,
    key: Optional[int] = None,
) -> Tuple[FeatureMatrix, FeatureMatrix]:
    """Render token ids (content ids >= 2, optional trailing EOS) in one style.

    The noise stream is seeded from ``(a.seed, style_id, key)``; ``key``
    defaults to the token ids themselves.
    """
    if not 0 <= style_id < a.n_styles:
        raise InvalidStyle(f"style {style_id} not in [0, {a.n_styles})")
    ks = content_tokens(tokens)
    for k in ks:
        if not 0 <= k < a.vocab_size:
            raise ValueError(f"token id {k + FIRST_CONTENT_ID} is not a content token")
    mel_rows, lin_rows = [], []
    for k in ks:
        d = a.duration(k, style_id)
        mel_rows.append(np.repeat(a.mel_template(k, style_id)[None, :], d, axis=0))
        lin_rows.append(np.repeat(a.linear_template(k, style_id)[None, :], d, axis=0))
    c = a.spectro
    mel = np.concatenate(mel_rows) if mel_rows else np.zeros((0, c.n_mels))
    lin = np.concatenate(lin_rows) if lin_rows else np.zeros((0, c.n_freqs))
    if a.noise_std > 0 and len(mel):
        entropy = [a.seed, style_id, key] if key is not None else [a.seed, style_id, 1 << 20, *ks]
        rng = np.random.default_rng(np.random.SeedSequence(entropy))
        mel = mel + rng.normal(0.0, a.noise_std, mel.shape)
        lin = lin + rng.normal(0.0, a.noise_std, lin.shape)
    return (
        FeatureMatrix(np.clip(mel, 0.0, 1.0), FeatureKind.MEL, c),
        FeatureMatrix(np.clip(lin, 0.0, 1.0), FeatureKind.LINEAR, c),
    )


class OracleDecoder:
    """Segmental matched-filter decoder over every (token, style) template.

    Each frame is scored against each template by negative squared error;
    :func:`kernels.segment_dp` then picks the best segmentation, allowing
    every segment to deviate by ``slack`` frames from its nominal duration at
    a small per-frame cost. A zero template of length one absorbs silence.
    """

    def __init__(self, a: Articulator, slack: int = 1, duration_penalty: float = 0.05):
        self.articulator = a
        self.duration_penalty = duration_penalty
        templates, labels, nominal = [], [], []
        for s in range(a.n_styles):
            for k in range(a.vocab_size):
                templates.append(a.mel_template(k, s))
                labels.append((k, s))
                nominal.append(a.duration(k, s))
        templates.append(np.zeros(a.spectro.n_mels))
        labels.append((-1, -1))
        nominal.append(1)
        self.templates = np.stack(templates)
        self.labels = labels
        self.nominal = np.array(nominal, dtype=np.int64)
        self.dmin = np.maximum(1, self.nominal - slack)
        self.dmax = self.nominal + slack
        self.dmin[-1] = self.dmax[-1] = 1

    def frame_scores(self, mel: np.ndarray) -> np.ndarray:
        mel = np.asarray(mel, dtype=np.float64)
        sq = (mel**2).sum(1)[:, None] - 2.0 * mel @ self.templates.T + (self.templates**2).sum(1)[None, :]
        return -sq

    def segments(self, mel: np.ndarray) -> List[Tuple[int, int, int, int]]:
        """(token, style, start, end) for every non-silent segment."""
        scores = self.frame_scores(mel)
        cum = np.vstack([np.zeros((1, scores.shape[1])), np.cumsum(scores, axis=0)])
        segs = kernels.segment_dp(cum, self.dmin, self.dmax, self.nominal, self.duration_penalty)
        out = []
        for idx, start, end in segs:
            k, s = self.labels[idx]
            if k >= 0:
                out.append((k, s, int(start), int(end)))
        return out

    def decode(self, mel: Union[FeatureMatrix, np.ndarray]) -> Tuple[List[int], int]:
        values = mel.values if isinstance(mel, FeatureMatrix) else mel
        segs = self.segments(values)
        tokens = [k + FIRST_CONTENT_ID for k, _, _, _ in segs] + [EOS_ID]
        if not segs:
            return tokens, -1
        counts = np.bincount([s for _, s, _, _ in segs], minlength=self.articulator.n_styles)
        return tokens, int(np.argmax(counts))


def oracle_decode(mel: FeatureMatrix, a: Articulator) -> Tuple[List[int], int]:
    """Recover (token ids incl. EOS, majority style); style is -1 if nothing decoded."""
    if mel.kind != FeatureKind.MEL:
        raise ValueError("oracle_decode expects a MEL feature matrix")
    return OracleDecoder(a).decode(mel)


# --- corpus on disk ------------------------------------------------------------

MANIFEST_NAME = "manifest.tsv"
CONFIG_NAME = "corpus_config.json"
VOCAB_NAME = "vocab.txt"
MANIFEST_COLUMNS = ["utt_id", "sentence_id", "style_id", "tokens", "mel_path", "linear_path"]


@dataclass(frozen=True)
class ManifestRow:
    utt_id: str
    sentence_id: int
    style_id: int
    tokens: str
    mel_path: str
    linear_path: str


class CorpusManifest:
    """Rows of a (possibly parallel) corpus plus its configuration snapshot."""

    def __init__(
        self,
        rows: Sequence[ManifestRow],
        root: Union[str, Path],
        vocab: SymbolVocabulary,
        spectro: Optional[SpectroConfig] = None,
        articulator: Optional[Articulator] = None,
    ):
        self.rows = list(rows)
        self.root = Path(root)
        self.vocab = vocab
        self.spectro = spectro or (articulator.spectro if articulator else SpectroConfig())
        self.articulator = articulator
        self._index: Dict[Tuple[int, int], ManifestRow] = {(r.sentence_id, r.style_id): r for r in self.rows}
        self._cache: Dict[str, FeatureMatrix] = {}

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def sentence_ids(self) -> List[int]:
        return sorted({r.sentence_id for r in self.rows})

    @property
    def style_ids(self) -> List[int]:
        return sorted({r.style_id for r in self.rows})

    def row(self, sentence_id: int, style_id: int) -> ManifestRow:
        return self._index[(sentence_id, style_id)]

    def token_ids(self, row: ManifestRow) -> List[int]:
        symbols = row.tokens.split(" ") if row.tokens else []
        return self.vocab.encode_symbols(symbols)

    def features(self, path: str) -> FeatureMatrix:
        fm = self._cache.get(path)
        if fm is None:
            fm = read_features(self.root / path)
            self._cache[path] = fm
        return fm

    def mel(self, row: ManifestRow) -> FeatureMatrix:
        return self.features(row.mel_path)

    def linear(self, row: ManifestRow) -> FeatureMatrix:
        return self.features(row.linear_path)

    def check_parallel(self) -> None:
        by_sentence: Dict[int, Dict[int, str]] = {}
        for r in self.rows:
            by_sentence.setdefault(r.sentence_id, {})[r.style_id] = r.tokens
        styles = set(self.style_ids)
        for sid, per_style in by_sentence.items():
            if set(per_style) != styles:
                raise ValueError(f"sentence {sid} missing styles {sorted(styles - set(per_style))}")
            if len(set(per_style.values())) != 1:
                raise ValueError(f"sentence {sid} has different token strings across styles")
        if len(self._index) != len(self.rows):
            raise ValueError("duplicate (sentence_id, style_id) rows")

    def subset(self, sentence_ids: Sequence[int]) -> "CorpusManifest":
        keep = set(sentence_ids)
        sub = CorpusManifest(
            [r for r in self.rows if r.sentence_id in keep], self.root, self.vocab, self.spectro, self.articulator
        )
        sub._cache = self._cache
        return sub

    def split(self, n_heldout: int) -> Tuple["CorpusManifest", "CorpusManifest"]:
        """(train, held-out) by sentence id; the last ``n_heldout`` sentences are held out."""
        ids = self.sentence_ids
        if not 0 <= n_heldout < len(ids):
            raise ValueError(f"cannot hold out {n_heldout} of {len(ids)} sentences")
        cut = len(ids) - n_heldout
        return self.subset(ids[:cut]), self.subset(ids[cut:])

    def save(self, root: Optional[Union[str, Path]] = None) -> Path:
        root = Path(root) if root is not None else self.root
        path = root / MANIFEST_NAME
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
            writer.writerow(MANIFEST_COLUMNS)
            for r in self.rows:
                writer.writerow([r.utt_id, r.sentence_id, r.style_id, r.tokens, r.mel_path, r.linear_path])
        config = {"spectro": self.spectro.to_dict()}
        if self.articulator is not None:
            config["articulator"] = self.articulator.to_dict()
        (root / CONFIG_NAME).write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self.vocab.save(root / VOCAB_NAME)
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CorpusManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        root = path.parent
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh, delimiter="\t")
            header = next(reader, None)
            if header != MANIFEST_COLUMNS:
                raise ValueError(f"{path}: unexpected header {header}")
            rows = [
                ManifestRow(u, int(sid), int(st), toks, mp, lp) for u, sid, st, toks, mp, lp in reader
            ]
        spectro, articulator = None, None
        cfg_path = root / CONFIG_NAME
        if cfg_path.exists():
            cfg = json.loads(cfg_path.read_text(encoding="utf-8"))
            spectro = SpectroConfig(**cfg["spectro"])
            if "articulator" in cfg:
                articulator = Articulator.from_dict(cfg["articulator"])
        vocab = SymbolVocabulary.load(root / VOCAB_NAME)
        return cls(rows, root, vocab, spectro, articulator)


def generate_corpus(
    n_sentences: int,
    sentence_len_range: Tuple[int, int],
    n_styles: int,
    a: Articulator,
    out_dir: Union[str, Path],
    workers: int = 1,
) -> CorpusManifest:
    """Sample sentences once, render each in every style, write features + manifest."""
    if n_styles > a.n_styles:
        raise InvalidStyle(f"articulator defines only {a.n_styles} styles")
    lo, hi = sentence_len_range
    if not 1 <= lo <= hi:
        raise ValueError("sentence_len_range must satisfy 1 <= lo <= hi")
    out_dir = Path(out_dir)
    feat_dir = out_dir / "feats"
    try:
        feat_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {feat_dir}: {exc.strerror}") from exc

    rng = np.random.default_rng(np.random.SeedSequence([a.seed, 0xC0]))
    sentences = []
    for _ in range(n_sentences):
        length = int(rng.integers(lo, hi + 1))
        sentences.append([int(k) for k in rng.integers(0, a.vocab_size, size=length)])

    jobs = [(sid, style) for sid in range(n_sentences) for style in range(n_styles)]

    def work(job):
        sid, style = job
        ids = [k + FIRST_CONTENT_ID for k in sentences[sid]] + [EOS_ID]
        mel, lin = render_utterance(ids, style, a, key=sid)
        utt = f"s{sid:05d}_e{style}"
        mel_rel, lin_rel = f"feats/{utt}.mel", f"feats/{utt}.lin"
        for rel, fm in ((mel_rel, mel), (lin_rel, lin)):
            try:
                write_features(out_dir / rel, fm)
            except OSError as exc:
                raise OSError(f"cannot write {out_dir / rel}: {exc.strerror}") from exc
        tokens = " ".join(token_symbol(k) for k in sentences[sid])
        return ManifestRow(utt, sid, style, tokens, mel_rel, lin_rel)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(work, jobs))
    else:
        rows = [work(j) for j in jobs]

    manifest = CorpusManifest(rows, out_dir, synthetic_vocabulary(a.vocab_size), a.spectro, a)
    manifest.save()
    return manifest
