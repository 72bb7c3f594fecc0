"""``mtlvc`` command line: corpus synthesis, preprocessing, training,
inference and evaluation.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import re
import sys
import wave
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .config import RunConfig, load_config
from .errors import AllSilent, ConfigError, FeatureFormatError, MtlvcError, TooShort, UnknownSymbol

log = logging.getLogger("mtlvc")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
LOCK_NAME = ".lock"
CKPT_PATTERN = re.compile(r"ckpt_(\d+)\.bin$")


class UsageError(Exception):
    """Bad combination of arguments or inputs of the wrong kind."""


class RunDirLocked(MtlvcError):
    pass


@contextlib.contextmanager
def run_dir_lock(run_dir: Path) -> Iterator[Path]:
    """Single-writer lock: an exclusively created file holding our pid."""
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise RunDirLocked(f"{run_dir} is in use (remove {lock} if no other process owns it)") from exc
    with os.fdopen(fd, "w") as fh:
        fh.write(f"{os.getpid()}\n")
    try:
        yield lock
    finally:
        lock.unlink(missing_ok=True)


def latest_checkpoint(run_dir: Path) -> Optional[Path]:
    found = []
    for p in run_dir.glob("ckpt_*.bin"):
        m = CKPT_PATTERN.search(p.name)
        if m:
            found.append((int(m.group(1)), p))
    return max(found)[1] if found else None


def _config(args: argparse.Namespace, overrides: Optional[Dict[str, Dict]] = None) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    return cfg.with_overrides(overrides) if overrides else cfg


# --- synth-corpus ------------------------------------------------------------------


def cmd_synth_corpus(args: argparse.Namespace) -> int:
    from .synthcorpus import generate_corpus

    cfg = _config(
        args,
        {"articulator": {"n_sentences": args.n_sentences, "n_styles": args.n_styles, "seed": args.seed}},
    )
    a = cfg.articulator
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    manifest = generate_corpus(a.n_sentences, a.sentence_len, a.n_styles, a.build(cfg.dsp.spectro), out)
    cfg.write(out)
    print(f"wrote {len(manifest)} utterances ({a.n_sentences} sentences x {a.n_styles} styles) to {out}")
    return EXIT_OK


# --- preprocess --------------------------------------------------------------------


def read_wav(path: Path):
    """16-bit PCM mono WAV -> Waveform in [-1, 1)."""
    from .dsp import Waveform

    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise ValueError(f"{wf.getnchannels()} channels; only mono is supported")
        if wf.getsampwidth() != 2:
            raise ValueError(f"{8 * wf.getsampwidth()}-bit samples; only 16-bit PCM is supported")
        if wf.getcomptype() != "NONE":
            raise ValueError(f"compressed WAV ({wf.getcomptype()})")
        rate = wf.getframerate()
        data = wf.readframes(wf.getnframes())
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path: Path, samples: np.ndarray, rate: int) -> None:
    peak = float(np.max(np.abs(samples))) if len(samples) else 0.0
    if peak > 1.0:
        samples = samples / peak
    pcm = np.round(np.clip(samples, -1.0, 32767 / 32768) * 32768).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(rate)
        wf.writeframes(pcm.tobytes())


def _read_metadata(path: Path) -> Dict[str, Tuple[str, int]]:
    """``utt_id<TAB>text<TAB>style`` rows (optional header) -> {utt_id: (text, style)}."""
    meta: Dict[str, Tuple[str, int]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for n, row in enumerate(csv.reader(fh, delimiter="\t"), 1):
            if not row or (n == 1 and row[:3] == ["utt_id", "text", "style"]):
                continue
            if len(row) != 3:
                raise UsageError(f"{path}:{n}: expected 3 tab-separated columns, got {len(row)}")
            try:
                meta[row[0]] = (row[1], int(row[2]))
            except ValueError as exc:
                raise UsageError(f"{path}:{n}: style must be an integer") from exc
    return meta


def cmd_preprocess(args: argparse.Namespace) -> int:
    from .dsp import extract_features, resample, trim_silence
    from .features import write_features
    from .synthcorpus import CorpusManifest, ManifestRow
    from .text import SymbolVocabulary, text_to_symbols

    cfg = _config(args)
    wav_dir = Path(args.wav_dir)
    if not wav_dir.is_dir():
        raise UsageError(f"--wav-dir {wav_dir} is not a directory")
    meta = _read_metadata(Path(args.manifest)) if args.manifest else None
    out = Path(args.out) if args.out else wav_dir.parent / f"{wav_dir.name}_features"
    (out / "feats").mkdir(parents=True, exist_ok=True)

    wavs = sorted(wav_dir.glob("*.wav"))
    if not wavs:
        log.warning("no .wav files in %s; writing an empty manifest", wav_dir)
    spectro = cfg.dsp.spectro
    sentence_ids: Dict[str, int] = {}
    rows: List[ManifestRow] = []
    symbol_lists: List[List[str]] = []
    silent, failed = 0, []
    for path in wavs:
        utt = path.stem
        text, style = ("", 0)
        if meta is not None:
            if utt not in meta:
                log.warning("%s: no metadata row, skipped", path.name)
                failed.append(path.name)
                continue
            text, style = meta[utt]
        try:
            w = read_wav(path)
            w = trim_silence(w, cfg.dsp.trim_threshold_db, cfg.dsp.trim_min_voiced)
            w = resample(w, spectro.sample_rate)
            mel, lin = extract_features(w, spectro)
        except AllSilent:
            log.warning("%s: silent, skipped", path.name)
            silent += 1
            continue
        except (wave.Error, EOFError, ValueError, TooShort) as exc:
            log.error("%s: %s", path.name, exc)
            failed.append(path.name)
            continue
        symbols = text_to_symbols(text)
        # without metadata every file is its own sentence
        sid = sentence_ids.setdefault(text if meta is not None else utt, len(sentence_ids))
        mel_rel, lin_rel = f"feats/{utt}.mel", f"feats/{utt}.lin"
        write_features(out / mel_rel, mel)
        write_features(out / lin_rel, lin)
        rows.append(ManifestRow(utt, sid, style, " ".join(symbols), mel_rel, lin_rel))
        symbol_lists.append(symbols)

    vocab = SymbolVocabulary(s for syms in symbol_lists for s in syms)
    CorpusManifest(rows, out, vocab, spectro).save()
    cfg.write(out)
    print(f"processed {len(rows)} of {len(wavs)} files into {out}; skipped {silent} silent, {len(failed)} failed")
    if failed:
        log.warning("failed files: %s", ", ".join(failed))
        if args.strict:
            return EXIT_FAILURE
    return EXIT_OK


# --- train --------------------------------------------------------------------------


def _load_manifest(path: str):
    from .synthcorpus import CorpusManifest

    p = Path(path)
    if not (p / "manifest.tsv").exists() and not p.is_file():
        raise UsageError(f"manifest not found: {p}")
    return CorpusManifest.load(p)


def _training_split(manifest, n_heldout: int):
    if 0 < n_heldout < len(manifest.sentence_ids):
        return manifest.split(n_heldout)
    return manifest, None


def cmd_train(args: argparse.Namespace) -> int:
    from .training import Trainer

    cfg = _config(
        args,
        {"training": {"p_vc": args.p_vc, "total_steps": args.steps, "seed": args.seed, "batch_size": args.batch_size}},
    )
    manifest = _load_manifest(args.manifest)
    train_set, _ = _training_split(manifest, cfg.evaluation.n_heldout)
    model_cfg = cfg.model
    if model_cfg.vocab_size < len(manifest.vocab):
        model_cfg = cfg.with_overrides({"model": {"vocab_size": len(manifest.vocab)}}).model
    run_dir = Path(args.run_dir)
    with run_dir_lock(run_dir):
        ckpt = latest_checkpoint(run_dir) if args.resume else None
        if ckpt is not None:
            trainer = Trainer.resume(ckpt, train_set, run_dir, total_steps=cfg.training.total_steps)
            log.info("resumed from %s at step %d", ckpt.name, trainer.step)
        else:
            if args.resume:
                log.warning("no checkpoint in %s; starting fresh", run_dir)
            trainer = Trainer(train_set, cfg.training, model_cfg, run_dir)
        cfg.with_overrides({"model": model_cfg.to_dict()}).write(run_dir)
        trainer.run()
        final = trainer.save()
    print(f"trained to step {trainer.step}; final checkpoint {final}")
    return EXIT_OK


# --- infer --------------------------------------------------------------------------


def _is_feature_file(path: Path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == b"MTLF"


def _read_token_file(path: Path, vocab) -> List[int]:
    symbols = path.read_text(encoding="utf-8").split()
    return vocab.encode_symbols(symbols)


def cmd_infer(args: argparse.Namespace) -> int:
    from .checkpoint import load_checkpoint
    from .dsp import griffin_lim
    from .evaluation import synthesize
    from .features import FeatureKind, FeatureMatrix, read_features, write_features
    from .model import Task
    from .text import SymbolVocabulary

    task = Task(args.task)
    inp, ref_path = Path(args.input), Path(args.style_ref)
    for p in (inp, ref_path):
        if not p.is_file():
            raise UsageError(f"no such file: {p}")
    is_feat = _is_feature_file(inp)
    if task is Task.VC and not is_feat:
        raise UsageError(f"--task vc needs a mel feature file, but {inp} is a token file")
    if task is Task.TTS and is_feat:
        raise UsageError(f"--task tts needs a token file, but {inp} is a feature file")
    if not _is_feature_file(ref_path):
        raise UsageError(f"--style-ref {ref_path} is not a feature file")
    ref = read_features(ref_path)
    if ref.kind != FeatureKind.MEL:
        raise UsageError("--style-ref must be a mel feature file")

    ckpt = load_checkpoint(args.ckpt)
    model = ckpt.build_model()
    if task is Task.VC:
        x = read_features(inp)
        if x.kind != FeatureKind.MEL:
            raise UsageError(f"--task vc needs a mel feature file, but {inp} holds linear features")
        linguistic = x.values
    else:
        if not args.vocab:
            raise UsageError("--task tts needs --vocab")
        vocab = SymbolVocabulary.load(args.vocab)
        try:
            linguistic = np.asarray(_read_token_file(inp, vocab), dtype=np.int64)
        except UnknownSymbol as exc:
            raise UsageError(f"{inp}: {exc}") from exc
    (result,) = synthesize(model, task, [linguistic], [ref.values], max_steps=args.max_steps)

    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mel = FeatureMatrix(np.clip(result.mel, 0.0, 1.0), FeatureKind.MEL, cfg.dsp.spectro)
    lin = FeatureMatrix(np.clip(result.linear, 0.0, 1.0), FeatureKind.LINEAR, cfg.dsp.spectro)
    write_features(out / "output.mel", mel)
    write_features(out / "output.lin", lin)
    written = ["output.mel", "output.lin"]
    if args.griffin_lim:
        if lin.n_bins != cfg.dsp.spectro.n_freqs:
            raise UsageError(f"linear output has {lin.n_bins} bins; Griffin-Lim needs {cfg.dsp.spectro.n_freqs}")
        w = griffin_lim(lin, iters=cfg.dsp.griffin_lim_iters, config=cfg.dsp.spectro)
        write_wav(out / "output.wav", w.samples, w.sample_rate)
        written.append("output.wav")
    if result.truncated:
        log.warning("decoder hit the step limit without stopping")
    print(f"wrote {', '.join(written)} ({len(result.mel)} frames) to {out}")
    return EXIT_OK


# --- evaluation ---------------------------------------------------------------------


def _eval_inputs(args: argparse.Namespace):
    cfg = _config(args)
    manifest = _load_manifest(args.manifest)
    if manifest.articulator is None:
        raise UsageError(f"{args.manifest} has no articulator snapshot; oracle decoding needs a synthetic corpus")
    train_set, heldout = _training_split(manifest, cfg.evaluation.n_heldout)
    return cfg, manifest, train_set, heldout or manifest


def _parse_ckpt_specs(specs: Sequence[str]) -> List[Tuple[str, Path]]:
    from .evaluation import VARIANTS

    parsed = []
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep or name not in VARIANTS:
            raise UsageError(f"--ckpt expects VARIANT=PATH with VARIANT in {', '.join(VARIANTS)}; got {spec!r}")
        parsed.append((name, Path(path)))
    return parsed


def cmd_eval_ter(args: argparse.Namespace) -> int:
    from .checkpoint import load_checkpoint
    from .evaluation import VARIANTS, eval_variant, write_ter_table

    specs = _parse_ckpt_specs(args.ckpt)
    cfg, manifest, train_set, heldout = _eval_inputs(args)
    reports = []
    for name, path in specs:
        model = load_checkpoint(path).build_model()
        reports.append(
            eval_variant(
                model,
                heldout,
                VARIANTS[name],
                manifest.articulator,
                style_manifest=train_set,
                style_ref_sentence=cfg.evaluation.style_ref_sentence,
                batch_size=cfg.evaluation.batch_size,
            )
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ter_table(out / "ter.json", reports, {"checkpoints": {n: str(p) for n, p in specs}})
    with open(out / "ter.tsv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["variant", "mean_ter", "pooled_ter", "terminated_fraction", "style_accuracy"])
        for r in reports:
            writer.writerow([r.variant, f"{r.mean_ter:.4f}", f"{r.pooled_ter:.4f}",
                             f"{r.terminated_fraction:.3f}", f"{r.style_accuracy:.3f}"])
    cfg.write(out)
    for r in reports:
        print(f"{r.variant:8s} TER {100 * r.mean_ter:6.2f}%")
    return EXIT_OK


def cmd_eval_style(args: argparse.Namespace) -> int:
    from .checkpoint import load_checkpoint
    from .evaluation import style_confusion

    cfg = _config(args, {"evaluation": {"n_per_style": args.n_per_style}})
    manifest = _load_manifest(args.manifest)
    model = load_checkpoint(args.ckpt).build_model()
    cm = style_confusion(model, manifest, cfg.evaluation.n_per_style, seed=cfg.training.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, png_path = cm.save(out)
    cfg.write(out)
    print(f"diagonal margin {cm.diagonal_margin:.3f}; wrote {csv_path.name}, {png_path.name}")
    return EXIT_OK


def cmd_plot_grid(args: argparse.Namespace) -> int:
    from .checkpoint import load_checkpoint
    from .evaluation import dump_conversion_grid

    cfg = _config(args)
    manifest = _load_manifest(args.manifest)
    if (args.sentence, args.source_style) not in {(r.sentence_id, r.style_id) for r in manifest.rows}:
        raise UsageError(f"no utterance for sentence {args.sentence} in style {args.source_style}")
    model = load_checkpoint(args.ckpt).build_model()
    grid = dump_conversion_grid(model, manifest, (args.sentence, args.source_style), args.out)
    cfg.write(args.out)
    print(f"wrote {len(grid.rows)} rows to {args.out}")
    return EXIT_OK


# --- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtlvc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-corpus", help="render a synthetic parallel corpus")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--n-sentences", type=int)
    s.add_argument("--n-styles", type=int)
    s.add_argument("--seed", type=int, help="articulator seed")
    s.set_defaults(func=cmd_synth_corpus)

    s = sub.add_parser("preprocess", help="WAV directory -> feature files + manifest")
    s.add_argument("--wav-dir", required=True)
    s.add_argument("--manifest", help="TSV of utt_id, text, style")
    s.add_argument("--config")
    s.add_argument("--out", help="output directory (default: <wav-dir>_features)")
    s.add_argument("--strict", action="store_true", help="exit nonzero when any file fails")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train one model variant")
    s.add_argument("--config")
    s.add_argument("--manifest", required=True)
    s.add_argument("--run-dir", required=True)
    s.add_argument("--p-vc", type=float, help="probability of a VC batch (1: VC, 0.5: VCTTS, 0: TTS)")
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--resume", action="store_true", help="continue from the newest checkpoint in --run-dir")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="convert or synthesize one utterance")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--task", choices=["vc", "tts"], required=True)
    s.add_argument("--input", required=True, help="mel feature file (vc) or token file (tts)")
    s.add_argument("--style-ref", required=True, help="mel feature file of the reference style")
    s.add_argument("--out", required=True)
    s.add_argument("--vocab", help="vocabulary file (tts)")
    s.add_argument("--config")
    s.add_argument("--max-steps", type=int)
    s.add_argument("--griffin-lim", action="store_true", help="also write output.wav")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval-ter", help="token error rate table over variant checkpoints")
    s.add_argument("--ckpt", action="append", required=True, metavar="VARIANT=PATH")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval_ter)

    s = sub.add_parser("eval-style", help="style-vector cosine confusion matrix")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--config")
    s.add_argument("--n-per-style", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval_style)

    s = sub.add_parser("plot-grid", help="one source converted into every style")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--sentence", type=int, required=True)
    s.add_argument("--source-style", type=int, required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot_grid)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError, FeatureFormatError) as exc:
        print(f"mtlvc {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MtlvcError, OSError, ValueError, KeyError) as exc:
        print(f"mtlvc {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
