import filecmp
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from mtlvc.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main, write_wav
from mtlvc.config import RunConfig, load_config
from mtlvc.errors import ConfigError
from mtlvc.features import FeatureKind, read_features
from mtlvc.training import read_metrics

TINY = {
    "articulator": {"n_sentences": 5, "sentence_len": [2, 3], "n_styles": 3},
    "model": {
        "char_embed_dim": 8, "style_dim": 4, "encoder_dim": 8, "attention_dim": 6, "attention_rnn_dim": 8,
        "decoder_dim": 8, "prenet_dims": [8, 6], "text_cbhg_k": 2, "post_cbhg_k": 2, "cbhg_bank_channels": 4,
        "cbhg_proj_dim": 6, "highway_layers": 1, "post_dim": 4, "contents_hidden": 5, "style_hidden": 5,
        "max_decoder_steps": 4,
    },
    "training": {"batch_size": 3, "total_steps": 4, "checkpoint_interval": 2},
    "evaluation": {"n_heldout": 2, "n_per_style": 3},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    assert main(["synth-corpus", "--config", str(cfg), "--out", str(root / "corpus")]) == EXIT_OK
    assert main(["train", "--config", str(cfg), "--manifest", str(root / "corpus"),
                 "--run-dir", str(root / "run"), "--p-vc", "0.5"]) == EXIT_OK
    return root


# --- config -----------------------------------------------------------------------


def test_config_defaults():
    cfg = load_config(env={})
    assert cfg.model.reduction_factor == 5
    assert cfg.training.learning_rate == 1e-3
    assert cfg.dsp.spectro.n_mels == 80


def test_config_rejects_unknown_keys(tmp_path):
    for doc in ({"modle": {}}, {"model": {"hidden": 3}}, {"dsp": {"window": 1}}):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump(doc))
        with pytest.raises(ConfigError):
            load_config(p, env={})


def test_config_bad_value(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"training": {"p_vc": 3}}))
    with pytest.raises(ConfigError):
        load_config(p, env={})


def test_config_round_trip(tmp_path):
    cfg = RunConfig.from_dict(TINY)
    cfg.write(tmp_path)
    again = load_config(tmp_path / "config.yaml", env={})
    assert again.to_dict() == cfg.to_dict()


def test_seed_precedence(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"training": {"seed": 3}}))
    assert load_config(p, env={}).training.seed == 3
    assert load_config(p, env={"MTLVC_SEED": "11"}).training.seed == 11
    flagged = load_config(p, env={"MTLVC_SEED": "11"}).with_overrides({"training": {"seed": 5}})
    assert flagged.training.seed == 5
    with pytest.raises(ConfigError):
        load_config(p, env={"MTLVC_SEED": "abc"})


# --- synth-corpus -----------------------------------------------------------------


def test_synth_corpus_layout(workspace):
    corpus = workspace / "corpus"
    rows = (corpus / "manifest.tsv").read_text().strip().split("\n")[1:]
    assert len(rows) == 5 * 3
    assert len(list((corpus / "feats").iterdir())) == 2 * 5 * 3
    assert (corpus / "config.yaml").exists()


def test_synth_corpus_deterministic(workspace, tmp_path):
    assert main(["synth-corpus", "--config", str(workspace / "tiny.yaml"), "--out", str(tmp_path)]) == EXIT_OK
    cmp = filecmp.dircmp(workspace / "corpus", tmp_path)
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    feats = filecmp.cmpfiles(workspace / "corpus" / "feats", tmp_path / "feats",
                             os.listdir(tmp_path / "feats"), shallow=False)
    assert not feats[1] and not feats[2]


def test_synth_corpus_unwritable(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    target = blocker / "corpus"
    assert main(["synth-corpus", "--out", str(target)]) == EXIT_FAILURE
    assert str(target) in capsys.readouterr().err


def test_flag_overrides_file(tmp_path, workspace):
    assert main(["synth-corpus", "--config", str(workspace / "tiny.yaml"), "--out", str(tmp_path),
                 "--n-sentences", "2"]) == EXIT_OK
    assert len((tmp_path / "manifest.tsv").read_text().strip().split("\n")) == 1 + 2 * 3
    echoed = yaml.safe_load((tmp_path / "config.yaml").read_text())
    assert echoed["articulator"]["n_sentences"] == 2


# --- train ------------------------------------------------------------------------


def test_train_outputs(workspace):
    run = workspace / "run"
    assert sorted(p.name for p in run.glob("ckpt_*.bin")) == ["ckpt_2.bin", "ckpt_4.bin"]
    assert not (run / ".lock").exists()
    echoed = yaml.safe_load((run / "config.yaml").read_text())
    assert echoed["training"]["p_vc"] == 0.5
    assert len(read_metrics(run / "metrics.tsv")) == 4


def test_train_resume_reproduces(workspace, tmp_path):
    cfg = str(workspace / "tiny.yaml")
    corpus = str(workspace / "corpus")
    run = tmp_path / "run"
    assert main(["train", "--config", cfg, "--manifest", corpus, "--run-dir", str(run),
                 "--p-vc", "0.5", "--steps", "2"]) == EXIT_OK
    assert main(["train", "--config", cfg, "--manifest", corpus, "--run-dir", str(run),
                 "--p-vc", "0.5", "--steps", "4", "--resume"]) == EXIT_OK
    a = [r["loss"] for r in read_metrics(run / "metrics.tsv")]
    b = [r["loss"] for r in read_metrics(workspace / "run" / "metrics.tsv")]
    assert a == b


def test_train_missing_manifest(tmp_path):
    assert main(["train", "--manifest", str(tmp_path / "nope"), "--run-dir", str(tmp_path / "r")]) == EXIT_USAGE


def test_train_locked_run_dir(workspace, tmp_path):
    (tmp_path / ".lock").write_text("1\n")
    code = main(["train", "--config", str(workspace / "tiny.yaml"), "--manifest", str(workspace / "corpus"),
                 "--run-dir", str(tmp_path)])
    assert code == EXIT_FAILURE


# --- infer ------------------------------------------------------------------------


def test_infer_vc_and_tts(workspace, tmp_path):
    ckpt = str(workspace / "run" / "ckpt_4.bin")
    src = str(workspace / "corpus" / "feats" / "s00000_e0.mel")
    ref = str(workspace / "corpus" / "feats" / "s00001_e2.mel")
    assert main(["infer", "--ckpt", ckpt, "--task", "vc", "--input", src, "--style-ref", ref,
                 "--out", str(tmp_path / "vc")]) == EXIT_OK
    assert read_features(tmp_path / "vc" / "output.mel").kind == FeatureKind.MEL
    assert read_features(tmp_path / "vc" / "output.lin").n_bins == 1025
    tokens = tmp_path / "tokens.txt"
    tokens.write_text("t03 t07\n")
    assert main(["infer", "--ckpt", ckpt, "--task", "tts", "--input", str(tokens), "--style-ref", ref,
                 "--vocab", str(workspace / "corpus" / "vocab.txt"), "--out", str(tmp_path / "tts"),
                 "--griffin-lim"]) == EXIT_OK
    assert (tmp_path / "tts" / "output.wav").stat().st_size > 44


def test_infer_task_mismatch(workspace, tmp_path, capsys):
    ckpt = str(workspace / "run" / "ckpt_4.bin")
    ref = str(workspace / "corpus" / "feats" / "s00001_e2.mel")
    tokens = tmp_path / "tokens.txt"
    tokens.write_text("t03 t07\n")
    code = main(["infer", "--ckpt", ckpt, "--task", "vc", "--input", str(tokens), "--style-ref", ref,
                 "--out", str(tmp_path / "o")])
    assert code == EXIT_USAGE
    assert "token file" in capsys.readouterr().err
    code = main(["infer", "--ckpt", ckpt, "--task", "tts", "--input", ref, "--style-ref", ref,
                 "--vocab", str(workspace / "corpus" / "vocab.txt"), "--out", str(tmp_path / "o")])
    assert code == EXIT_USAGE


def test_infer_unknown_token(workspace, tmp_path):
    tokens = tmp_path / "tokens.txt"
    tokens.write_text("t03 zz\n")
    code = main(["infer", "--ckpt", str(workspace / "run" / "ckpt_4.bin"), "--task", "tts", "--input",
                 str(tokens), "--style-ref", str(workspace / "corpus" / "feats" / "s00001_e2.mel"),
                 "--vocab", str(workspace / "corpus" / "vocab.txt"), "--out", str(tmp_path / "o")])
    assert code == EXIT_USAGE


# --- evaluation -------------------------------------------------------------------


def test_eval_ter_four_rows(workspace, tmp_path):
    ckpt = workspace / "run" / "ckpt_4.bin"
    args = ["eval-ter", "--config", str(workspace / "tiny.yaml"), "--manifest", str(workspace / "corpus"),
            "--out", str(tmp_path)]
    for name in ("VC", "VCTTS-V", "VCTTS-T", "TTS"):
        args += ["--ckpt", f"{name}={ckpt}"]
    assert main(args) == EXIT_OK
    lines = (tmp_path / "ter.tsv").read_text().strip().split("\n")
    assert lines[0].split("\t")[:2] == ["variant", "mean_ter"]
    assert [l.split("\t")[0] for l in lines[1:]] == ["VC", "VCTTS-V", "VCTTS-T", "TTS"]
    assert list(json.loads((tmp_path / "ter.json").read_text())["table"]) == ["VC", "VCTTS-V", "VCTTS-T", "TTS"]


def test_eval_ter_bad_spec(workspace, tmp_path):
    code = main(["eval-ter", "--manifest", str(workspace / "corpus"), "--out", str(tmp_path),
                 "--ckpt", "XYZ=whatever"])
    assert code == EXIT_USAGE


def test_eval_style_matrix(workspace, tmp_path):
    assert main(["eval-style", "--config", str(workspace / "tiny.yaml"), "--ckpt",
                 str(workspace / "run" / "ckpt_4.bin"), "--manifest", str(workspace / "corpus"),
                 "--out", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "style_confusion.csv").read_text().strip().split("\n")
    assert len(lines) == 4 and all(len(l.split(",")) == 4 for l in lines)
    assert (tmp_path / "style_confusion.png").exists()


def test_plot_grid_rows(workspace, tmp_path):
    assert main(["plot-grid", "--ckpt", str(workspace / "run" / "ckpt_4.bin"), "--manifest",
                 str(workspace / "corpus"), "--sentence", "0", "--source-style", "1", "--out", str(tmp_path)]) == EXIT_OK
    counts = json.loads((tmp_path / "frame_counts.json").read_text())
    assert len(counts) == 3 + 1
    assert main(["plot-grid", "--ckpt", str(workspace / "run" / "ckpt_4.bin"), "--manifest",
                 str(workspace / "corpus"), "--sentence", "99", "--source-style", "1",
                 "--out", str(tmp_path)]) == EXIT_USAGE


# --- preprocess -------------------------------------------------------------------


def test_preprocess_tone_gives_77_frames(tmp_path):
    wavs = tmp_path / "wavs"
    wavs.mkdir()
    t = np.arange(44100) / 44100
    write_wav(wavs / "tone.wav", 0.5 * np.sin(2 * np.pi * 440 * t), 44100)
    assert main(["preprocess", "--wav-dir", str(wavs), "--out", str(tmp_path / "out")]) == EXIT_OK
    mel = read_features(tmp_path / "out" / "feats" / "tone.mel")
    assert mel.n_frames == 77 and mel.n_bins == 80


def test_preprocess_with_metadata(tmp_path):
    wavs = tmp_path / "wavs"
    wavs.mkdir()
    t = np.arange(16000) / 16000
    for name in ("a", "b"):
        write_wav(wavs / f"{name}.wav", 0.3 * np.sin(2 * np.pi * 300 * t), 16000)
    meta = tmp_path / "meta.tsv"
    meta.write_text("utt_id\ttext\tstyle\na\t가나\t0\nb\t가나\t1\n", encoding="utf-8")
    assert main(["preprocess", "--wav-dir", str(wavs), "--manifest", str(meta),
                 "--out", str(tmp_path / "out")]) == EXIT_OK
    from mtlvc.synthcorpus import CorpusManifest

    m = CorpusManifest.load(tmp_path / "out")
    assert [(r.sentence_id, r.style_id) for r in m.rows] == [(0, 0), (0, 1)]
    m.check_parallel()
    assert len(m.token_ids(m.rows[0])) == 7


def test_preprocess_empty_dir(tmp_path, caplog):
    (tmp_path / "wavs").mkdir()
    assert main(["preprocess", "--wav-dir", str(tmp_path / "wavs"), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert (tmp_path / "o" / "manifest.tsv").read_text().strip().count("\n") == 0
    assert "no .wav files" in caplog.text


def test_preprocess_corrupt_and_silent(tmp_path, caplog):
    wavs = tmp_path / "wavs"
    wavs.mkdir()
    (wavs / "broken.wav").write_bytes(b"RIFF\x00\x00")
    write_wav(wavs / "quiet.wav", np.zeros(16000), 16000)
    write_wav(wavs / "ok.wav", 0.3 * np.sin(np.arange(16000) * 0.1), 16000)
    args = ["preprocess", "--wav-dir", str(wavs), "--out", str(tmp_path / "o")]
    assert main(args) == EXIT_OK
    assert "broken.wav" in caplog.text
    assert main(args + ["--strict"]) == EXIT_FAILURE
    rows = (tmp_path / "o" / "manifest.tsv").read_text().strip().split("\n")
    assert len(rows) == 2


def test_preprocess_without_metadata_keeps_rows_unique(tmp_path):
    wavs = tmp_path / "wavs"
    wavs.mkdir()
    for i in range(3):
        write_wav(wavs / f"u{i}.wav", 0.3 * np.sin(np.arange(8000) * 0.05 * (i + 1)), 16000)
    assert main(["preprocess", "--wav-dir", str(wavs), "--out", str(tmp_path / "o")]) == EXIT_OK
    from mtlvc.synthcorpus import CorpusManifest

    m = CorpusManifest.load(tmp_path / "o")
    assert sorted((r.sentence_id, r.style_id) for r in m.rows) == [(0, 0), (1, 0), (2, 0)]


def test_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["no-such-command"]) == EXIT_USAGE
    assert main(["infer", "--task", "xx"]) == EXIT_USAGE


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mtlvc.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for name in ("synth-corpus", "preprocess", "train", "infer", "eval-ter", "eval-style", "plot-grid"):
        assert name in proc.stdout
