import json

import numpy as np
import pytest
import torch

from conftest import micro_model_config
from mtlvc.checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from mtlvc.errors import CheckpointError
from mtlvc.model import MultitaskVCTTS


def _model(seed=0, **kw):
    torch.manual_seed(seed)
    return MultitaskVCTTS(micro_model_config(12, **kw))


def test_round_trip_parameters(tmp_path):
    m = _model()
    path = save_checkpoint(tmp_path / "ckpt_5.bin", m, step=5, extra={"note": "x"})
    ck = load_checkpoint(path)
    assert ck.step == 5
    assert ck.extra == {"note": "x"}
    assert ck.model_config == m.cfg
    restored = ck.build_model()
    for (n1, p1), (n2, p2) in zip(m.named_parameters(), restored.named_parameters()):
        assert n1 == n2 and torch.equal(p1, p2)
    assert not restored.training


def test_archive_layout(tmp_path):
    m = _model()
    opt = torch.optim.Adam(m.parameters())
    m.decoder.out.bias.sum().backward()
    opt.step()
    path = save_checkpoint(tmp_path / "c.bin", m, opt, step=1, torch_rng=torch.get_rng_state())
    with np.load(path) as z:
        names = set(z.files)
        meta = json.loads(z["meta"].tobytes())
    assert meta["format_version"] == FORMAT_VERSION and meta["step"] == 1
    assert {f"param/{n}" for n, _ in m.named_parameters()} <= names
    assert "adam_m/decoder.out.bias" in names and "adam_v/decoder.out.bias" in names
    assert "torch_rng" in names
    assert not (tmp_path / "c.bin.tmp").exists()


def test_optimizer_state_round_trip(tmp_path):
    m = _model()
    opt = torch.optim.Adam(m.parameters(), lr=1e-3)
    for _ in range(2):
        opt.zero_grad()
        m.post.out.weight.square().sum().backward()
        opt.step()
    path = save_checkpoint(tmp_path / "c.bin", m, opt, step=2)
    ck = load_checkpoint(path)
    m2 = ck.build_model()
    opt2 = torch.optim.Adam(m2.parameters(), lr=1e-3)
    ck.restore_optimizer(m2, opt2)
    for opt_ in (opt, opt2):
        opt_.zero_grad()
    m.post.out.weight.square().sum().backward()
    m2.post.out.weight.square().sum().backward()
    opt.step()
    opt2.step()
    assert torch.equal(m.post.out.weight, m2.post.out.weight)


def test_strict_restore_rejects_mismatch(tmp_path):
    path = save_checkpoint(tmp_path / "c.bin", _model())
    ck = load_checkpoint(path)
    with pytest.raises(CheckpointError):
        ck.restore_model(MultitaskVCTTS(micro_model_config(12, decoder_dim=10)))
    with pytest.raises(CheckpointError):
        ck.restore_model(MultitaskVCTTS(micro_model_config(12, highway_layers=2)))


def test_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    np.savez(tmp_path / "nometa.npz", x=np.zeros(2))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nometa.npz")


def test_rng_state_round_trip(tmp_path):
    torch.manual_seed(3)
    state = torch.get_rng_state()
    expected = torch.rand(4)
    path = save_checkpoint(tmp_path / "c.bin", _model(), torch_rng=state)
    torch.set_rng_state(load_checkpoint(path).torch_rng())
    assert torch.equal(torch.rand(4), expected)
