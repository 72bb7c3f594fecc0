import pytest

from mtlvc.model import ModelConfig
from mtlvc.synthcorpus import Articulator, generate_corpus


def micro_model_config(vocab_size: int, **kw) -> ModelConfig:
    base = dict(
        vocab_size=vocab_size, char_embed_dim=8, style_dim=4, encoder_dim=8, attention_dim=6,
        attention_rnn_dim=8, decoder_dim=8, prenet_dims=(8, 6), text_cbhg_k=2, post_cbhg_k=2,
        cbhg_bank_channels=4, cbhg_proj_dim=6, highway_layers=1, post_dim=4, contents_hidden=5,
        style_hidden=5, dropout=0.5, max_decoder_steps=6,
    )
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("small_corpus")
    return generate_corpus(6, (2, 4), 3, Articulator.default(), root)


_ACCEPTANCE = {}


def record_acceptance(number: int, claim: str, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {claim} | {detail}"
    _ACCEPTANCE[number] = line
    print("\n" + line)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
