import unicodedata

import pytest

from mtlvc.errors import OutOfRange, UnknownSymbol
from mtlvc.text import (
    EOS,
    EOS_ID,
    NO_CODA,
    PAD,
    JamoTriple,
    SymbolVocabulary,
    compose_hangul,
    decompose_hangul,
    encode_text,
    text_to_symbols,
)

ALL_SYLLABLES = [chr(c) for c in range(0xAC00, 0xD7A4)]


def nfd_triple(ch):
    """Oracle: Unicode canonical decomposition into conjoining jamo."""
    parts = unicodedata.normalize("NFD", ch)
    onset = ord(parts[0]) - 0x1100
    nucleus = ord(parts[1]) - 0x1161
    coda = ord(parts[2]) - 0x11A7 if len(parts) == 3 else 0
    return JamoTriple(onset, nucleus, coda)


def test_block_base():
    assert decompose_hangul("가") == JamoTriple(0, 0, 0)


def test_han():
    assert decompose_hangul("한") == JamoTriple(18, 0, 4)
    assert decompose_hangul("한") == nfd_triple("한")
    assert 0xAC00 + (18 * 21 + 0) * 28 + 4 == ord("한")


@pytest.mark.parametrize("ch", [" ", "a", "1", ".", "ㄱ"])
def test_non_syllables_pass_through(ch):
    assert decompose_hangul(ch) == ch


def test_compose():
    assert compose_hangul(JamoTriple(0, 0, 0)) == "가"
    assert compose_hangul(JamoTriple(18, 0, 4)) == "한"


@pytest.mark.parametrize("bad", [JamoTriple(19, 0, 0), JamoTriple(0, 21, 0), JamoTriple(0, 0, 28), JamoTriple(-1, 0, 0)])
def test_compose_out_of_range(bad):
    with pytest.raises(OutOfRange):
        compose_hangul(bad)


def test_exhaustive_round_trip_and_nfd_agreement():
    assert len(ALL_SYLLABLES) == 11172
    for ch in ALL_SYLLABLES:
        t = decompose_hangul(ch)
        assert compose_hangul(t) == ch
        assert t == nfd_triple(ch)


def test_symbols_are_conjoining_jamo():
    # onset and coda forms of the same consonant are different symbols
    on, nuc, coda = decompose_hangul("난").symbols()
    assert on == "ᄂ" and nuc == "ᅡ" and coda == "ᆫ"
    assert on != coda
    assert decompose_hangul("가").symbols()[2] == NO_CODA


def test_encode_empty_is_eos():
    v = SymbolVocabulary.from_texts(["가"])
    assert encode_text("", v) == [EOS_ID]


def test_encode_ga():
    v = SymbolVocabulary.from_texts(["가나다 한글"])
    ids = encode_text("가", v)
    assert ids == [v.id("ᄀ"), v.id("ᅡ"), v.id(NO_CODA), EOS_ID]
    assert len(set(ids)) == 4
    assert all(i >= 2 for i in ids[:-1])


def test_encode_unknown_symbol_named():
    v = SymbolVocabulary.from_texts(["가"])
    with pytest.raises(UnknownSymbol) as err:
        encode_text("가x", v)
    assert "x" in str(err.value)


def test_space_and_punctuation_kept():
    assert text_to_symbols("가 !") == ["ᄀ", "ᅡ", NO_CODA, "<sp>", "!"]


def test_vocabulary_reserved_ids():
    v = SymbolVocabulary(["b", "a", PAD, "a"])
    assert v.symbols[:2] == (PAD, EOS)
    assert v.id(PAD) == 0 and v.id(EOS) == 1
    assert len(v) == 4


def test_vocabulary_save_load_round_trip(tmp_path):
    texts = ["안녕하세요, 세계!", "감정 음성 합성"]
    v = SymbolVocabulary.from_texts(texts)
    v.save(tmp_path / "vocab.txt")
    lines = (tmp_path / "vocab.txt").read_text(encoding="utf-8").split("\n")
    assert lines[0] == "<pad>" and lines[1] == "<eos>"
    w = SymbolVocabulary.load(tmp_path / "vocab.txt")
    assert w == v
    for t in texts:
        assert encode_text(t, w) == encode_text(t, v)


def test_encode_deterministic():
    v = SymbolVocabulary.from_texts(["다람쥐 헌 쳇바퀴에 타고파"])
    assert encode_text("다람쥐", v) == encode_text("다람쥐", v)


def test_onset_and_coda_ids_disjoint():
    v = SymbolVocabulary.from_texts(ALL_SYLLABLES)
    onsets = {v.id(chr(0x1100 + i)) for i in range(19)}
    codas = {v.id(chr(0x11A7 + i)) for i in range(1, 28)} | {v.id(NO_CODA)}
    nuclei = {v.id(chr(0x1161 + i)) for i in range(21)}
    assert not onsets & codas
    assert not nuclei & (onsets | codas)
    assert len(v) == 2 + 19 + 21 + 28
