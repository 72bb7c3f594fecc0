"""Text front-end: Hangul syllable arithmetic and symbol vocabularies.

Each precomposed Hangul syllable expands to three symbols (onset, nucleus,
coda). Onsets and codas use the distinct Unicode conjoining-jamo blocks
(U+1100.., U+11A8..) so that the same consonant in the two positions maps to
different vocabulary entries; an empty coda is the explicit symbol ``∅``.
Whitespace becomes ``<sp>``; every other character passes through as-is.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

from .errors import OutOfRange, UnknownSymbol

SYLLABLE_BASE = 0xAC00
SYLLABLE_LAST = 0xD7A3
N_ONSET, N_NUCLEUS, N_CODA = 19, 21, 28

PAD, EOS = "<pad>", "<eos>"
PAD_ID, EOS_ID = 0, 1
SPACE = "<sp>"
NO_CODA = "∅"

_ONSET_BASE = 0x1100
_NUCLEUS_BASE = 0x1161
_CODA_BASE = 0x11A7  # coda index 0 is "no coda"


@dataclass(frozen=True)
class JamoTriple:
    onset: int
    nucleus: int
    coda: int = 0

    def symbols(self) -> Tuple[str, str, str]:
        coda = NO_CODA if self.coda == 0 else chr(_CODA_BASE + self.coda)
        return chr(_ONSET_BASE + self.onset), chr(_NUCLEUS_BASE + self.nucleus), coda


def is_syllable(ch: str) -> bool:
    return len(ch) == 1 and SYLLABLE_BASE <= ord(ch) <= SYLLABLE_LAST


def decompose_hangul(ch: str) -> Union[JamoTriple, str]:
    """Split a precomposed syllable; any other character is returned unchanged."""
    if not is_syllable(ch):
        return ch
    s = ord(ch) - SYLLABLE_BASE
    return JamoTriple(s // (N_NUCLEUS * N_CODA), (s // N_CODA) % N_NUCLEUS, s % N_CODA)


def compose_hangul(t: JamoTriple) -> str:
    if not (0 <= t.onset < N_ONSET and 0 <= t.nucleus < N_NUCLEUS and 0 <= t.coda < N_CODA):
        raise OutOfRange(f"jamo indices out of range: {t}")
    return chr(SYLLABLE_BASE + (t.onset * N_NUCLEUS + t.nucleus) * N_CODA + t.coda)


def text_to_symbols(text: str) -> List[str]:
    out: List[str] = []
    for ch in text:
        part = decompose_hangul(ch)
        if isinstance(part, JamoTriple):
            out.extend(part.symbols())
        elif ch.isspace():
            out.append(SPACE)
        else:
            out.append(ch)
    return out


class SymbolVocabulary:
    """Dense, immutable symbol <-> id mapping with PAD=0 and EOS=1."""

    def __init__(self, symbols: Iterable[str]):
        ordered = [PAD, EOS]
        for sym in symbols:
            if sym in (PAD, EOS) or sym in ordered:
                continue
            if not sym or "\n" in sym:
                raise ValueError(f"invalid symbol {sym!r}")
            ordered.append(sym)
        self._symbols: Tuple[str, ...] = tuple(ordered)
        self._index: Dict[str, int] = {s: i for i, s in enumerate(self._symbols)}

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "SymbolVocabulary":
        seen: Dict[str, None] = {}
        for text in texts:
            for sym in text_to_symbols(text):
                seen.setdefault(sym, None)
        return cls(sorted(seen))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SymbolVocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if lines[:2] != [PAD, EOS]:
            raise ValueError(f"{path}: first two lines must be {PAD!r} and {EOS!r}")
        return cls(lines[2:])

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text("\n".join(self._symbols) + "\n", encoding="utf-8")

    @property
    def symbols(self) -> Tuple[str, ...]:
        return self._symbols

    def __len__(self) -> int:
        return len(self._symbols)

    def __contains__(self, sym: str) -> bool:
        return sym in self._index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SymbolVocabulary) and self._symbols == other._symbols

    def id(self, sym: str) -> int:
        try:
            return self._index[sym]
        except KeyError:
            raise UnknownSymbol(sym) from None

    def symbol(self, idx: int) -> str:
        return self._symbols[idx]

    def encode_symbols(self, symbols: Sequence[str]) -> List[int]:
        """Map symbols to ids and append EOS."""
        return [self.id(s) for s in symbols] + [EOS_ID]

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self._symbols[i] for i in ids if i not in (PAD_ID, EOS_ID)]


def encode_text(text: str, vocab: SymbolVocabulary) -> List[int]:
    return vocab.encode_symbols(text_to_symbols(text))


def validate_tokens(ids: Sequence[int], vocab_size: int) -> None:
    if not ids or ids[-1] != EOS_ID or list(ids).count(EOS_ID) != 1:
        raise ValueError("token sequence must end with exactly one EOS")
    if any(not 0 <= i < vocab_size for i in ids):
        raise ValueError("token id outside vocabulary")
