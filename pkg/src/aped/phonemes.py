"""Phoneme symbol space and sequence types.

The inventory is the 39-symbol ARPAbet set (no stress markers) plus the three
special tags SOS/EOS/PAD, 42 tokens total. Index order is fixed: phonemes in
the list below at indices 0..38, then SOS=39, EOS=40, PAD=41.
"""

from __future__ import annotations

from dataclasses import dataclass, field

ARPABET_39 = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH",
    "EH", "ER", "EY", "F", "G", "HH", "IH", "IY", "JH", "K",
    "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH",
    "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
]

SOS_TOKEN = "<SOS>"
EOS_TOKEN = "<EOS>"
PAD_TOKEN = "<PAD>"


class PhonemeError(ValueError):
    """Raised for unknown tokens, bad indices, or empty sequences."""


@dataclass(frozen=True)
class PhonemeInventory:
    """Bijective token-name <-> index mapping over 39 phonemes + SOS/EOS/PAD."""

    symbols: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.symbols) != 42:
            raise PhonemeError(f"inventory must hold 42 tokens, got {len(self.symbols)}")
        if len(set(self.symbols)) != len(self.symbols):
            raise PhonemeError("inventory tokens must be unique")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def n_phonemes(self) -> int:
        return 39

    @property
    def sos(self) -> int:
        return self._index[SOS_TOKEN]

    @property
    def eos(self) -> int:
        return self._index[EOS_TOKEN]

    @property
    def pad(self) -> int:
        return self._index[PAD_TOKEN]

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise PhonemeError(f"unknown token {token!r}") from None

    def name(self, idx: int) -> str:
        if not 0 <= idx < len(self.symbols):
            raise PhonemeError(f"index {idx} out of range [0, {len(self.symbols)})")
        return self.symbols[idx]

    def is_special(self, idx: int) -> bool:
        return idx >= self.n_phonemes

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for sym in self.symbols:
                f.write(sym + "\n")

    @classmethod
    def load(cls, path) -> "PhonemeInventory":
        with open(path, "r", encoding="utf-8") as f:
            symbols = tuple(line.strip() for line in f if line.strip())
        return cls(symbols)


def default_inventory() -> PhonemeInventory:
    return PhonemeInventory(tuple(ARPABET_39) + (SOS_TOKEN, EOS_TOKEN, PAD_TOKEN))


@dataclass(frozen=True)
class PhonemeSequence:
    """Sequence of inventory indices; kind is target/canonical/recognized."""

    ids: tuple[int, ...]
    kind: str = "target"

    KINDS = ("target", "canonical", "recognized")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise PhonemeError(f"kind must be one of {self.KINDS}, got {self.kind!r}")
        # recognized may be empty: a decoder can emit EOS immediately
        if len(self.ids) == 0 and self.kind != "recognized":
            raise PhonemeError("phoneme sequence must be nonempty")

    def __len__(self) -> int:
        return len(self.ids)

    def validate(self, inventory: PhonemeInventory) -> None:
        for i, idx in enumerate(self.ids):
            if not 0 <= idx < inventory.size:
                raise PhonemeError(f"index {idx} at position {i + 1} out of range")
            if self.kind in ("target", "canonical") and inventory.is_special(idx):
                raise PhonemeError(
                    f"{self.kind} sequence may not contain special token "
                    f"{inventory.name(idx)} (position {i + 1})"
                )


@dataclass(frozen=True)
class AccentLabel:
    """One of 6 accent categories."""

    id: int

    N_ACCENTS = 6

    def __post_init__(self):
        if not 0 <= self.id < self.N_ACCENTS:
            raise PhonemeError(f"accent id must be in [0, {self.N_ACCENTS}), got {self.id}")


def parse_phoneme_string(text: str, inventory: PhonemeInventory, kind: str = "target") -> PhonemeSequence:
    """Parse space-separated token names into a PhonemeSequence.

    Unknown tokens are rejected with the offending token and its 1-based
    position.
    """
    tokens = text.split()
    if not tokens:
        raise PhonemeError("empty phoneme string")
    ids = []
    for pos, tok in enumerate(tokens, start=1):
        try:
            ids.append(inventory.index(tok))
        except PhonemeError:
            raise PhonemeError(f"unknown token {tok!r} at position {pos}") from None
    seq = PhonemeSequence(tuple(ids), kind=kind)
    seq.validate(inventory)
    return seq


def render_phoneme_string(seq: PhonemeSequence, inventory: PhonemeInventory) -> str:
    """Inverse of parse_phoneme_string."""
    return " ".join(inventory.name(i) for i in seq.ids)
