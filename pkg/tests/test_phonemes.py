import pytest

from aped.phonemes import (
    ARPABET_39,
    PhonemeError,
    PhonemeInventory,
    PhonemeSequence,
    AccentLabel,
    default_inventory,
    parse_phoneme_string,
    render_phoneme_string,
)
from aped.rng import make_rng


@pytest.fixture(scope="module")
def inv():
    return default_inventory()


def test_inventory_is_42_tokens(inv):
    assert inv.size == 42
    assert inv.n_phonemes == 39
    assert len(set(inv.symbols)) == 42
    assert (inv.sos, inv.eos, inv.pad) == (39, 40, 41)


def test_index_name_bijection(inv):
    for i, sym in enumerate(inv.symbols):
        assert inv.index(sym) == i
        assert inv.name(i) == sym


def test_index_order_is_stable(inv):
    assert inv.symbols[: 39] == tuple(ARPABET_39)


def test_parse_simple(inv):
    seq = parse_phoneme_string("IH F", inv)
    assert seq.ids == (inv.index("IH"), inv.index("F"))


def test_parse_apple(inv):
    seq = parse_phoneme_string("AE P AH L", inv)
    assert len(seq) == 4
    assert render_phoneme_string(seq, inv) == "AE P AH L"


def test_parse_unknown_token_names_position(inv):
    with pytest.raises(PhonemeError, match="'QQ' at position 2"):
        parse_phoneme_string("AE QQ", inv)


def test_parse_empty_rejected(inv):
    with pytest.raises(PhonemeError):
        parse_phoneme_string("   ", inv)


def test_render_parse_roundtrip_mispronounced(inv):
    text = "AE P AO L"
    assert render_phoneme_string(parse_phoneme_string(text, inv), inv) == text


def test_render_rejects_bad_index(inv):
    seq = PhonemeSequence((0, 999), kind="recognized")
    with pytest.raises(PhonemeError):
        render_phoneme_string(seq, inv)


def test_roundtrip_random_sequences(inv):
    rng = make_rng(123, "roundtrip")
    for _ in range(200):
        ids = tuple(int(i) for i in rng.integers(0, 39, size=rng.integers(1, 50)))
        seq = PhonemeSequence(ids, kind="target")
        back = parse_phoneme_string(render_phoneme_string(seq, inv), inv)
        assert back.ids == ids


def test_target_rejects_special_tokens(inv):
    seq = PhonemeSequence((0, inv.pad), kind="target")
    with pytest.raises(PhonemeError):
        seq.validate(inv)


def test_empty_sequence_rejected_for_target():
    with pytest.raises(PhonemeError):
        PhonemeSequence((), kind="target")


def test_empty_recognized_allowed():
    assert len(PhonemeSequence((), kind="recognized")) == 0


def test_accent_label_range():
    AccentLabel(0)
    AccentLabel(5)
    with pytest.raises(PhonemeError):
        AccentLabel(6)
    with pytest.raises(PhonemeError):
        AccentLabel(-1)


def test_inventory_file_roundtrip(tmp_path, inv):
    path = tmp_path / "phonemes.txt"
    inv.save(path)
    loaded = PhonemeInventory.load(path)
    assert loaded.symbols == inv.symbols


def test_inventory_rejects_wrong_count():
    with pytest.raises(PhonemeError):
        PhonemeInventory(("A", "B"))
