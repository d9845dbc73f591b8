"""Deterministic synthetic corpus: targets, corrupted pronunciations, rendered
features, precomputed labels, and the line-delimited manifest.

Every record's randomness derives only from (seed, record id), so generation
is reproducible and shardable. Feature rendering stands in for real speech:
each phoneme holds a fixed 39-dim prototype for a few frames, shifted by a
per-accent bias and Gaussian noise.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .alignment import AlignCosts, ApedLabels, derive_labels, nw_align
from .features import FeatureMatrix, write_feature_file
from .phonemes import (
    AccentLabel,
    PhonemeInventory,
    PhonemeSequence,
    default_inventory,
    parse_phoneme_string,
    render_phoneme_string,
)
from .rng import make_rng, stable_hash

SPLITS = ("train", "val", "test")
DEFAULT_SPLIT_RATIOS = (8, 1, 1)
DEFAULT_LEN_RANGE = (10, 40)
MANIFEST_NAME = "manifest.tsv"
INVENTORY_NAME = "phonemes.txt"
MANIFEST_FIELDS = (
    "id", "accent", "target", "canonical", "error_states",
    "aligned_canonical", "asr_mask", "feature_path", "split",
)


@dataclass(frozen=True)
class CorruptionConfig:
    p_error: float = 0.1456
    mix: tuple[float, float, float] = (0.70, 0.20, 0.10)  # substitution, deletion, insertion
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_error < 1.0:
            raise ValueError("p_error must be in [0, 1)")
        if any(m < 0 for m in self.mix) or abs(sum(self.mix) - 1.0) > 1e-9:
            raise ValueError("mix components must be >= 0 and sum to 1")


@dataclass(frozen=True)
class RenderConfig:
    prototype_seed: int = 0
    frames_per_phoneme: tuple[int, int] = (4, 4)
    noise_sigma: float = 0.6
    accent_shift_scale: float = 1.5
    confusable_gap: float = 0.8

    def __post_init__(self):
        if self.frames_per_phoneme[0] < 1 or self.frames_per_phoneme[1] < self.frames_per_phoneme[0]:
            raise ValueError("frames_per_phoneme must be a (min, max) range with min >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.confusable_gap <= 0:
            raise ValueError("confusable_gap must be > 0")


def corrupt(target: PhonemeSequence, cfg: CorruptionConfig, rng: np.random.Generator) -> PhonemeSequence:
    """Independently corrupt each target position with probability p_error.

    On error the operation is drawn from cfg.mix: substitution swaps in a
    uniformly random different phoneme, deletion drops the phoneme, insertion
    appends a uniformly random phoneme after it. A draw that would empty the
    sequence is redone.
    """
    n_ph = 39
    sub_cut = cfg.mix[0]
    del_cut = cfg.mix[0] + cfg.mix[1]
    while True:
        out: list[int] = []
        for ph in target.ids:
            if rng.random() >= cfg.p_error:
                out.append(ph)
                continue
            op = rng.random()
            if op < sub_cut:
                other = int(rng.integers(0, n_ph - 1))
                out.append(other if other < ph else other + 1)
            elif op < del_cut:
                pass
            else:
                out.append(ph)
                out.append(int(rng.integers(0, n_ph)))
        if out:
            return PhonemeSequence(tuple(out), kind="canonical")


_PROTO_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _tables(cfg: RenderConfig) -> tuple[np.ndarray, np.ndarray]:
    """(39 x 39 phoneme prototypes, 6 x 39 orthogonal accent bias vectors).

    Prototypes come in confusable pairs: phonemes 2i and 2i+1 sit confusable_gap
    apart around a shared base point (the 39th is a lone base), mimicking close
    phonetic neighbours; distinct bases are far apart."""
    key = (cfg.prototype_seed, cfg.accent_shift_scale, cfg.confusable_gap)
    cached = _PROTO_CACHE.get(key)
    if cached is None:
        rng = make_rng(cfg.prototype_seed, "prototypes")
        bases = rng.normal(0.0, 1.0, size=(20, 39))
        dirs = rng.normal(0.0, 1.0, size=(20, 39))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        protos = np.empty((39, 39))
        half = 0.5 * cfg.confusable_gap
        for pair in range(19):
            protos[2 * pair] = bases[pair] + half * dirs[pair]
            protos[2 * pair + 1] = bases[pair] - half * dirs[pair]
        protos[38] = bases[19]
        raw = make_rng(cfg.prototype_seed, "accents").normal(0.0, 1.0, size=(39, AccentLabel.N_ACCENTS))
        q, r = np.linalg.qr(raw)
        q = q * np.sign(np.diag(r))[None, :]  # fix QR sign convention
        biases = (q * cfg.accent_shift_scale).T
        cached = (protos, biases)
        _PROTO_CACHE[key] = cached
    return cached


def render_features(canonical: PhonemeSequence, accent: AccentLabel, cfg: RenderConfig,
                    rng: np.random.Generator) -> FeatureMatrix:
    """Each phoneme emits prototype + accent bias + noise for a random number
    of frames in frames_per_phoneme."""
    protos, biases = _tables(cfg)
    lo, hi = cfg.frames_per_phoneme
    blocks = []
    for ph in canonical.ids:
        dur = int(rng.integers(lo, hi + 1))
        base = protos[ph] + biases[accent.id]
        noise = rng.normal(0.0, 1.0, size=(dur, 39)) * cfg.noise_sigma
        blocks.append(base[None, :] + noise)
    return FeatureMatrix(np.concatenate(blocks, axis=0))


@dataclass
class ManifestRecord:
    id: str
    accent: AccentLabel
    target: PhonemeSequence
    canonical: PhonemeSequence
    labels: ApedLabels
    feature_path: str
    split: str


@dataclass
class Manifest:
    root: str
    records: list[ManifestRecord] = field(default_factory=list)

    def by_split(self, split: str) -> list[ManifestRecord]:
        if split == "all":
            return list(self.records)
        if split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS} or 'all'")
        return [r for r in self.records if r.split == split]

    def find(self, record_id: str) -> ManifestRecord:
        for r in self.records:
            if r.id == record_id:
                return r
        raise KeyError(f"no record with id {record_id!r}")


def split_assignments(ids: list[str], ratios=DEFAULT_SPLIT_RATIOS) -> dict[str, str]:
    """Rank ids by stable hash and cut at exact ratio boundaries (8:1:1 of 10
    ids gives precisely 8/1/1)."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValueError("ratios must be three non-negative numbers")
    ranked = sorted(ids, key=lambda rid: (stable_hash(rid), rid))
    n = len(ranked)
    total = sum(ratios)
    cut1 = n * ratios[0] // total
    cut2 = n * (ratios[0] + ratios[1]) // total
    out: dict[str, str] = {}
    for rank, rid in enumerate(ranked):
        if rank < cut1:
            out[rid] = "train"
        elif rank < cut2:
            out[rid] = "val"
        else:
            out[rid] = "test"
    return out


def _format_bits(bits) -> str:
    return ",".join(str(int(b)) for b in bits)


def _parse_bits(text: str) -> tuple[int, ...]:
    return tuple(int(b) for b in text.split(","))


def write_manifest(manifest: Manifest, path) -> None:
    inv = default_inventory()
    with open(path, "w", encoding="utf-8") as f:
        f.write("#" + "\t".join(MANIFEST_FIELDS) + "\n")
        for r in manifest.records:
            aligned = " ".join(inv.name(i) for i in r.labels.aligned_canonical)
            f.write("\t".join([
                r.id,
                str(r.accent.id),
                render_phoneme_string(r.target, inv),
                render_phoneme_string(r.canonical, inv),
                _format_bits(r.labels.error_states),
                aligned,
                _format_bits(r.labels.asr_mask),
                r.feature_path,
                r.split,
            ]) + "\n")


def read_manifest(path) -> Manifest:
    inv = default_inventory()
    root = os.path.dirname(os.path.abspath(path))
    records: list[ManifestRecord] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != len(MANIFEST_FIELDS):
                raise ValueError(f"{path}:{line_no}: expected {len(MANIFEST_FIELDS)} fields")
            rid, accent, target, canonical, errors, aligned, mask, fpath, split = parts
            labels = ApedLabels(
                error_states=_parse_bits(errors),
                aligned_canonical=tuple(inv.index(t) for t in aligned.split()),
                asr_mask=_parse_bits(mask),
            )
            records.append(ManifestRecord(
                id=rid,
                accent=AccentLabel(int(accent)),
                target=parse_phoneme_string(target, inv, kind="target"),
                canonical=parse_phoneme_string(canonical, inv, kind="canonical"),
                labels=labels,
                feature_path=fpath,
                split=split,
            ))
    return Manifest(root=root, records=records)


def generate_corpus(
    n_utts: int,
    len_range: tuple[int, int] = DEFAULT_LEN_RANGE,
    accents: int = AccentLabel.N_ACCENTS,
    corruption: CorruptionConfig = CorruptionConfig(),
    render: RenderConfig = RenderConfig(),
    out_dir: str = ".",
    costs: AlignCosts = AlignCosts(),
    ratios=DEFAULT_SPLIT_RATIOS,
) -> Manifest:
    """Write feature files, per-record labels, and the manifest under out_dir."""
    if n_utts < 1:
        raise ValueError("n_utts must be >= 1")
    inv = default_inventory()
    feat_dir = os.path.join(out_dir, "features")
    os.makedirs(feat_dir, exist_ok=True)
    inv.save(os.path.join(out_dir, INVENTORY_NAME))

    ids = [f"utt{i:05d}" for i in range(n_utts)]
    splits = split_assignments(ids, ratios)
    manifest = Manifest(root=os.path.abspath(out_dir))
    for rid in ids:
        rng_target = make_rng(corruption.rng_seed, rid, "target")
        length = int(rng_target.integers(len_range[0], len_range[1] + 1))
        target = PhonemeSequence(tuple(int(t) for t in rng_target.integers(0, 39, size=length)),
                                 kind="target")
        accent = AccentLabel(int(rng_target.integers(0, accents)))
        canonical = corrupt(target, corruption, make_rng(corruption.rng_seed, rid, "corrupt"))
        feats = render_features(canonical, accent, render, make_rng(render.prototype_seed, rid, "render"))
        labels = derive_labels(nw_align(canonical, target, costs), inv)
        rel_path = os.path.join("features", rid + ".feat")
        write_feature_file(feats, os.path.join(out_dir, rel_path))
        manifest.records.append(ManifestRecord(
            id=rid, accent=accent, target=target, canonical=canonical,
            labels=labels, feature_path=rel_path, split=splits[rid],
        ))
    write_manifest(manifest, os.path.join(out_dir, MANIFEST_NAME))
    return manifest
