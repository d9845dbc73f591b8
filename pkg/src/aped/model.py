"""Transformer encoder-decoder with accent, phoneme, and error-state heads.

One decoder code path serves three uses: teacher-forced recognition training,
autoregressive greedy recognition (the baseline workflow), and single-pass
text-conditioned error detection, where the known target text is the decoder
input and both heads (42-way phonemes, scalar error state) read the final
decoder layer. Everything runs batched over padded arrays; the per-utterance
functions wrap the batched core with batch size 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from .alignment import AlignCosts, derive_labels, nw_align
from .autograd import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .features import StackedFeatures
from .phonemes import PhonemeInventory, PhonemeSequence
from .rng import make_rng

POOLINGS = ("global_mean", "gru")
DECODER_MASKS = ("causal", "full")
MODES = ("asr_baseline", "conditioned")


@dataclass(frozen=True)
class ModelConfig:
    enc_layers: int = 2
    dec_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    vocab: int = 42
    n_accents: int = 6
    stack: int = 5
    subsample: int = 4
    pooling: str = "global_mean"
    decoder_mask: str = "causal"
    raw_dims: int = 39

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if self.decoder_mask not in DECODER_MASKS:
            raise ValueError(f"decoder_mask must be one of {DECODER_MASKS}")

    @property
    def input_dims(self) -> int:
        return self.raw_dims * self.stack


DESK_CONFIG = ModelConfig()
PAPER_CONFIG = ModelConfig(enc_layers=6, dec_layers=6, d_model=512, n_heads=4, d_ff=1024)
PRESETS = {"desk": DESK_CONFIG, "paper": PAPER_CONFIG}


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, dff = cfg.d_model, cfg.d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "in_proj.w": (cfg.input_dims, d),
        "in_proj.b": (d,),
    }

    def attn(prefix):
        for part in ("q", "k", "v", "o"):
            shapes[f"{prefix}.w{part}"] = (d, d)
            shapes[f"{prefix}.b{part}"] = (d,)

    def ln(prefix):
        shapes[f"{prefix}.g"] = (d,)
        shapes[f"{prefix}.b"] = (d,)

    def ff(prefix):
        shapes[f"{prefix}.w1"] = (d, dff)
        shapes[f"{prefix}.b1"] = (dff,)
        shapes[f"{prefix}.w2"] = (dff, d)
        shapes[f"{prefix}.b2"] = (d,)

    for l in range(cfg.enc_layers):
        attn(f"enc{l}.attn")
        ln(f"enc{l}.ln1")
        ff(f"enc{l}.ff")
        ln(f"enc{l}.ln2")
    ln("enc.final")
    shapes["embed.tok"] = (cfg.vocab, d)
    for l in range(cfg.dec_layers):
        attn(f"dec{l}.self")
        ln(f"dec{l}.ln1")
        attn(f"dec{l}.cross")
        ln(f"dec{l}.ln2")
        ff(f"dec{l}.ff")
        ln(f"dec{l}.ln3")
    ln("dec.final")
    if cfg.pooling == "gru":
        for gate in ("z", "r", "h"):
            shapes[f"gru.w{gate}"] = (d, d)
            shapes[f"gru.u{gate}"] = (d, d)
            shapes[f"gru.b{gate}"] = (d,)
    shapes["accent.w"] = (d, cfg.n_accents)
    shapes["accent.b"] = (cfg.n_accents,)
    shapes["phone.w"] = (d, cfg.vocab)
    shapes["phone.b"] = (cfg.vocab,)
    shapes["err.w"] = (d, 1)
    shapes["err.b"] = (1,)
    return shapes


# The binary error head starts at the typical mispronunciation prior rather
# than 0.5, the usual detection-head convention under focal-style losses.
ERROR_PRIOR = 0.15


def init_params(cfg: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) seeded per parameter name;
    biases zero (error head: logit of the error prior), layer-norm gains one."""
    params: dict[str, Tensor] = {}
    for name, shape in _param_shapes(cfg).items():
        if name.endswith(".g"):
            data = np.ones(shape)
        elif name == "err.b":
            data = np.full(shape, math.log(ERROR_PRIOR / (1.0 - ERROR_PRIOR)))
        elif len(shape) == 1:
            data = np.zeros(shape)
        else:
            limit = 1.0 / math.sqrt(shape[0])
            data = make_rng(seed, "param", name).uniform(-limit, limit, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


class ModelState:
    """Parameters + config + mode flag, with forward-pass counters."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor], mode: str = "asr_baseline"):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.config = cfg
        self.params = params
        self.mode = mode
        self.counters = {"encoder_passes": 0, "decoder_passes": 0}

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int, mode: str = "asr_baseline") -> "ModelState":
        return cls(cfg, init_params(cfg, seed), mode=mode)

    def reset_counters(self):
        for key in self.counters:
            self.counters[key] = 0

    def zero_grads(self):
        for p in self.params.values():
            p.grad = None

    def clone_param_data(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_param_data(self, data: dict[str, np.ndarray]):
        for name, p in self.params.items():
            arr = data[name]
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()

    def save(self, path) -> None:
        cfg = self.config
        entries = {name: p.data for name, p in self.params.items()}
        entries["_meta.config"] = np.array(
            [
                cfg.enc_layers, cfg.dec_layers, cfg.d_model, cfg.n_heads, cfg.d_ff,
                cfg.vocab, cfg.n_accents, cfg.stack, cfg.subsample,
                POOLINGS.index(cfg.pooling), DECODER_MASKS.index(cfg.decoder_mask),
                cfg.raw_dims, MODES.index(self.mode),
            ],
            dtype=np.float64,
        )
        save_checkpoint(entries, path)

    @classmethod
    def load(cls, path) -> "ModelState":
        entries = load_checkpoint(path)
        meta = entries.pop("_meta.config")
        vals = [int(v) for v in meta]
        cfg = ModelConfig(
            enc_layers=vals[0], dec_layers=vals[1], d_model=vals[2], n_heads=vals[3],
            d_ff=vals[4], vocab=vals[5], n_accents=vals[6], stack=vals[7],
            subsample=vals[8], pooling=POOLINGS[vals[9]], decoder_mask=DECODER_MASKS[vals[10]],
            raw_dims=vals[11],
        )
        mode = MODES[vals[12]]
        expected = _param_shapes(cfg)
        params: dict[str, Tensor] = {}
        for name, shape in expected.items():
            if name not in entries:
                raise ValueError(f"checkpoint missing parameter {name!r}")
            arr = entries[name]
            if arr.shape != shape:
                raise ValueError(f"checkpoint shape mismatch for {name!r}")
            params[name] = Tensor(arr, requires_grad=True)
        return cls(cfg, params, mode=mode)


_PE_CACHE: dict[int, np.ndarray] = {}


def _pos_encoding(length: int, d_model: int) -> np.ndarray:
    table = _PE_CACHE.get(d_model)
    if table is None or table.shape[0] < length:
        size = max(length, 128)
        if table is not None:
            size = max(size, 2 * table.shape[0])
        pos = np.arange(size, dtype=np.float64)[:, None]
        div = np.exp(-math.log(10000.0) * np.arange(0, d_model, 2, dtype=np.float64) / d_model)
        table = np.zeros((size, d_model))
        table[:, 0::2] = np.sin(pos * div)
        table[:, 1::2] = np.cos(pos * div)
        _PE_CACHE[d_model] = table
    return table[:length]


def _linear(x: Tensor, params, prefix: str) -> Tensor:
    return ag.linear(x, params[f"{prefix}.w"], params[f"{prefix}.b"])


def _mha(state, prefix, q_in, kv_in, blocked, trace, trace_key):
    """Multi-head attention; blocked is a bool array (broadcastable to
    (B, H, Lq, Lk)) marking positions that get exactly zero weight."""
    P = state.params
    cfg = state.config
    h = cfg.n_heads
    dh = cfg.d_model // h
    B, lq = q_in.shape[0], q_in.shape[1]
    lk = kv_in.shape[1]

    def split_heads(t, length):
        return ag.transpose(ag.reshape(t, (B, length, h, dh)), (0, 2, 1, 3))

    q = split_heads(ag.linear(q_in, P[f"{prefix}.wq"], P[f"{prefix}.bq"]), lq)
    k = split_heads(ag.linear(kv_in, P[f"{prefix}.wk"], P[f"{prefix}.bk"]), lk)
    v = split_heads(ag.linear(kv_in, P[f"{prefix}.wv"], P[f"{prefix}.bv"]), lk)
    scores = ag.scale(q @ ag.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(dh))
    if blocked is not None:
        scores = ag.masked_fill(scores, blocked, -np.inf)
    attn = ag.softmax(scores, axis=-1)
    if trace is not None:
        trace[trace_key] = attn.data.copy()
    out = ag.reshape(ag.transpose(attn @ v, (0, 2, 1, 3)), (B, lq, cfg.d_model))
    return ag.linear(out, P[f"{prefix}.wo"], P[f"{prefix}.bo"])


def _feed_forward(state, prefix, x):
    P = state.params
    return ag.linear(ag.relu(ag.linear(x, P[f"{prefix}.w1"], P[f"{prefix}.b1"])), P[f"{prefix}.w2"], P[f"{prefix}.b2"])


def _norm(state, prefix, x):
    P = state.params
    return ag.layer_norm(x, P[f"{prefix}.g"], P[f"{prefix}.b"])


def _key_padding(lengths: np.ndarray, max_len: int) -> np.ndarray:
    # True where the key position is padding: shape (B, 1, 1, max_len)
    return (np.arange(max_len)[None, :] >= np.asarray(lengths)[:, None])[:, None, None, :]


def _gru_pool(state, memory: Tensor, lengths: np.ndarray) -> Tensor:
    P = state.params
    B, T, d = memory.shape
    h = Tensor(np.zeros((B, d)))
    last = np.zeros((B, T))
    last[np.arange(B), np.asarray(lengths) - 1] = 1.0
    pooled = Tensor(np.zeros((B, d)))
    for t in range(T):
        x_t = memory[:, t, :]
        z = ag.sigmoid(x_t @ P["gru.wz"] + h @ P["gru.uz"] + P["gru.bz"])
        r = ag.sigmoid(x_t @ P["gru.wr"] + h @ P["gru.ur"] + P["gru.br"])
        cand = ag.tanh(x_t @ P["gru.wh"] + ag.mul(r, h) @ P["gru.uh"] + P["gru.bh"])
        h = ag.mul(1.0 - z, h) + ag.mul(z, cand)
        pooled = pooled + ag.mul(h, last[:, t : t + 1])
    return pooled


def encode_batch(state: ModelState, feats: np.ndarray, lengths, trace=None):
    """feats (B, T, raw_dims*stack) zero-padded; returns memory (B, T, d_model)
    and accent logits (B, n_accents)."""
    cfg = state.config
    if feats.shape[-1] != cfg.input_dims:
        raise ValueError(f"encoder input dim {feats.shape[-1]} != {cfg.input_dims}")
    state.counters["encoder_passes"] += 1
    lengths = np.asarray(lengths, dtype=np.int64)
    B, T = feats.shape[0], feats.shape[1]
    P = state.params
    x = ag.linear(Tensor(feats), P["in_proj.w"], P["in_proj.b"])
    x = x + Tensor(_pos_encoding(T, cfg.d_model)[None])
    blocked = _key_padding(lengths, T)
    for l in range(cfg.enc_layers):
        h = _norm(state, f"enc{l}.ln1", x)
        x = x + _mha(state, f"enc{l}.attn", h, h, blocked, trace, f"enc{l}.self")
        x = x + _feed_forward(state, f"enc{l}.ff", _norm(state, f"enc{l}.ln2", x))
    memory = _norm(state, "enc.final", x)
    if cfg.pooling == "gru":
        pooled = _gru_pool(state, memory, lengths)
    else:
        keep = (np.arange(T)[None, :] < lengths[:, None]).astype(np.float64)
        pooled = ag.mul(ag.sum_(ag.mul(memory, Tensor(keep[:, :, None])), axis=1),
                        Tensor(1.0 / lengths.astype(np.float64))[:, None])
    accent_logits = ag.linear(pooled, P["accent.w"], P["accent.b"])
    return memory, accent_logits


def _decode_core(state: ModelState, memory: Tensor, mem_lengths, dec_ids: np.ndarray,
                 causal: bool, trace=None) -> Tensor:
    cfg = state.config
    state.counters["decoder_passes"] += 1
    mem_lengths = np.asarray(mem_lengths, dtype=np.int64)
    dec_ids = np.asarray(dec_ids, dtype=np.int64)
    B, L = dec_ids.shape
    T = memory.shape[1]
    P = state.params
    x = ag.scale(ag.embedding_lookup(P["embed.tok"], dec_ids), math.sqrt(cfg.d_model))
    x = x + Tensor(_pos_encoding(L, cfg.d_model)[None])
    self_blocked = None
    if causal:
        self_blocked = (np.arange(L)[None, :] > np.arange(L)[:, None])[None, None, :, :]
    cross_blocked = _key_padding(mem_lengths, T)
    for l in range(cfg.dec_layers):
        h = _norm(state, f"dec{l}.ln1", x)
        x = x + _mha(state, f"dec{l}.self", h, h, self_blocked, trace, f"dec{l}.self")
        h = _norm(state, f"dec{l}.ln2", x)
        x = x + _mha(state, f"dec{l}.cross", h, memory, cross_blocked, trace, f"dec{l}.cross")
        x = x + _feed_forward(state, f"dec{l}.ff", _norm(state, f"dec{l}.ln3", x))
    return _norm(state, "dec.final", x)


def decode_conditioned_batch(state: ModelState, memory: Tensor, mem_lengths,
                             dec_ids: np.ndarray, trace=None):
    """dec_ids rows are [SOS, t1..tk] (PAD beyond length). Returns phoneme
    logits (B, L, vocab) and error probabilities (B, L) in (0, 1)."""
    causal = state.config.decoder_mask == "causal"
    out = _decode_core(state, memory, mem_lengths, dec_ids, causal=causal, trace=trace)
    P = state.params
    phoneme_logits = ag.linear(out, P["phone.w"], P["phone.b"])
    B, L = dec_ids.shape
    error_probs = ag.reshape(ag.sigmoid(ag.linear(out, P["err.w"], P["err.b"])), (B, L))
    return phoneme_logits, error_probs


def decode_asr_teacher_batch(state: ModelState, memory: Tensor, mem_lengths,
                             dec_ids: np.ndarray, trace=None) -> Tensor:
    """Causal-masked decode of [SOS]+canonical(shifted); phoneme logits only."""
    out = _decode_core(state, memory, mem_lengths, dec_ids, causal=True, trace=trace)
    P = state.params
    return ag.linear(out, P["phone.w"], P["phone.b"])


def greedy_decode_batch(state: ModelState, memory: Tensor, mem_lengths,
                        inventory: PhonemeInventory, max_len: int) -> list[tuple[int, ...]]:
    """Lockstep greedy decoding from SOS until every row emits EOS or max_len."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    B = memory.shape[0]
    P = state.params
    ids = np.full((B, 1), inventory.sos, dtype=np.int64)
    emitted: list[list[int]] = [[] for _ in range(B)]
    finished = np.zeros(B, dtype=bool)
    with ag.no_grad():
        for _ in range(max_len):
            out = _decode_core(state, memory, mem_lengths, ids, causal=True)
            logits = ag.linear(out[:, -1, :], P["phone.w"], P["phone.b"]).data
            next_tok = logits.argmax(axis=-1)
            for b in range(B):
                if finished[b]:
                    continue
                if next_tok[b] == inventory.eos:
                    finished[b] = True
                else:
                    emitted[b].append(int(next_tok[b]))
            if finished.all():
                break
            ids = np.concatenate([ids, next_tok[:, None]], axis=1)
    return [tuple(e) for e in emitted]


# -- single-utterance API ------------------------------------------------------


def _as_batch(memory: Tensor) -> tuple[Tensor, np.ndarray]:
    frames = memory.shape[0]
    return ag.reshape(memory, (1, frames, memory.shape[1])), np.array([frames])


def encode(features: StackedFeatures, state: ModelState, trace=None):
    memory, accent_logits = encode_batch(
        state, features.values[None], np.array([features.frames]), trace=trace
    )
    return memory[0, :, :], accent_logits[0, :]


def decode_conditioned(memory: Tensor, target: PhonemeSequence, state: ModelState,
                       inventory: PhonemeInventory, trace=None):
    if len(target) < 1:
        raise ValueError("target must be nonempty")
    dec_ids = np.array([[inventory.sos, *target.ids]], dtype=np.int64)
    mem3, mem_len = _as_batch(memory)
    logits, probs = decode_conditioned_batch(state, mem3, mem_len, dec_ids, trace=trace)
    return logits[0, :, :], probs[0, :]


def decode_asr_teacher_forced(memory: Tensor, canonical: PhonemeSequence, state: ModelState,
                              inventory: PhonemeInventory, trace=None) -> Tensor:
    dec_ids = np.array([[inventory.sos, *canonical.ids]], dtype=np.int64)
    mem3, mem_len = _as_batch(memory)
    logits = decode_asr_teacher_batch(state, mem3, mem_len, dec_ids, trace=trace)
    return logits[0, :, :]


def decode_asr_autoregressive(memory: Tensor, state: ModelState,
                              inventory: PhonemeInventory, max_len: int) -> PhonemeSequence:
    mem3, mem_len = _as_batch(memory)
    ids = greedy_decode_batch(state, mem3, mem_len, inventory, max_len)[0]
    return PhonemeSequence(ids, kind="recognized")


def baseline_aped(features: StackedFeatures, target: PhonemeSequence, state: ModelState,
                  inventory: PhonemeInventory, costs: AlignCosts = AlignCosts()) -> tuple[int, ...]:
    """The ASR-based workflow: recognize, align to target, read off errors."""
    with ag.no_grad():
        memory, _ = encode(features, state)
        recognized = decode_asr_autoregressive(memory, state, inventory, max_len=2 * len(target))
    if len(recognized) == 0:
        # nothing recognized: every target phoneme is a deletion
        return (1,) * len(target)
    alignment = nw_align(recognized, target, costs)
    return derive_labels(alignment, inventory).error_states


def dump_attention(state: ModelState, features: StackedFeatures, text: PhonemeSequence,
                   inventory: PhonemeInventory, mode: str | None = None) -> dict[str, np.ndarray]:
    """Run one forward pass and return every attention map as (heads, Lq, Lk)."""
    mode = mode or state.mode
    trace: dict[str, np.ndarray] = {}
    with ag.no_grad():
        memory, _ = encode(features, state, trace=trace)
        if mode == "conditioned":
            decode_conditioned(memory, text, state, inventory, trace=trace)
        else:
            decode_asr_teacher_forced(memory, text, state, inventory, trace=trace)
    return {name: arr[0] for name, arr in trace.items()}
