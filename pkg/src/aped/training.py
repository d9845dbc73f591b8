"""Two-stage training: recognition pretraining with the accent auxiliary task,
then adaptation to text-conditioned error detection; plus evaluation helpers.

Stage presets mirror the reference setup (pretrain lr 1e-3 with accent weight
0.7; adapt lr 1e-4 with alpha 0.1, beta 0.3, focal gamma 0.5), scaled down to
desk size. Runs are deterministic given (config, seed, data): batch order,
init, and optimizer state all derive from explicit seeds.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from . import model as mdl
from .alignment import AlignCosts, derive_labels, nw_align
from .features import read_feature_file, stack_subsample
from .kernels import levenshtein
from .losses import (
    LossWeights,
    accent_loss_batch,
    asr_loss_batch,
    combined_aped_loss,
    combined_pretrain_loss,
    eval_loss_batch,
)
from .metrics import ConfusionCounts, MetricsReport, binarize, confusion, report
from .optim import AdamState, adam_step, clip_global_norm
from .phonemes import PhonemeSequence, default_inventory
from .rng import make_rng
from .synthdata import Manifest, ManifestRecord, read_manifest

STAGES = ("pretrain_asr", "adapt_aped")
EVAL_BATCH = 32

PRETRAIN_DEFAULTS = dict(epochs=30, lr=1e-3, batch_size=32, alpha=0.7)
ADAPT_DEFAULTS = dict(epochs=30, lr=1e-4, batch_size=32, alpha=0.1, beta=0.3, gamma=0.5)


@dataclass
class TrainConfig:
    stage: str
    manifest: str
    ckpt_out: str
    ckpt_in: str | None = None
    log_out: str | None = None
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    grad_clip: float = 5.0
    # train-time feature augmentation: fresh seeded Gaussian noise per batch,
    # the lone regularizer since dropout is deliberately absent
    augment_noise: float = 0.4
    weights: LossWeights = field(default_factory=LossWeights)
    model: mdl.ModelConfig | None = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class LogRow:
    epoch: int
    loss: float
    l_eval: float
    l_asr: float
    l_a: float
    val_metric: float
    wall_s: float


def write_train_log(rows: list[LogRow], path, stage: str) -> None:
    metric = "per" if stage == "pretrain_asr" else "f1"
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#aped-trainlog stage={stage} metric={metric}\n")
        f.write("epoch,loss,l_eval,l_asr,l_a,val_metric,wall_s\n")
        for r in rows:
            f.write(
                f"{r.epoch},{r.loss:.6g},{r.l_eval:.6g},{r.l_asr:.6g},"
                f"{r.l_a:.6g},{r.val_metric:.6g},{r.wall_s:.3f}\n"
            )


# -- config files (flat key=value) ---------------------------------------------

_MODEL_KEYS = ("enc_layers", "dec_layers", "d_model", "n_heads", "d_ff", "pooling", "decoder_mask")
_INT_KEYS = {"epochs", "batch_size", "seed", "enc_layers", "dec_layers", "d_model", "n_heads", "d_ff"}
_FLOAT_KEYS = {"lr", "grad_clip", "alpha", "beta", "gamma", "augment_noise"}
_STR_KEYS = {"stage", "manifest", "ckpt_in", "ckpt_out", "log_out", "eval_kind",
             "model_preset", "pooling", "decoder_mask"}


def parse_config_file(path) -> TrainConfig:
    raw: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected key=value")
            key, value = line.split("=", 1)
            key, value = key.strip(), value.strip()
            if key not in _INT_KEYS | _FLOAT_KEYS | _STR_KEYS:
                raise ValueError(f"{path}:{line_no}: unknown key {key!r}")
            raw[key] = value

    for required in ("stage", "manifest", "ckpt_out"):
        if required not in raw:
            raise ValueError(f"{path}: missing required key {required!r}")
    stage = raw["stage"]
    if stage not in STAGES:
        raise ValueError(f"{path}: stage must be one of {STAGES}")
    stage_defaults = PRETRAIN_DEFAULTS if stage == "pretrain_asr" else ADAPT_DEFAULTS

    def get_int(key, default):
        return int(raw[key]) if key in raw else default

    def get_float(key, default):
        return float(raw[key]) if key in raw else default

    weights = LossWeights(
        alpha=get_float("alpha", stage_defaults["alpha"]),
        beta=get_float("beta", ADAPT_DEFAULTS["beta"] if stage == "adapt_aped" else 0.0),
        gamma=get_float("gamma", ADAPT_DEFAULTS.get("gamma", 0.5)),
        eval_kind=raw.get("eval_kind", "focal"),
    )
    model_cfg = None
    if stage == "pretrain_asr" or "model_preset" in raw or any(k in raw for k in _MODEL_KEYS):
        model_cfg = mdl.PRESETS[raw.get("model_preset", "desk")]
        overrides = {}
        for key in _MODEL_KEYS:
            if key in raw:
                overrides[key] = int(raw[key]) if key in _INT_KEYS else raw[key]
        if overrides:
            model_cfg = replace(model_cfg, **overrides)
    return TrainConfig(
        stage=stage,
        manifest=raw["manifest"],
        ckpt_out=raw["ckpt_out"],
        ckpt_in=raw.get("ckpt_in"),
        log_out=raw.get("log_out"),
        epochs=get_int("epochs", stage_defaults["epochs"]),
        lr=get_float("lr", stage_defaults["lr"]),
        batch_size=get_int("batch_size", stage_defaults["batch_size"]),
        seed=get_int("seed", 0),
        grad_clip=get_float("grad_clip", 5.0),
        augment_noise=get_float("augment_noise", 0.4),
        weights=weights,
        model=model_cfg,
    )


# -- data loading ----------------------------------------------------------------


@dataclass
class LoadedItem:
    id: str
    feats: np.ndarray  # stacked, (frames', dims')
    target: tuple[int, ...]
    canonical: tuple[int, ...]
    error_states: tuple[int, ...]
    aligned_canonical: tuple[int, ...]
    asr_mask: tuple[int, ...]
    accent: int

    @property
    def err_rate(self) -> float:
        return float(np.mean(self.error_states))


def load_split(manifest: Manifest, split: str, cfg: mdl.ModelConfig) -> list[LoadedItem]:
    records = manifest.by_split(split)
    if not records:
        raise ValueError(f"split {split!r} is empty")
    items = []
    for r in records:
        raw = read_feature_file(os.path.join(manifest.root, r.feature_path))
        stacked = stack_subsample(raw, stack=cfg.stack, subsample=cfg.subsample)
        items.append(LoadedItem(
            id=r.id, feats=stacked.values, target=r.target.ids, canonical=r.canonical.ids,
            error_states=r.labels.error_states, aligned_canonical=r.labels.aligned_canonical,
            asr_mask=r.labels.asr_mask, accent=r.accent.id,
        ))
    return items


def _pad_features(items: list[LoadedItem]):
    dims = items[0].feats.shape[1]
    lens = np.array([it.feats.shape[0] for it in items], dtype=np.int64)
    feats = np.zeros((len(items), int(lens.max()), dims))
    for b, it in enumerate(items):
        feats[b, : it.feats.shape[0]] = it.feats
    return feats, lens


def _pad_rows(rows: list[list[int]], fill: int) -> np.ndarray:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), fill, dtype=np.int64)
    for b, r in enumerate(rows):
        out[b, : len(r)] = r
    return out


def _pretrain_batch(items: list[LoadedItem], inv):
    feats, flens = _pad_features(items)
    dec_in = _pad_rows([[inv.sos, *it.canonical] for it in items], inv.pad)
    labels = _pad_rows([[*it.canonical, inv.eos] for it in items], inv.pad)
    mask = _pad_rows([[1] * (len(it.canonical) + 1) for it in items], 0)
    accents = np.array([it.accent for it in items], dtype=np.int64)
    return feats, flens, dec_in, labels, mask, accents


def _adapt_batch(items: list[LoadedItem], inv):
    feats, flens = _pad_features(items)
    dec_in = _pad_rows([[inv.sos, *it.target] for it in items], inv.pad)
    phone_labels = _pad_rows([list(it.aligned_canonical) for it in items], inv.pad)
    phone_mask = _pad_rows([list(it.asr_mask) for it in items], 0)
    err_states = _pad_rows([[0, *it.error_states] for it in items], 0)
    eval_mask = _pad_rows([[0] + [1] * len(it.error_states) for it in items], 0)
    accents = np.array([it.accent for it in items], dtype=np.int64)
    return feats, flens, dec_in, phone_labels, phone_mask, err_states, eval_mask, accents


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


# -- validation metrics ------------------------------------------------------------


def validation_per(state: mdl.ModelState, items: list[LoadedItem], inv) -> float:
    """Corpus phone error rate of greedy recognition against the canonical strings."""
    total_edits = 0
    total_ref = 0
    for start in range(0, len(items), EVAL_BATCH):
        chunk = items[start : start + EVAL_BATCH]
        feats, flens = _pad_features(chunk)
        with ag.no_grad():
            memory, _ = mdl.encode_batch(state, feats, flens)
            # a trained recognizer stops at EOS around the canonical length;
            # the small headroom keeps early garbage epochs from costing 2x
            max_len = max(len(it.canonical) for it in chunk) + 5
            decoded = mdl.greedy_decode_batch(state, memory, flens, inv, max_len)
        for it, hyp in zip(chunk, decoded):
            total_edits += int(levenshtein(np.asarray(it.canonical, dtype=np.int64),
                                           np.asarray(hyp, dtype=np.int64)))
            total_ref += len(it.canonical)
    return total_edits / total_ref


@dataclass
class EvalRow:
    id: str
    err_rate: float
    probs: np.ndarray   # length k, positions 1..k
    states: np.ndarray  # length k
    accent_true: int
    accent_pred: int


@dataclass
class EvalResult:
    report: MetricsReport
    accent_accuracy: float
    rows: list[EvalRow]


def _conditioned_rows(state, items, inv) -> list[EvalRow]:
    rows = []
    for start in range(0, len(items), EVAL_BATCH):
        chunk = items[start : start + EVAL_BATCH]
        feats, flens = _pad_features(chunk)
        dec_in = _pad_rows([[inv.sos, *it.target] for it in chunk], inv.pad)
        with ag.no_grad():
            memory, accent_logits = mdl.encode_batch(state, feats, flens)
            _, err_probs = mdl.decode_conditioned_batch(state, memory, flens, dec_in)
        pred_accents = accent_logits.data.argmax(axis=-1)
        for b, it in enumerate(chunk):
            k = len(it.target)
            rows.append(EvalRow(
                id=it.id, err_rate=it.err_rate,
                probs=err_probs.data[b, 1 : k + 1].copy(),
                states=np.asarray(it.error_states, dtype=np.int64),
                accent_true=it.accent, accent_pred=int(pred_accents[b]),
            ))
    return rows


def _baseline_rows(state, items, inv, costs: AlignCosts) -> list[EvalRow]:
    rows = []
    for it in items:
        feats, flens = _pad_features([it])
        with ag.no_grad():
            memory, accent_logits = mdl.encode_batch(state, feats, flens)
            max_len = 2 * len(it.target)
            decoded = mdl.greedy_decode_batch(state, memory, flens, inv, max_len)[0]
        target = PhonemeSequence(it.target, kind="target")
        if decoded:
            recognized = PhonemeSequence(decoded, kind="recognized")
            states = derive_labels(nw_align(recognized, target, costs), inv).error_states
        else:
            states = (1,) * len(it.target)
        rows.append(EvalRow(
            id=it.id, err_rate=it.err_rate,
            probs=np.asarray(states, dtype=np.float64),
            states=np.asarray(it.error_states, dtype=np.int64),
            accent_true=it.accent, accent_pred=int(accent_logits.data[0].argmax()),
        ))
    return rows


def evaluate(state: mdl.ModelState, manifest: Manifest, split: str, theta: float = 0.5,
             mode: str | None = None, costs: AlignCosts = AlignCosts()) -> EvalResult:
    """Pooled metrics (and accent accuracy) of a checkpoint over one split."""
    inv = default_inventory()
    items = load_split(manifest, split, state.config)
    mode = mode or state.mode
    if mode == "conditioned":
        rows = _conditioned_rows(state, items, inv)
    else:
        rows = _baseline_rows(state, items, inv, costs)
    counts = ConfusionCounts(0.0, 0.0, 0.0, 0.0)
    hits = 0
    for row in rows:
        counts = counts + confusion(binarize(row.probs, theta), row.states)
        hits += int(row.accent_pred == row.accent_true)
    return EvalResult(report=report(counts, theta),
                      accent_accuracy=hits / len(rows),
                      rows=rows)


def breakdown_by_error_rate(rows: list[EvalRow], quantiles: int = 4,
                            theta: float = 0.5) -> list[dict]:
    """Equal-count buckets by per-utterance error rate; pooled F1 per bucket."""
    if quantiles < 1:
        raise ValueError("quantiles must be >= 1")
    if len(rows) < quantiles:
        raise ValueError(f"{len(rows)} utterances cannot fill {quantiles} buckets")
    ordered = sorted(rows, key=lambda r: (r.err_rate, r.id))
    n = len(ordered)
    out = []
    for q in range(quantiles):
        lo_i = n * q // quantiles
        hi_i = n * (q + 1) // quantiles
        bucket = ordered[lo_i:hi_i]
        counts = ConfusionCounts(0.0, 0.0, 0.0, 0.0)
        for row in bucket:
            counts = counts + confusion(binarize(row.probs, theta), row.states)
        rep = report(counts, theta)
        out.append({
            "quantile": (q + 1) / quantiles,
            "rate_lo": bucket[0].err_rate,
            "rate_hi": bucket[-1].err_rate,
            "n": len(bucket),
            "f1": rep.f1,
            "degenerate": rep.degenerate,
        })
    return out


# -- training loops -----------------------------------------------------------------


def _apply_update(state: mdl.ModelState, adam: AdamState, lr: float, grad_clip: float):
    grads = {name: p.grad for name, p in state.params.items() if p.grad is not None}
    clip_global_norm(grads, grad_clip)
    adam_step(state.params, grads, adam, lr=lr)
    state.zero_grads()


def _augment(feats: np.ndarray, sigma: float, seed: int, stage: str, epoch: int, step: int):
    if sigma <= 0:
        return feats
    rng = make_rng(seed, "augment", stage, epoch, step)
    return feats + sigma * rng.normal(size=feats.shape)


def pretrain_asr(cfg: TrainConfig) -> tuple[mdl.ModelState, list[LogRow]]:
    """Teacher-forced recognition training with the weighted accent task;
    keeps the checkpoint with the best validation PER."""
    if cfg.stage != "pretrain_asr":
        raise ValueError("config stage must be pretrain_asr")
    inv = default_inventory()
    manifest = read_manifest(cfg.manifest)
    model_cfg = cfg.model or mdl.DESK_CONFIG
    train_items = load_split(manifest, "train", model_cfg)
    val_items = load_split(manifest, "val", model_cfg)
    state = mdl.ModelState.init(model_cfg, cfg.seed, mode="asr_baseline")
    adam = AdamState()
    rows: list[LogRow] = []
    best_per = np.inf
    best_params = state.clone_param_data()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = make_rng(cfg.seed, "order", epoch).permutation(len(train_items))
        sum_loss = sum_asr = sum_acc = 0.0
        n_batches = 0
        for step, idxs in enumerate(_batches(len(train_items), cfg.batch_size, order)):
            feats, flens, dec_in, labels, mask, accents = _pretrain_batch(
                [train_items[i] for i in idxs], inv)
            feats = _augment(feats, cfg.augment_noise, cfg.seed, cfg.stage, epoch, step)
            memory, accent_logits = mdl.encode_batch(state, feats, flens)
            logits = mdl.decode_asr_teacher_batch(state, memory, flens, dec_in)
            l_asr = asr_loss_batch(logits, labels, mask)
            l_a = accent_loss_batch(accent_logits, accents)
            loss = combined_pretrain_loss(l_asr, l_a, cfg.weights.alpha)
            ag.backward(loss)
            _apply_update(state, adam, cfg.lr, cfg.grad_clip)
            sum_loss += float(loss.data)
            sum_asr += float(l_asr.data)
            sum_acc += float(l_a.data)
            n_batches += 1
        val_per = validation_per(state, val_items, inv)
        if val_per < best_per:
            best_per = val_per
            best_params = state.clone_param_data()
        rows.append(LogRow(epoch, sum_loss / n_batches, 0.0, sum_asr / n_batches,
                           sum_acc / n_batches, val_per, time.perf_counter() - t0))
    state.load_param_data(best_params)
    state.save(cfg.ckpt_out)
    if cfg.log_out:
        write_train_log(rows, cfg.log_out, cfg.stage)
    return state, rows


def adapt_aped(cfg: TrainConfig) -> tuple[mdl.ModelState, list[LogRow]]:
    """Adapt a pretrained checkpoint to conditioned error detection; keeps the
    checkpoint with the best validation F1 at theta=0.5."""
    if cfg.stage != "adapt_aped":
        raise ValueError("config stage must be adapt_aped")
    if not cfg.ckpt_in:
        raise ValueError("adapt_aped requires ckpt_in")
    inv = default_inventory()
    manifest = read_manifest(cfg.manifest)
    state = mdl.ModelState.load(cfg.ckpt_in)
    if cfg.model is not None and cfg.model != state.config:
        raise ValueError("checkpoint model config does not match the requested model")
    state.mode = "conditioned"
    train_items = load_split(manifest, "train", state.config)
    val_items = load_split(manifest, "val", state.config)
    adam = AdamState()
    rows: list[LogRow] = []
    best_f1 = -1.0
    best_params = state.clone_param_data()
    w = cfg.weights
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = make_rng(cfg.seed, "order", epoch).permutation(len(train_items))
        sums = np.zeros(4)
        n_batches = 0
        for step, idxs in enumerate(_batches(len(train_items), cfg.batch_size, order)):
            feats, flens, dec_in, phone_labels, phone_mask, err_states, eval_mask, accents = \
                _adapt_batch([train_items[i] for i in idxs], inv)
            feats = _augment(feats, cfg.augment_noise, cfg.seed, cfg.stage, epoch, step)
            memory, accent_logits = mdl.encode_batch(state, feats, flens)
            phone_logits, err_probs = mdl.decode_conditioned_batch(state, memory, flens, dec_in)
            l_eval = eval_loss_batch(err_probs, err_states, eval_mask, w.eval_kind, w.gamma)
            l_asr = asr_loss_batch(phone_logits, phone_labels, phone_mask)
            l_a = accent_loss_batch(accent_logits, accents)
            loss = combined_aped_loss(l_eval, l_asr, l_a, w.alpha, w.beta)
            ag.backward(loss)
            _apply_update(state, adam, cfg.lr, cfg.grad_clip)
            sums += [float(loss.data), float(l_eval.data), float(l_asr.data), float(l_a.data)]
            n_batches += 1
        val_rows = _conditioned_rows(state, val_items, inv)
        counts = ConfusionCounts(0.0, 0.0, 0.0, 0.0)
        for row in val_rows:
            counts = counts + confusion(binarize(row.probs, 0.5), row.states)
        val_f1 = report(counts, 0.5).f1
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_params = state.clone_param_data()
        avg = sums / n_batches
        rows.append(LogRow(epoch, avg[0], avg[1], avg[2], avg[3], val_f1,
                           time.perf_counter() - t0))
    state.load_param_data(best_params)
    state.save(cfg.ckpt_out)
    if cfg.log_out:
        write_train_log(rows, cfg.log_out, cfg.stage)
    return state, rows
