import numpy as np
import pytest

from aped import autograd as ag
from aped import model as mdl
from aped.losses import LossWeights, asr_loss_batch, accent_loss_batch, combined_pretrain_loss
from aped.metrics import ConfusionCounts, report
from aped.optim import AdamState
from aped.phonemes import default_inventory
from aped.synthdata import CorruptionConfig, RenderConfig, generate_corpus, read_manifest
from aped.training import (
    EvalRow,
    TrainConfig,
    _apply_update,
    _pretrain_batch,
    adapt_aped,
    breakdown_by_error_rate,
    evaluate,
    load_split,
    parse_config_file,
    pretrain_asr,
    validation_per,
)

TINY_MODEL = mdl.ModelConfig(enc_layers=1, dec_layers=1, d_model=32, n_heads=4, d_ff=64)
INV = default_inventory()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    generate_corpus(
        40, (4, 8), 6,
        CorruptionConfig(p_error=0.2, rng_seed=3),
        RenderConfig(prototype_seed=3, frames_per_phoneme=(2, 4), noise_sigma=0.5),
        str(root),
    )
    return root


def tiny_cfg(corpus, stage, **kw):
    defaults = dict(
        stage=stage,
        manifest=str(corpus / "manifest.tsv"),
        ckpt_out=str(corpus / f"{stage}.ckpt"),
        epochs=2,
        batch_size=8,
        seed=1,
        model=TINY_MODEL if stage == "pretrain_asr" else None,
        weights=LossWeights(alpha=0.7, beta=0.0) if stage == "pretrain_asr" else LossWeights(),
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


def test_overfit_one_batch(corpus):
    """Loss drives below 0.01 within 500 steps on a single batch (desk model)."""
    manifest = read_manifest(corpus / "manifest.tsv")
    items = load_split(manifest, "train", mdl.DESK_CONFIG)[:8]
    feats, flens, dec_in, labels, mask, accents = _pretrain_batch(items, INV)
    state = mdl.ModelState.init(mdl.DESK_CONFIG, seed=0)
    adam = AdamState()
    final = None
    for step in range(500):
        memory, accent_logits = mdl.encode_batch(state, feats, flens)
        logits = mdl.decode_asr_teacher_batch(state, memory, flens, dec_in)
        loss = combined_pretrain_loss(asr_loss_batch(logits, labels, mask),
                                      accent_loss_batch(accent_logits, accents), 0.7)
        ag.backward(loss)
        _apply_update(state, adam, 1e-3, 5.0)
        final = float(loss.data)
        if final < 0.01:
            break
    assert final < 0.01


def test_model_trained_to_echo_decodes_target(corpus):
    """Overfit a single utterance; autoregressive decode must reproduce it."""
    manifest = read_manifest(corpus / "manifest.tsv")
    item = load_split(manifest, "train", TINY_MODEL)[0]
    feats, flens, dec_in, labels, mask, accents = _pretrain_batch([item], INV)
    state = mdl.ModelState.init(TINY_MODEL, seed=3)
    adam = AdamState()
    for _ in range(300):
        memory, accent_logits = mdl.encode_batch(state, feats, flens)
        logits = mdl.decode_asr_teacher_batch(state, memory, flens, dec_in)
        loss = combined_pretrain_loss(asr_loss_batch(logits, labels, mask),
                                      accent_loss_batch(accent_logits, accents), 0.0)
        ag.backward(loss)
        _apply_update(state, adam, 1e-3, 5.0)
        if float(loss.data) < 0.001:
            break
    with ag.no_grad():
        memory, _ = mdl.encode_batch(state, feats, flens)
        decoded = mdl.greedy_decode_batch(state, memory, flens, INV,
                                          max_len=2 * len(item.canonical))[0]
    assert decoded == item.canonical


def test_pretrain_loss_decreases(corpus):
    cfg = tiny_cfg(corpus, "pretrain_asr", epochs=5)
    _, rows = pretrain_asr(cfg)
    losses = [r.loss for r in rows]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_alpha_zero_keeps_accent_head_at_init(corpus):
    cfg = tiny_cfg(corpus, "pretrain_asr", epochs=1,
                   weights=LossWeights(alpha=0.0, beta=0.0),
                   ckpt_out=str(corpus / "alpha0.ckpt"))
    state, _ = pretrain_asr(cfg)
    init = mdl.init_params(TINY_MODEL, cfg.seed)
    np.testing.assert_array_equal(state.params["accent.w"].data, init["accent.w"].data)
    np.testing.assert_array_equal(state.params["accent.b"].data, init["accent.b"].data)
    assert not np.array_equal(state.params["phone.w"].data, init["phone.w"].data)


def test_pretrain_then_adapt_and_checkpoint_roundtrip(corpus):
    pre_cfg = tiny_cfg(corpus, "pretrain_asr")
    pre_state, _ = pretrain_asr(pre_cfg)
    adapt_cfg = tiny_cfg(corpus, "adapt_aped", ckpt_in=pre_cfg.ckpt_out, lr=1e-4)
    adapt_state, rows = adapt_aped(adapt_cfg)
    assert adapt_state.mode == "conditioned"
    assert [r.epoch for r in rows] == [1, 2]

    manifest = read_manifest(corpus / "manifest.tsv")
    direct = evaluate(adapt_state, manifest, "test", 0.5)
    reloaded = evaluate(mdl.ModelState.load(adapt_cfg.ckpt_out), manifest, "test", 0.5)
    assert direct.report == reloaded.report
    assert direct.accent_accuracy == reloaded.accent_accuracy


def test_adapt_requires_compatible_checkpoint(corpus):
    pre_cfg = tiny_cfg(corpus, "pretrain_asr")
    pretrain_asr(pre_cfg)
    bad = tiny_cfg(corpus, "adapt_aped", ckpt_in=pre_cfg.ckpt_out,
                   model=mdl.ModelConfig(enc_layers=2, dec_layers=2, d_model=64,
                                         n_heads=4, d_ff=128))
    with pytest.raises(ValueError, match="match"):
        adapt_aped(bad)


def test_training_deterministic_checkpoints(corpus, tmp_path):
    out_a = tmp_path / "a.ckpt"
    out_b = tmp_path / "b.ckpt"
    pretrain_asr(tiny_cfg(corpus, "pretrain_asr", ckpt_out=str(out_a)))
    pretrain_asr(tiny_cfg(corpus, "pretrain_asr", ckpt_out=str(out_b)))
    assert out_a.read_bytes() == out_b.read_bytes()


def test_validation_per_on_untrained_model_is_high(corpus):
    manifest = read_manifest(corpus / "manifest.tsv")
    state = mdl.ModelState.init(TINY_MODEL, seed=9)
    val = load_split(manifest, "val", TINY_MODEL)
    assert validation_per(state, val, INV) > 0.5


def test_evaluate_baseline_mode_runs(corpus):
    manifest = read_manifest(corpus / "manifest.tsv")
    state = mdl.ModelState.init(TINY_MODEL, seed=10)
    result = evaluate(state, manifest, "test", 0.5, mode="asr_baseline")
    assert len(result.rows) == len(manifest.by_split("test"))
    assert set(np.unique(result.rows[0].probs)).issubset({0.0, 1.0})


def test_evaluate_perfect_oracle_probs(monkeypatch, corpus):
    from aped import training as tr

    manifest = read_manifest(corpus / "manifest.tsv")
    state = mdl.ModelState.init(TINY_MODEL, seed=11)

    def perfect(state_, items, inv):
        rows = []
        for it in items:
            states = np.asarray(it.error_states, dtype=np.int64)
            rows.append(EvalRow(id=it.id, err_rate=it.err_rate,
                                probs=states.astype(float), states=states,
                                accent_true=it.accent, accent_pred=it.accent))
        return rows

    monkeypatch.setattr(tr, "_conditioned_rows", perfect)
    result = tr.evaluate(state, manifest, "train", 0.5, mode="conditioned")
    assert result.report.f1 == 1.0
    assert result.accent_accuracy == 1.0


def test_breakdown_buckets():
    rng = np.random.default_rng(0)
    rows = []
    for i in range(20):
        k = 10
        states = rng.integers(0, 2, size=k)
        rows.append(EvalRow(id=f"u{i:02d}", err_rate=float(states.mean()),
                            probs=states.astype(float), states=states,
                            accent_true=0, accent_pred=0))
    buckets = breakdown_by_error_rate(rows, quantiles=4)
    assert len(buckets) == 4
    assert sum(b["n"] for b in buckets) == 20
    assert all(b["quantile"] == q for b, q in zip(buckets, (0.25, 0.5, 0.75, 1.0)))
    rates = [b["rate_hi"] for b in buckets]
    assert rates == sorted(rates)


def test_breakdown_zero_error_bucket_degenerate():
    rows = []
    for i in range(4):
        states = np.zeros(10, dtype=np.int64)
        rows.append(EvalRow(id=f"u{i}", err_rate=0.0, probs=states.astype(float),
                            states=states, accent_true=0, accent_pred=0))
    buckets = breakdown_by_error_rate(rows, quantiles=2)
    assert "recall" in buckets[0]["degenerate"]


def test_breakdown_validates():
    with pytest.raises(ValueError):
        breakdown_by_error_rate([], quantiles=4)


def test_config_file_roundtrip(tmp_path, corpus):
    path = tmp_path / "train.cfg"
    path.write_text(
        "stage=pretrain_asr\n"
        f"manifest={corpus / 'manifest.tsv'}\n"
        f"ckpt_out={tmp_path / 'out.ckpt'}\n"
        "epochs=3\n"
        "lr=0.002\n"
        "batch_size=4\n"
        "seed=42\n"
        "alpha=0.5\n"
        "model_preset=desk\n"
        "d_model=32\n"
        "d_ff=64\n"
        "enc_layers=1\n"
        "dec_layers=1\n"
    )
    cfg = parse_config_file(path)
    assert cfg.stage == "pretrain_asr"
    assert cfg.epochs == 3
    assert cfg.lr == 0.002
    assert cfg.seed == 42
    assert cfg.weights.alpha == 0.5
    assert cfg.model.d_model == 32
    assert cfg.model.enc_layers == 1


def test_config_file_stage_presets(tmp_path, corpus):
    path = tmp_path / "adapt.cfg"
    path.write_text(
        "stage=adapt_aped\n"
        f"manifest={corpus / 'manifest.tsv'}\n"
        "ckpt_in=pre.ckpt\nckpt_out=out.ckpt\n"
    )
    cfg = parse_config_file(path)
    assert cfg.lr == 1e-4
    assert cfg.weights.alpha == 0.1
    assert cfg.weights.beta == 0.3
    assert cfg.weights.gamma == 0.5
    assert cfg.epochs == 30


def test_config_file_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("stage=pretrain_asr\nmanifest=m\nckpt_out=o\nwarmup=5\n")
    with pytest.raises(ValueError, match="unknown key"):
        parse_config_file(path)


def test_config_file_requires_stage(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("manifest=m\nckpt_out=o\n")
    with pytest.raises(ValueError, match="stage"):
        parse_config_file(path)


def test_eval_rows_reused_for_sweep_are_theta_free(corpus):
    manifest = read_manifest(corpus / "manifest.tsv")
    state = mdl.ModelState.init(TINY_MODEL, seed=12)
    a = evaluate(state, manifest, "test", 0.3)
    b = evaluate(state, manifest, "test", 0.7)
    for ra, rb in zip(a.rows, b.rows):
        np.testing.assert_array_equal(ra.probs, rb.probs)
