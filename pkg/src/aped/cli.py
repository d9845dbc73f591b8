"""Single executable covering the full pipeline.

Machine-readable results go to files, human summaries to stdout, diagnostics
to stderr. Every command is deterministic given its flags and seeds; there is
no environment-variable configuration.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from .alignment import AlignCosts, format_alignment_rows, nw_align
from .bench import BenchConfig, compare, read_report_csv, report_csv, run_bench
from .checkpoint import FORMAT_VERSION as CKPT_VERSION
from .features import FORMAT_VERSION as FEAT_VERSION
from .features import stack_subsample, read_feature_file
from .metrics import DEFAULT_THETA_GRID, sweep_csv, theta_sweep
from .model import ModelState, dump_attention
from .phonemes import default_inventory, parse_phoneme_string
from .synthdata import CorruptionConfig, RenderConfig, generate_corpus, read_manifest
from .training import (
    adapt_aped,
    breakdown_by_error_rate,
    evaluate,
    parse_config_file,
    pretrain_asr,
)


def _parse_thetas(spec: str) -> list[float]:
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError("theta range must look like start:stop:step, e.g. 0.1:0.9:0.1")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("theta step must be positive")
        out = []
        t = start
        while t <= stop + 1e-9:
            out.append(round(t, 10))
            t += step
        return out
    return [float(p) for p in spec.split(",")]


def _cmd_gen_data(args) -> int:
    corruption = CorruptionConfig(p_error=args.error_rate,
                                  mix=tuple(float(m) for m in args.mix.split(",")),
                                  rng_seed=args.seed)
    render = RenderConfig(prototype_seed=args.seed if args.proto_seed is None else args.proto_seed,
                          frames_per_phoneme=(args.frames_min, args.frames_max),
                          noise_sigma=args.noise_sigma,
                          accent_shift_scale=args.accent_shift)
    manifest = generate_corpus(
        n_utts=args.utts, len_range=(args.len_min, args.len_max), accents=args.accents,
        corruption=corruption, render=render, out_dir=args.out,
    )
    sizes = {s: len(manifest.by_split(s)) for s in ("train", "val", "test")}
    print(f"wrote {len(manifest.records)} utterances to {args.out} "
          f"(train={sizes['train']} val={sizes['val']} test={sizes['test']})")
    return 0


def _cmd_align(args) -> int:
    inv = default_inventory()
    target = parse_phoneme_string(args.target, inv, kind="target")
    canonical = parse_phoneme_string(args.canonical, inv, kind="canonical")
    costs = AlignCosts(match=args.match, mismatch=args.mismatch, gap=args.gap)
    alignment = nw_align(canonical, target, costs, inventory=inv)
    rows = format_alignment_rows(alignment, inv)
    for label, row in zip(("Target", "Pronounced", "ErrorStates"), rows):
        print("\t".join([label, *row]))
    return 0


def _cmd_pretrain(args) -> int:
    cfg = parse_config_file(args.config)
    _, rows = pretrain_asr(cfg)
    print(f"pretrained {cfg.epochs} epochs; best val PER {min(r.val_metric for r in rows):.4f}; "
          f"checkpoint {cfg.ckpt_out}")
    return 0


def _cmd_adapt(args) -> int:
    cfg = parse_config_file(args.config)
    _, rows = adapt_aped(cfg)
    print(f"adapted {cfg.epochs} epochs; best val F1 {max(r.val_metric for r in rows):.4f}; "
          f"checkpoint {cfg.ckpt_out}")
    return 0


def _load_eval(args):
    state = ModelState.load(args.ckpt)
    manifest = read_manifest(args.data)
    mode = getattr(args, "mode", None) or state.mode
    return state, manifest, mode


def _cmd_eval(args) -> int:
    state, manifest, mode = _load_eval(args)
    result = evaluate(state, manifest, args.split, theta=args.theta, mode=mode)
    rep = result.report
    print(f"mode={mode} split={args.split} theta={rep.theta:g} "
          f"F1={rep.f1:.4f} precision={rep.precision:.4f} recall={rep.recall:.4f} "
          f"FAR={rep.far:.4f} FRR={rep.frr:.4f} acc={rep.accuracy:.4f} "
          f"accent_acc={result.accent_accuracy:.4f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write("#id\terr_rate\tprobs\tstates\n")
            for row in result.rows:
                probs = " ".join(f"{p:.12g}" for p in row.probs)
                states = " ".join(str(int(s)) for s in row.states)
                f.write(f"{row.id}\t{row.err_rate:.12g}\t{probs}\t{states}\n")
    return 0


def _write_sweep_svg(reports, path) -> None:
    """Two-panel SVG: recall-precision and FAR-FRR curves over theta."""
    width, height, pad = 320, 300, 40

    def panel(x0, points, x_label, y_label):
        lines = [f'<text x="{x0 + width / 2:.0f}" y="{height - 6}" text-anchor="middle" '
                 f'font-size="12">{x_label}</text>',
                 f'<text x="{x0 + 12}" y="16" font-size="12">{y_label}</text>',
                 f'<rect x="{x0 + pad}" y="{pad}" width="{width - 2 * pad}" '
                 f'height="{height - 2 * pad}" fill="none" stroke="black"/>']
        scaled = [(x0 + pad + px * (width - 2 * pad), height - pad - py * (height - 2 * pad))
                  for px, py in points]
        path_d = " ".join(f"{x:.1f},{y:.1f}" for x, y in scaled)
        lines.append(f'<polyline points="{path_d}" fill="none" stroke="crimson" stroke-width="1.5"/>')
        for x, y in scaled:
            lines.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="2.5" fill="crimson"/>')
        return lines

    body = panel(0, [(r.recall, r.precision) for r in reports], "recall", "precision")
    body += panel(width, [(r.far, r.frr) for r in reports], "FAR", "FRR")
    svg = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{2 * width}" height="{height}">',
           *body, "</svg>"]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(svg) + "\n")


def _cmd_sweep(args) -> int:
    state, manifest, mode = _load_eval(args)
    thetas = _parse_thetas(args.thetas) if args.thetas else list(DEFAULT_THETA_GRID)
    result = evaluate(state, manifest, args.split, theta=0.5, mode=mode)
    pairs = [(row.probs, row.states) for row in result.rows]
    reports = theta_sweep(pairs, thetas)
    csv_text = sweep_csv(reports)
    if args.svg:
        _write_sweep_svg(reports, args.svg)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(csv_text)
        best = max(reports, key=lambda r: r.f1)
        print(f"swept {len(reports)} thresholds on split={args.split}; "
              f"best F1 {best.f1:.4f} at theta={best.theta:g}")
    else:
        sys.stdout.write(csv_text)
    return 0


def _cmd_breakdown(args) -> int:
    state, manifest, mode = _load_eval(args)
    result = evaluate(state, manifest, args.split, theta=args.theta, mode=mode)
    buckets = breakdown_by_error_rate(result.rows, quantiles=args.quantiles, theta=args.theta)
    lines = ["quantile,rate_lo,rate_hi,n,f1,degenerate"]
    for b in buckets:
        flags = "|".join(b["degenerate"])
        lines.append(f"{b['quantile']:g},{b['rate_lo']:.6g},{b['rate_hi']:.6g},"
                     f"{b['n']},{b['f1']:.6g},{flags}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
        print(f"breakdown over {len(result.rows)} utterances in {args.quantiles} buckets")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_bench(args) -> int:
    state = ModelState.load(args.ckpt)
    manifest = read_manifest(args.data)
    cfg = BenchConfig(mode=args.mode, batch_size=args.batch, repetitions=args.reps,
                      warmup_runs=args.warmup, split=args.split)
    rep = run_bench(state, manifest, cfg)
    if args.baseline:
        base = read_report_csv(args.baseline)
        rep.speedup = compare(rep, base).mean_speedup
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(report_csv([rep]))
    print(f"mode={rep.mode} batch={rep.batch} mean={rep.mean_ms:.2f}ms "
          f"std={rep.std_ms:.2f}ms median={rep.median_ms:.2f}ms "
          f"passes={rep.passes_mean:.2f} speedup={rep.speedup:.2f}x")
    return 0


def _cmd_dump_attention(args) -> int:
    state = ModelState.load(args.ckpt)
    manifest = read_manifest(args.data)
    record = manifest.find(args.utt_id)
    raw = read_feature_file(os.path.join(manifest.root, record.feature_path))
    stacked = stack_subsample(raw, stack=state.config.stack, subsample=state.config.subsample)
    inv = default_inventory()
    mode = args.mode or state.mode
    text = record.target if mode == "conditioned" else record.canonical
    maps = dump_attention(state, stacked, text, inv, mode=mode)
    os.makedirs(args.out_dir, exist_ok=True)
    n_files = 0
    for name, heads in maps.items():
        layer, kind = name.split(".")
        for h in range(heads.shape[0]):
            mat = heads[h]
            path = os.path.join(args.out_dir, f"{args.utt_id}_{layer}_{kind}_h{h}.txt")
            with open(path, "w", encoding="utf-8") as f:
                f.write(f"# layer={layer} type={kind} head={h} "
                        f"rows={mat.shape[0]} cols={mat.shape[1]}\n")
                for row in mat:
                    f.write("\t".join(f"{v:.9g}" for v in row) + "\n")
            n_files += 1
    print(f"wrote {n_files} attention maps to {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aped",
        description="Pronunciation error detection: data generation, alignment, "
                    "training, evaluation, and latency benchmarking.",
    )
    parser.add_argument("--version", action="version",
                        version=f"aped {__version__} "
                                f"(feature-format {FEAT_VERSION}, checkpoint-format {CKPT_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--utts", type=int, required=True)
    p.add_argument("--error-rate", type=float, default=0.1456)
    p.add_argument("--out", required=True)
    p.add_argument("--len-min", type=int, default=10)
    p.add_argument("--len-max", type=int, default=40)
    p.add_argument("--accents", type=int, default=6)
    p.add_argument("--mix", default="0.7,0.2,0.1",
                   help="substitution,deletion,insertion proportions")
    p.add_argument("--frames-min", type=int, default=4)
    p.add_argument("--frames-max", type=int, default=8)
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--accent-shift", type=float, default=1.5)
    p.add_argument("--proto-seed", type=int, default=None)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("align", help="align canonical against target phonemes")
    p.add_argument("--target", required=True, help="space-separated target phonemes")
    p.add_argument("--canonical", required=True, help="space-separated pronounced phonemes")
    p.add_argument("--match", type=float, default=1.0)
    p.add_argument("--mismatch", type=float, default=-1.0)
    p.add_argument("--gap", type=float, default=-1.0)
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("pretrain", help="recognition pretraining stage")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("adapt", help="adapt a pretrained checkpoint to error detection")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_adapt)

    def eval_args(p, with_theta=True):
        p.add_argument("--ckpt", required=True)
        p.add_argument("--data", required=True, help="manifest path")
        p.add_argument("--split", default="test")
        p.add_argument("--mode", choices=("conditioned", "asr_baseline"), default=None)
        if with_theta:
            p.add_argument("--theta", type=float, default=0.5)
        p.add_argument("--out", default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    eval_args(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="threshold sweep over a split")
    eval_args(p, with_theta=False)
    p.add_argument("--thetas", default=None, help="start:stop:step or comma list")
    p.add_argument("--svg", default=None, help="write recall-precision / FAR-FRR curves")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("breakdown", help="F1 by per-utterance error-rate quantile")
    eval_args(p)
    p.add_argument("--quantiles", type=int, default=4)
    p.set_defaults(func=_cmd_breakdown)

    p = sub.add_parser("bench", help="latency benchmark")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--mode", choices=("asr_autoregressive", "conditioned"), required=True)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--out", default=None)
    p.add_argument("--baseline", default=None, help="bench report to compute speedup against")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("dump-attention", help="export attention maps for one utterance")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--utt-id", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mode", choices=("conditioned", "asr_baseline"), default=None)
    p.set_defaults(func=_cmd_dump_attention)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
