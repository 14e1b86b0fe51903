"""Operator-facing command line.

Commands: synth, train, eval, ablate, gradcam, params, flops, gradcheck.
Every run directory gets a config.json snapshot sufficient to replay the run.
Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data, dsp, metrics, model
from .errors import ResawareError
from .nn import Parameter, finite_difference_check
from .nn.autograd import (Tensor, adaptive_avg_pool_1x1, bce_with_logits, conv2d,
                          l2_normalize, linear, max_pool_2x2, relu, sigmoid)
from .prng import combine_seed

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _float_repr(x: float) -> str:
    return repr(float(x))


def _write_config_snapshot(out_dir: Path, command: str, options: dict):
    options = {k: v for k, v in options.items() if k != "func"}
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w") as fh:
        json.dump({"command": command, "options": options}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _max_workers() -> int:
    try:
        return max(1, int(os.environ.get("RESAWARE_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# Feature extraction pipeline
# ---------------------------------------------------------------------------

def extract_features(entries: list[data.ManifestEntry], base_dir: Path,
                     duration_s: float, seed: int, training: bool) -> model.FeatureSet:
    """Manifest entries -> stacked per-resolution feature batches.

    Training uses a seeded random crop per (seed, file index); evaluation uses
    the deterministic center crop. Files are processed in manifest order;
    RESAWARE_THREADS caps the worker fanout.
    """

    def one(item):
        index, entry = item
        w = data.load_wav(base_dir / entry.path)
        w = dsp.resample(w, dsp.TARGET_SAMPLE_RATE)
        if training:
            w = dsp.crop_or_pad(w, duration_s, mode="random",
                                seed=combine_seed(seed, index))
        else:
            w = dsp.crop_or_pad(w, duration_s, mode="center")
        return [m.values for m in dsp.multi_resolution_features(w)]

    workers = _max_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            feats = list(pool.map(one, enumerate(entries)))
    else:
        feats = [one(item) for item in enumerate(entries)]
    batches = {k: np.stack([f[k - 1] for f in feats]) for k in (1, 2, 3)}
    labels = np.array([e.label for e in entries], dtype=np.int64)
    ids = np.array([e.dataset_id for e in entries], dtype=np.int64)
    return model.FeatureSet(batches, labels, ids)


def _load_split_features(manifest: Path, split: str, duration_s: float,
                         seed: int, training: bool):
    entries = [e for e in data.read_manifest(manifest) if e.split == split]
    if not entries:
        raise data.DataError(f"{manifest}: no entries in split {split!r}")
    return entries, extract_features(entries, manifest.parent, duration_s, seed, training)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    spec = data.SynthSpec(n_per_class=args.n, seed=args.seed,
                          duration_s=args.duration, n_speakers=args.speakers,
                          rerecord=args.rerecord)
    entries, waveforms = data.generate_synthetic_corpus(spec)
    entries = data.speaker_disjoint_split(entries, seed=args.seed)
    (out_dir / "wavs").mkdir(parents=True, exist_ok=True)
    for e, w in zip(entries, waveforms):
        data.write_wav(out_dir / "wavs" / e.path, w)
        e.path = f"wavs/{e.path}"
    data.write_manifest(out_dir / "manifest.csv", entries)
    if args.rerecord:
        (out_dir / "rerec").mkdir(exist_ok=True)
        rerec_entries = []
        for i, (e, w) in enumerate(zip(entries, waveforms)):
            name = Path(e.path).name
            rr = data.simulate_rerecord(w, seed=combine_seed(args.seed, i))
            data.write_wav(out_dir / "rerec" / name, rr)
            rerec_entries.append(data.ManifestEntry(f"rerec/{name}", e.label,
                                                    e.speaker_id, e.dataset_id, e.split))
        data.write_manifest(out_dir / "manifest_rerecorded.csv", rerec_entries)
    _write_config_snapshot(out_dir, "synth", vars(args))
    print(f"wrote {2 * args.n} clean files"
          + (f" + {2 * args.n} rerecorded" if args.rerecord else "")
          + f" to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _model_config(args) -> model.ModelConfig:
    return model.ModelConfig(num_datasets=args.num_datasets,
                             lambda_cons=args.lambda_cons, variant=args.variant,
                             single_resolution=args.single_res_k)


def _write_history(path, history):
    with open(path, "w") as fh:
        fh.write("epoch,loss_total,loss_cls,loss_cons,val_eer\n")
        for rec in history:
            fh.write(f"{rec.epoch},{_float_repr(rec.loss_total)},"
                     f"{_float_repr(rec.loss_cls)},{_float_repr(rec.loss_cons)},"
                     f"{_float_repr(rec.val_eer)}\n")


def cmd_train(args) -> int:
    out_dir = Path(args.out)
    manifest = Path(args.manifest)
    cfg = _model_config(args)
    run = model.TrainConfig(epochs=args.epochs, batch_size=args.batch,
                            lr=args.lr, seed=args.seed)
    _, train_set = _load_split_features(manifest, "train", args.duration,
                                        args.seed, training=True)
    _, dev_set = _load_split_features(manifest, "dev", args.duration,
                                      args.seed, training=False)
    if args.dataset_id is not None:
        train_set.dataset_ids[:] = args.dataset_id
        dev_set.dataset_ids[:] = args.dataset_id
    best, history = model.train(train_set, dev_set, cfg, run)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save_model(out_dir / "checkpoint.bin", best, cfg)
    _write_history(out_dir / "history.csv", history)
    _write_config_snapshot(out_dir, "train", vars(args))
    best_rec = min(history, key=lambda r: r.val_eer)
    print(f"best epoch {best_rec.epoch}: val EER {best_rec.val_eer:.4f} "
          f"-> {out_dir / 'checkpoint.bin'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    out_dir = Path(args.out)
    manifest = Path(args.manifest)
    arrays, cfg = model.load_model(args.checkpoint)
    entries, features = _load_split_features(manifest, args.split, args.duration,
                                             args.seed, training=False)
    scores = model.predict_scores(features, arrays, cfg)
    score_set = metrics.ScoreSet(scores, features.labels,
                                 speaker_ids=[e.speaker_id for e in entries],
                                 dataset_ids=features.dataset_ids)
    report = metrics.evaluate(score_set)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / "scores.csv", "w") as fh:
        fh.write("path,score,label\n")
        for e, s in zip(entries, scores):
            fh.write(f"{e.path},{_float_repr(s)},{e.label}\n")
    det = metrics.det_curve(score_set)
    with open(out_dir / "det.csv", "w") as fh:
        fh.write("far,frr\n")
        for far, frr in det:
            fh.write(f"{_float_repr(far)},{_float_repr(frr)}\n")
    with open(out_dir / "roc.csv", "w") as fh:
        fh.write("fpr,tpr\n")
        for far, frr in det:
            fh.write(f"{_float_repr(frr)},{_float_repr(1.0 - far)}\n")
    _write_config_snapshot(out_dir, "eval", vars(args))
    print(f"{args.split}: acc {report.accuracy:.4f}  auc {report.auc:.4f}  "
          f"eer {report.eer:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

def run_ablation(train_set: model.FeatureSet, dev_set: model.FeatureSet,
                 base_cfg: model.ModelConfig, run_base: model.TrainConfig,
                 seeds: list[int]) -> list[dict]:
    """Train all four variants per seed on the same splits; returns cell rows."""
    rows = []
    for seed in seeds:
        for variant in model.VARIANTS:
            cfg = model.ModelConfig(num_datasets=base_cfg.num_datasets,
                                    lambda_cons=base_cfg.lambda_cons,
                                    variant=variant,
                                    single_resolution=base_cfg.single_resolution)
            run = model.TrainConfig(epochs=run_base.epochs,
                                    batch_size=run_base.batch_size,
                                    lr=run_base.lr, seed=seed)
            best, _ = model.train(train_set, dev_set, cfg, run)
            scores = model.predict_scores(dev_set, best, cfg)
            score_set = metrics.ScoreSet(scores, dev_set.labels)
            eer_val, _ = metrics.eer(score_set)
            rows.append({"variant": variant, "seed": seed, "eer": eer_val,
                         "auc": metrics.roc_auc(score_set)})
    return rows


def cmd_ablate(args) -> int:
    out_dir = Path(args.out)
    manifest = Path(args.manifest)
    base_cfg = _model_config(args)
    run_base = model.TrainConfig(epochs=args.epochs, batch_size=args.batch,
                                 lr=args.lr, seed=args.seed)
    seeds = [args.seed + i for i in range(args.seeds)]
    _, train_set = _load_split_features(manifest, "train", args.duration,
                                        args.seed, training=True)
    _, dev_set = _load_split_features(manifest, "dev", args.duration,
                                      args.seed, training=False)
    rows = run_ablation(train_set, dev_set, base_cfg, run_base, seeds)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "ablation.csv", "w") as fh:
        fh.write("kind,variant,seed,eer,auc\n")
        for r in rows:
            fh.write(f"cell,{r['variant']},{r['seed']},"
                     f"{_float_repr(r['eer'])},{_float_repr(r['auc'])}\n")
        for variant in model.VARIANTS:
            eers = np.array([r["eer"] for r in rows if r["variant"] == variant])
            aucs = np.array([r["auc"] for r in rows if r["variant"] == variant])
            fh.write(f"summary,{variant},,"
                     f"{_float_repr(eers.mean())} +- {_float_repr(eers.std())},"
                     f"{_float_repr(aucs.mean())} +- {_float_repr(aucs.std())}\n")
    _write_config_snapshot(out_dir, "ablate", vars(args))
    for variant in model.VARIANTS:
        eers = [r["eer"] for r in rows if r["variant"] == variant]
        print(f"{variant:<16} mean EER {np.mean(eers):.4f} +- {np.std(eers):.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcam
# ---------------------------------------------------------------------------

def write_pgm(path, values: np.ndarray):
    """8-bit binary PGM (P5) from values in [0, 1]."""
    q = np.clip(np.round(values * 255.0), 0, 255).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(q.tobytes())
    return q


def cmd_gradcam(args) -> int:
    out_dir = Path(args.out)
    arrays, cfg = model.load_model(args.checkpoint)
    params = model.ModelParams({k: Parameter(v, k) for k, v in arrays.items()})
    w = data.load_wav(args.wav)
    w = dsp.resample(w, dsp.TARGET_SAMPLE_RATE)
    w = dsp.crop_or_pad(w, args.duration, mode="center")
    specs = dsp.multi_resolution_features(w)
    heat = model.grad_cam(specs, params, cfg, args.resolution,
                          dataset_id=args.dataset_id)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_pgm(out_dir / f"gradcam_res{args.resolution}.pgm", heat)
    np.savetxt(out_dir / f"gradcam_res{args.resolution}.csv", heat,
               delimiter=",", fmt="%.17g")
    _write_config_snapshot(out_dir, "gradcam", vars(args))
    print(f"heatmap {heat.shape[0]}x{heat.shape[1]} -> {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# params / flops
# ---------------------------------------------------------------------------

def cmd_params(args) -> int:
    cfg = model.ModelConfig(num_datasets=args.num_datasets)
    breakdown = model.count_parameters(cfg)
    for name, count in breakdown["rows"].items():
        print(f"{name:<28} {count:>10,}")
    print(f"{'total (' + str(breakdown['num_datasets']) + ' heads)':<28} "
          f"{breakdown['total']:>10,}")
    return EXIT_OK


def cmd_flops(args) -> int:
    cfg = model.ModelConfig(num_datasets=args.num_datasets)
    shapes = model.canonical_input_shapes(args.duration)
    est = model.estimate_flops(cfg, shapes)
    for k, v in est["per_resolution"].items():
        h, w = shapes[k]
        print(f"resolution {k} ({h}x{w}) {v / 1e6:>10.2f} MFLOP")
    print(f"{'attention':<20} {est['attention'] / 1e6:>10.2f} MFLOP")
    print(f"{'fusion + head':<20} {(est['fusion'] + est['head']) / 1e6:>10.2f} MFLOP")
    print(f"{'total':<20} {est['total_mflops']:>10.2f} MFLOP")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def _layer_checks(seed: int):
    """Per-layer finite-difference checks on randomized small shapes."""
    rng = np.random.default_rng(seed)
    checks = []

    x = Parameter(rng.standard_normal((2, 3, 6, 5)), "conv.x")
    w = Parameter(rng.standard_normal((4, 3, 3, 3)) * 0.4, "conv.w")
    b = Parameter(rng.standard_normal(4) * 0.1, "conv.b")
    checks.append(("conv2d", lambda: (conv2d(x, w, b) * Tensor(
        np.random.default_rng(seed + 1).standard_normal((2, 4, 6, 5)))).sum(),
        [x, w, b]))

    xp = Parameter(rng.standard_normal((2, 3, 6, 6)), "pool.x")
    checks.append(("relu+maxpool", lambda: (max_pool_2x2(relu(xp)) * Tensor(
        np.random.default_rng(seed + 2).standard_normal((2, 3, 3, 3)))).sum(), [xp]))

    xa = Parameter(rng.standard_normal((3, 4, 5, 6)), "avgpool.x")
    checks.append(("avgpool", lambda: (adaptive_avg_pool_1x1(xa) * Tensor(
        np.random.default_rng(seed + 3).standard_normal((3, 4)))).sum(), [xa]))

    xl = Parameter(rng.standard_normal((4, 6)), "linear.x")
    wl = Parameter(rng.standard_normal((3, 6)) * 0.5, "linear.w")
    bl = Parameter(rng.standard_normal(3) * 0.1, "linear.b")
    checks.append(("linear", lambda: (linear(xl, wl, bl) * Tensor(
        np.random.default_rng(seed + 4).standard_normal((4, 3)))).sum(), [xl, wl, bl]))

    # modest scales keep the softmax away from saturation, where finite
    # differences lose accuracy
    za = Parameter(rng.standard_normal((2, 3, 8)) * 0.5, "attn.z")
    cfg8 = model.ModelConfig(embed_dim=8, heads=2)
    pa = {
        "attn.w_qkv": Parameter(rng.standard_normal((24, 8)) * 0.2, "attn.w_qkv"),
        "attn.b_qkv": Parameter(rng.standard_normal(24) * 0.1, "attn.b_qkv"),
        "attn.w_o": Parameter(rng.standard_normal((8, 8)) * 0.2, "attn.w_o"),
        "attn.b_o": Parameter(rng.standard_normal(8) * 0.1, "attn.b_o"),
    }
    mp = model.ModelParams(pa)
    checks.append(("attention", lambda: (model.cross_scale_attention(za, mp, cfg8)[0]
                                         * Tensor(np.random.default_rng(seed + 5)
                                                  .standard_normal((2, 3, 8)))).sum(),
                   [za] + list(pa.values())))

    xs = Parameter(rng.standard_normal(5), "bce.logits")
    ys = (rng.uniform(size=5) > 0.5).astype(float)
    checks.append(("bce", lambda: bce_with_logits(xs, ys).mean(), [xs]))

    xn = Parameter(rng.standard_normal((3, 7)), "l2norm.x")
    checks.append(("l2_normalize", lambda: (l2_normalize(xn) * Tensor(
        np.random.default_rng(seed + 6).standard_normal((3, 7)))).sum(), [xn]))

    xsig = Parameter(rng.standard_normal(6), "sigmoid.x")
    checks.append(("sigmoid", lambda: (sigmoid(xsig) * Tensor(
        np.random.default_rng(seed + 7).standard_normal(6))).sum(), [xsig]))
    return checks


def run_gradcheck(seed: int = 0, n_shape_seeds: int = 20, tolerance: float = 1e-4,
                  out=sys.stdout) -> bool:
    """Layer-wise checks over n_shape_seeds randomized shapes plus the
    end-to-end training loss on a 2-sample batch."""
    ok = True
    worst = {}
    for s in range(seed, seed + n_shape_seeds):
        for name, f, params in _layer_checks(s):
            rep = finite_difference_check(f, params, tolerance=tolerance)
            worst[name] = max(worst.get(name, 0.0), rep.max_rel_error)
            ok = ok and rep.passed
    for name, err in worst.items():
        print(f"layer {name:<16} max rel err over {n_shape_seeds} seeds "
              f"{err:.3e} {'PASS' if err < tolerance else 'FAIL'}", file=out)

    cfg = model.ModelConfig()
    params = model.init_params(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    batches = {1: rng.standard_normal((2, 12, 10)),
               2: rng.standard_normal((2, 16, 9)),
               3: rng.standard_normal((2, 10, 8))}
    labels = np.array([0, 1])

    def f():
        trace = model.forward(batches, params, cfg, np.array([0, 1]))
        return model.total_loss(trace, labels, cfg).total

    rep = finite_difference_check(f, params.parameters(), tolerance=tolerance,
                                  max_entries=10, seed=seed)
    print("end-to-end loss:", file=out)
    print(str(rep), file=out)
    return ok and rep.passed


def cmd_gradcheck(args) -> int:
    passed = run_gradcheck(seed=args.seed)
    return EXIT_OK if passed else EXIT_CHECK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_model_args(p):
    p.add_argument("--lambda", dest="lambda_cons", type=float, default=1.0,
                   help="consistency loss weight")
    p.add_argument("--variant", choices=model.VARIANTS, default="full")
    p.add_argument("--single-res-k", type=int, default=2,
                   help="resolution used by the single-res variant (1..3)")
    p.add_argument("--num-datasets", type=int, default=1)


def _add_train_args(p):
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    _add_model_args(p)


def build_parser() -> _Parser:
    parser = _Parser(prog="resaware")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    p.add_argument("--n", type=int, required=True, help="files per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--speakers", type=int, default=10)
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--rerecord", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a detector")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--dataset-id", type=int, default=None,
                   help="override the manifest dataset_id column")
    _add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=data.SPLITS, default="dev")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=2.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score all four variants")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds")
    p.add_argument("--duration", type=float, default=2.0)
    _add_train_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcam", help="activation heatmap for one file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--resolution", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--dataset-id", type=int, default=0)
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gradcam)

    p = sub.add_parser("params", help="print the trainable parameter table")
    p.add_argument("--num-datasets", type=int, default=3)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("flops", help="print the analytic forward FLOP estimate")
    p.add_argument("--num-datasets", type=int, default=3)
    p.add_argument("--duration", type=float, default=2.0)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ResawareError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
