"""Command-line interface: ``pedphone <command> ...``.

Every command writes into its own run directory (``--out``, or a
timestamped directory under ``$PEDPHONE_RUN_ROOT``, default ``./runs``)
together with ``run.json`` recording the command, its configuration and seed.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .esvm import MiningConfig
from .evaluation import (
    TABLE_ALPHAS, PckConfig, confusion_and_accuracy, load_timeline, pck, sequence_timeline,
    window_containment_sweep, write_table,
)
from .gpdm import GpdmConfig, GpdmError, load_bank, save_bank, train_gpdm
from .heatmaps import JointHeatmaps
from .knn import ACTIVITIES, K_GRID
from .manifest import ManifestError, frame_heatmaps, load_manifest, split_manifest
from .pipeline import (
    CUE_COLUMNS, TrainConfig, classify_sequence, load_model, record_image, record_query,
    save_model, train_activity_model,
)
from .pose import JOINT_NAMES, encode_pose
from .tracker import RATE_GRID, TrackingError, measurement_period, track_sequence, untracked_poses

log = logging.getLogger("pedphone")

RUN_ROOT_ENV = "PEDPHONE_RUN_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- run directories ----------------------------------------------------------------

def _jsonable(v):
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    return v


def open_run(args, command):
    if args.out:
        path = args.out
    else:
        root = args.run_root or os.environ.get(RUN_ROOT_ENV) or "runs"
        stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
        path = os.path.join(root, f"{command}-{stamp}")
        n = 1
        while os.path.exists(path):
            path = os.path.join(root, f"{command}-{stamp}-{n}")
            n += 1
    os.makedirs(path, exist_ok=True)
    config = {k: _jsonable(v) for k, v in sorted(vars(args).items())
              if k not in ("func", "out", "run_root", "verbose")}
    meta = {
        "command": command,
        "version": __version__,
        "seed": config.get("seed"),
        "config": config,
        "created": _dt.datetime.now().isoformat(timespec="seconds"),
    }
    with open(os.path.join(path, "run.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")
    log.info("run directory %s", path)
    return path


def _read_run(path):
    with open(os.path.join(path, "run.json"), encoding="utf-8") as fh:
        return json.load(fh)


# -- commands -----------------------------------------------------------------------

def cmd_synth(args):
    from .synthetic import SyntheticSpec, generate_synthetic, write_synthetic

    spec = SyntheticSpec(
        pedestrians_per_class=args.per_class, viewpoints=args.viewpoints, seed=args.seed,
        test_sequences=args.test_sequences, sequence_length=args.sequence_length,
        heatmap_distractors=args.distractors,
    )
    out = open_run(args, "synth")
    ds = generate_synthetic(spec)
    path = write_synthetic(ds, out)
    print(path)
    return EXIT_OK


def _train_config(args):
    return TrainConfig(
        k_values=tuple(args.k_values), seed=args.seed, folds=args.folds,
        negatives_per_image=args.negatives_per_image,
        mining=MiningConfig(rounds=args.mining_rounds, cache_cap=args.cache_cap, seed=args.seed),
    )


def cmd_train(args):
    manifest = load_manifest(args.manifest)
    train, test = split_manifest(manifest, args.test_fraction, args.seed)
    out = open_run(args, "train")
    with open(os.path.join(out, "split.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"seed": args.seed, "test_fraction": args.test_fraction,
                   "train": [r.id for r in train], "test": [r.id for r in test]}, fh, indent=1)
        fh.write("\n")
    images = [record_image(r, manifest) for r in train]
    if all(img is None for img in images):
        raise ManifestError("training records carry no frame images; hand ESVMs need them")
    cfg = _train_config(args)
    model = train_activity_model(train, images, cfg,
                                 progress=lambda i, n: log.debug("exemplar %d/%d", i, n))
    save_model(model, os.path.join(out, "model"))
    print(out)
    return EXIT_OK


def _model_dir(path):
    return os.path.join(path, "model") if os.path.isdir(os.path.join(path, "model")) else path


def _selected_records(manifest, model_path, split):
    if split == "all":
        return manifest.records
    split_file = os.path.join(model_path, "split.json")
    if not os.path.exists(split_file):
        raise ManifestError(f"--split {split} needs {split_file}; use --split all")
    with open(split_file, encoding="utf-8") as fh:
        ids = set(json.load(fh)[split])
    return [r for r in manifest.records if r.id in ids]


def cmd_classify(args):
    manifest = load_manifest(args.manifest)
    model = load_model(_model_dir(args.model))
    if args.fusion == "svm" and args.k not in model.fusion:
        raise UsageError(f"model has no fusion SVM for k={args.k}; trained: {sorted(model.fusion)}")
    records = _selected_records(manifest, args.model, args.split)
    out = open_run(args, "classify")
    rows = []
    for r in records:
        q = record_query(r, record_image(r, manifest), model.config)
        label, cues, scores = model.classify(q, args.k, args.fusion)
        rows.append([r.id, r.activity, label] + [f"{v:.6f}" for v in cues.vector()]
                    + [f"{v:.6f}" for v in scores])
    write_table(os.path.join(out, "classifications.csv"),
                ["id", "truth", "pred"] + CUE_COLUMNS + ["score0", "score1", "score2"], rows)
    if rows:
        rep = confusion_and_accuracy([r[2] for r in rows], [r[1] for r in rows])
        print(f"overall accuracy {rep.overall:.4f} on {len(rows)} pedestrians (k={args.k}, {args.fusion})")
    print(out)
    return EXIT_OK


def _sequences(manifest, split, only=None):
    seqs = manifest.sequences
    if only:
        seqs = [s for s in seqs if s.id in set(only)]
        missing = set(only) - {s.id for s in seqs}
        if missing:
            raise ManifestError(f"unknown sequence ids {sorted(missing)}")
        return seqs
    if split != "all" and any(s.split for s in seqs):
        seqs = [s for s in seqs if s.split == split]
    return seqs


def cmd_train_gpdm(args):
    manifest = load_manifest(args.manifest)
    seqs = _sequences(manifest, args.split, args.sequence)
    if not seqs:
        raise ManifestError("no sequences to train on")
    cfg = GpdmConfig(max_iter=args.max_iter)
    out = open_run(args, "train-gpdm")
    bank, seen = [], {}
    for s in seqs:
        Y = np.array([encode_pose(f.box, f.joints) for f in s.frames[: args.max_frames]])
        tag = s.tag or s.id
        seen[tag] = seen.get(tag, 0) + 1
        if seen[tag] > 1:
            tag = f"{tag}#{seen[tag]}"
        model = train_gpdm(Y, cfg, tag)
        log.info("gpdm %s: %d frames, %d iterations, objective %.3f", tag, len(Y),
                 len(model.history) - 1, model.history[-1])
        bank.append(model)
    save_bank(os.path.join(out, "bank.gpdm"), bank)
    from .plotting import latent_figure

    latent_figure(bank, os.path.join(out, "latents.png"))
    print(out)
    return EXIT_OK


def _pose_header():
    return ["frame", "tag"] + [f"{n}_{a}" for n in JOINT_NAMES for a in ("x", "y")]


def _write_poses(path, poses, tags):
    rows = [[t, tag] + [f"{v:.4f}" for v in p.ravel()] for t, (p, tag) in enumerate(zip(poses, tags))]
    write_table(path, _pose_header(), rows)


def _read_poses(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(v) for v in r[2:]] for r in rows]).reshape(len(rows), -1, 2)


def cmd_track(args):
    manifest = load_manifest(args.manifest)
    bank = load_bank(args.bank)
    if not bank:
        raise ManifestError(f"{args.bank} holds no models")
    model = load_model(_model_dir(args.model)) if args.model else None
    if model is not None and args.fusion == "svm" and args.k not in model.fusion:
        raise UsageError(f"model has no fusion SVM for k={args.k}")
    seqs = _sequences(manifest, args.split, args.sequence)
    if not seqs:
        raise ManifestError("no sequences to track")
    period = measurement_period(args.rate_hz)
    out = open_run(args, "track")
    summary = []
    for s in seqs:
        frames = []
        for fr in s.frames:
            maps = frame_heatmaps(manifest, fr)
            frames.append((fr.box, None if maps is None else JointHeatmaps(maps, fr.box)))
        res = track_sequence(frames, bank, period, args.particles, args.seed)
        _write_poses(os.path.join(out, f"poses_{s.id}.csv"), res.poses, res.tags)
        row = [s.id, len(frames), len(res.measured), res.resamples, res.reinits]
        if model is not None:
            seq_frames = []
            for fr, joints in zip(s.frames, res.poses):
                img = None
                if fr.image is not None:
                    img = np.asarray(fr.image, float) / 255.0
                elif fr.frame is not None:
                    from .images import load_gray

                    img = load_gray(manifest.resolve(fr.frame))
                if fr.gaze is None:
                    raise ManifestError(f"sequence {s.id}: activity classification needs per-frame gaze")
                seq_frames.append((fr.box, joints, fr.gaze, img))
            labels, calls = classify_sequence(model, seq_frames, args.k, args.fusion, args.esvm_period)
            tl = sequence_timeline(labels, [fr.activity for fr in s.frames])
            tl.save(os.path.join(out, f"timeline_{s.id}.csv"))
            row += [calls, f"{tl.agreement:.4f}"]
        summary.append(row)
    header = ["sequence", "frames", "measurements", "resamples", "reinits"]
    if model is not None:
        header += ["esvm_calls", "agreement"]
    write_table(os.path.join(out, "tracking.csv"), header, summary)
    print(out)
    return EXIT_OK


def cmd_evaluate(args):
    from . import plotting

    manifest = load_manifest(args.manifest)
    out = open_run(args, "evaluate")
    done = []
    if any(r.hands for r in manifest.records):
        sweep = window_containment_sweep(manifest.records, args.alphas)
        write_table(os.path.join(out, "containment.csv"), ["alpha"] + list(sweep),
                    [[a] + [f"{sweep[c][i]:.4f}" for c in sweep] for i, a in enumerate(args.alphas)])
        plotting.containment_figure(args.alphas, sweep, os.path.join(out, "containment.png"))
        done.append("containment")
    for run in args.classify or []:
        with open(os.path.join(run, "classifications.csv"), encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            continue
        rep = confusion_and_accuracy([int(r["pred"]) for r in rows], [int(r["truth"]) for r in rows])
        cfg = _read_run(run)["config"]
        name = f"k{cfg['k']}_{cfg['fusion']}"
        write_table(os.path.join(out, f"confusion_{name}.csv"), ["truth"] + list(ACTIVITIES),
                    [[ACTIVITIES[i]] + list(map(int, rep.confusion[i])) for i in range(3)])
        write_table(os.path.join(out, f"accuracy_{name}.csv"), ["class", "accuracy"],
                    [[ACTIVITIES[i], f"{rep.per_class[i]:.4f}"] for i in range(3)]
                    + [["overall", f"{rep.overall:.4f}"]])
        plotting.confusion_figure(rep.confusion, os.path.join(out, f"confusion_{name}.png"),
                                  f"k={cfg['k']}, {cfg['fusion']} (overall {rep.overall:.3f})")
        done.append(f"confusion {name}")
    if args.track:
        cfg_pck = PckConfig(args.pck_threshold)
        table = {}
        seq_ids = None
        by_id = {s.id: s for s in manifest.sequences}
        for run in args.track:
            cfg = _read_run(run)["config"]
            label = f"{cfg['rate_hz']} Hz"
            preds, truth, boxes = [], [], []
            ids = sorted(f[6:-4] for f in os.listdir(run) if f.startswith("poses_") and f.endswith(".csv"))
            seq_ids = ids if seq_ids is None else seq_ids
            for sid in ids:
                s = by_id[sid]
                preds.append(_read_poses(os.path.join(run, f"poses_{sid}.csv")))
                truth.append(np.array([f.joints for f in s.frames]))
                boxes.extend(f.box for f in s.frames)
                tl_path = os.path.join(run, f"timeline_{sid}.csv")
                if os.path.exists(tl_path):
                    tl = load_timeline(tl_path)
                    plotting.timeline_figure(tl, os.path.join(out, f"timeline_{sid}_{cfg['rate_hz']}hz.png"),
                                             f"{sid}: agreement {tl.agreement:.3f}")
            table[label] = pck(np.concatenate(preds), np.concatenate(truth), boxes, cfg_pck)
        preds, truth, boxes = [], [], []
        for sid in seq_ids or []:
            s = by_id[sid]
            frames = [(f.box, frame_heatmaps(manifest, f)) for f in s.frames]
            if any(m is None for _, m in frames):
                break
            preds.append(untracked_poses(frames))
            truth.append(np.array([f.joints for f in s.frames]))
            boxes.extend(f.box for f in s.frames)
        else:
            if preds:
                table = {"untracked": pck(np.concatenate(preds), np.concatenate(truth), boxes, cfg_pck),
                         **table}
        write_table(os.path.join(out, "pck.csv"), ["condition"] + list(JOINT_NAMES) + ["mean"],
                    [[k] + [f"{v:.4f}" for v in vals] + [f"{np.mean(vals):.4f}"] for k, vals in table.items()])
        plotting.pck_by_rate_figure(table, os.path.join(out, "pck_by_rate.png"))
        done.append("pck")
    if args.bank:
        plotting.latent_figure(load_bank(args.bank), os.path.join(out, "latents.png"))
        done.append("latents")
    print(f"{out}: {', '.join(done) or 'nothing to evaluate'}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="pedphone", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pedphone {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--out", help="run directory (default: timestamped under the run root)")
    common.add_argument("--run-root", help=f"parent of run directories (default ${RUN_ROOT_ENV} or ./runs)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--per-class", type=int, default=200)
    s.add_argument("--viewpoints", type=int, default=2)
    s.add_argument("--test-sequences", type=int, default=4)
    s.add_argument("--sequence-length", type=int, default=300)
    s.add_argument("--distractors", type=float, default=0.0,
                   help="probability of a spurious heat-map peak per joint and frame")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train ESVMs, pose index and fusion SVMs")
    s.add_argument("--manifest", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--test-fraction", type=float, default=0.25)
    s.add_argument("--k-values", type=int, nargs="+", default=list(K_GRID))
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--negatives-per-image", type=int, default=10)
    s.add_argument("--mining-rounds", type=int, default=3)
    s.add_argument("--cache-cap", type=int, default=2000)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("classify", parents=[common], help="classify pedestrians of a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--model", required=True, help="train run directory or its model/ subdirectory")
    s.add_argument("--k", type=int, choices=K_GRID, default=100)
    s.add_argument("--fusion", choices=("map", "svm"), default="svm")
    s.add_argument("--split", choices=("test", "train", "all"), default="test")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("train-gpdm", parents=[common], help="train a GPDM bank from sequences")
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", choices=("train", "test", "all"), default="train")
    s.add_argument("--sequence", nargs="+", help="restrict to these sequence ids")
    s.add_argument("--max-frames", type=int, default=None)
    s.add_argument("--max-iter", type=int, default=500)
    s.set_defaults(func=cmd_train_gpdm)

    s = sub.add_parser("track", parents=[common], help="track poses (and optionally activities) in sequences")
    s.add_argument("--manifest", required=True)
    s.add_argument("--bank", required=True)
    s.add_argument("--rate-hz", type=int, choices=RATE_GRID, default=30)
    s.add_argument("--particles", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split", choices=("train", "test", "all"), default="test")
    s.add_argument("--sequence", nargs="+")
    s.add_argument("--model", help="activity model; enables per-frame activity labels")
    s.add_argument("--k", type=int, choices=K_GRID, default=100)
    s.add_argument("--fusion", choices=("map", "svm"), default="svm")
    s.add_argument("--esvm-period", type=int, default=50)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("evaluate", parents=[common], help="PCK, confusion matrices, timelines, window sweep")
    s.add_argument("--manifest", required=True)
    s.add_argument("--classify", nargs="+", help="classify run directories")
    s.add_argument("--track", nargs="+", help="track run directories (one per measurement rate)")
    s.add_argument("--bank", help="GPDM bank for the latent trajectory figure")
    s.add_argument("--alphas", type=float, nargs="+", default=list(TABLE_ALPHAS))
    s.add_argument("--pck-threshold", type=float, default=0.1)
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"pedphone: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GpdmError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"pedphone: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ManifestError, TrackingError, OSError, ValueError, KeyError) as exc:
        print(f"pedphone: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
