"""Command-line entry point: ``pedintent {synth,build,train,eval,predict,track}``.

Every command reads an optional ``--config`` file of ``key = value`` lines
(a ``.json`` file holding one object is accepted too); flags given on the
command line override the file.  Unknown keys are rejected.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing or malformed input), 3 numeric failure (diverged training).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .datapipe import (LABELS, TASKS, DataError, SynthSpec, WindowConfig, build_samples, read_corpus,
                       split, synthesize_scenes, write_annotations, write_corpus)
from .datapipe.schema import annotation_files, ingest_annotations, read_records
from .metrics import TASK_COLUMNS, displacement_errors, task_ap, write_report
from .nncore.checkpoint import CheckpointError
from .nncore import ShapeError

log = logging.getLogger("pedintent")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SPLITS = ("train", "val", "test")
CORPUS_SUFFIX = ".pidc"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# config ---------------------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    text = p.read_text()
    if p.suffix == ".json":
        d = json.loads(text)
        if not isinstance(d, dict):
            raise UsageError(f"{p}: expected a JSON object")
        return d
    from .vrunet.config import parse_config_text
    try:
        return parse_config_text(text)
    except ValueError as exc:
        raise UsageError(f"{p}: {exc}") from None


def merged(cfg: dict, args, names) -> dict:
    """Overlay flags that were given (not None) on the config file values."""
    out = dict(cfg)
    for n in names:
        v = getattr(args, n, None)
        if v is not None:
            out[n] = v
    return out


def route(cfg: dict, *classes, extra=()) -> list[dict]:
    """Split a flat config among dataclasses by field name; reject leftovers."""
    parts = [{} for _ in classes]
    unknown = []
    for k, v in cfg.items():
        for i, cls in enumerate(classes):
            if k in {f.name for f in fields(cls)}:
                parts[i][k] = v
                break
        else:
            if k not in extra:
                unknown.append(k)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return parts


def _window_config(d: dict) -> WindowConfig:
    try:
        return WindowConfig(**d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"window config: {exc}") from None


# corpus helpers -------------------------------------------------------------

def corpus_path(path, name: str = "test") -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / f"{name}{CORPUS_SUFFIX}"
    if not p.exists():
        raise FileNotFoundError(f"corpus not found: {p}")
    return p


def label_counts(scenes) -> dict:
    """Per-track label counts (the label at each track's last frame)."""
    counts = {t: Counter() for t in TASKS}
    for sc in scenes:
        for tr in sc.tracks:
            for t in TASKS:
                k = int(tr.labels[t][-1])
                if k >= 0:
                    counts[t][LABELS[t][k]] += 1
    return {t: {lab: counts[t][lab] for lab in LABELS[t]} for t in TASKS}


# commands -------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.spec is None:
        spec_d = {}
    else:
        spec_d = load_config(args.spec)
    seed = int(spec_d.pop("seed", 0)) if args.seed is None else args.seed
    spec_d.pop("seed", None)
    try:
        spec = SynthSpec.from_dict(spec_d)
        scenes = synthesize_scenes(spec, seed)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"synth spec: {exc}") from None
    out = Path(args.out)
    write_annotations(scenes, out)
    manifest = {"scenes": len(scenes), "seed": seed, "spec": asdict(spec),
                "pedestrians": sum(len(s.tracks) for s in scenes), "label_counts": label_counts(scenes)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(scenes)} scenes to {out}")
    return EXIT_OK


def cmd_build(args) -> int:
    cfg = merged(load_config(args.config), args, ("seed",))
    if args.ratios is not None:
        cfg["ratios"] = args.ratios
    (wd,) = route(cfg, WindowConfig, extra=("ratios", "seed", "min_visible"))
    wc = _window_config(wd)
    ratios = tuple(cfg.get("ratios", (0.6, 0.2, 0.2)))
    seed = int(cfg.get("seed", 0))
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise UsageError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    files = annotation_files(args.annotations)
    scenes = ingest_annotations(args.annotations, cfg.get("min_visible", 0.25)) if files else []
    samples, stats = build_samples(scenes, wc)
    if not samples:
        log.warning("no windows produced from %s", args.annotations)
    parts = split(samples, ratios, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(SPLITS, parts):
        write_corpus(out / f"{name}{CORPUS_SUFFIX}", part)
    manifest = {"windows": stats.windows, "tracks_in": stats.tracks_in, "tracks_kept": stats.tracks_kept,
                "tracks_skipped": stats.tracks_skipped, "seed": seed, "ratios": list(ratios),
                "window_config": asdict(wc)}
    for name, part in zip(SPLITS, parts):
        manifest[name] = {"windows": len(part), "scenes": sorted({s.scene_id for s in part})}
    (out / "split.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"windows: {stats.windows} (train {len(parts[0])}, val {len(parts[1])}, test {len(parts[2])})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = merged(load_config(args.config), args, ("epochs", "lr", "seed", "batch_size"))
    train_s = read_corpus(corpus_path(args.corpus, "train"))
    val_p = Path(args.corpus) / f"val{CORPUS_SUFFIX}" if Path(args.corpus).is_dir() else None
    val_s = read_corpus(val_p) if val_p is not None and val_p.exists() else []
    if not train_s:
        raise DataError(f"{args.corpus}: training corpus is empty")
    if not val_s:
        log.warning("no validation windows; validating on the training set")
        val_s = train_s
    out = Path(args.out)
    seed = int(cfg.pop("seed", 0))
    if args.model == "modular":
        return _train_modular(cfg, train_s, val_s, out, seed)
    from .vrunet import TrainConfig, VRUNetConfig, save_model, train
    from .vrunet.train import write_log
    md, hd = route(cfg, VRUNetConfig, TrainConfig)
    md.setdefault("obs_len", train_s[0].obs_len)
    md.setdefault("horizon", train_s[0].horizon)
    md.setdefault("image_size", tuple(train_s[0].image_size))
    if (md["obs_len"], md["horizon"]) != (train_s[0].obs_len, train_s[0].horizon):
        raise UsageError(f"config obs_len/horizon {md['obs_len']}/{md['horizon']} do not match the corpus "
                         f"({train_s[0].obs_len}/{train_s[0].horizon})")
    try:
        mcfg, hyper = VRUNetConfig.from_dict(md), TrainConfig.from_dict(hd)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if args.resume is not None and not Path(args.resume).exists():
        raise FileNotFoundError(f"checkpoint not found: {args.resume}")
    res = train(train_s, val_s, mcfg, hyper, seed=seed, out_dir=out, resume=args.resume)
    write_log(out / "metrics.csv", res.log)
    if res.best_epoch < 0:
        save_model(out / "best.ckpt", res.model, {"epoch": res.log[-1]["epoch"] if res.log else 0, "seed": seed})
    print(f"trained {len(res.log)} epochs; best epoch {res.best_epoch} (val loss {res.best_val:.6g})")
    return EXIT_OK


def _train_modular(cfg, train_s, val_s, out: Path, seed: int) -> int:
    from .baselines import ModularConfig, ModularPipeline, evaluate_modular
    try:
        mc = ModularConfig.from_dict({**cfg, "seed": seed})
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    pipe = ModularPipeline(mc).fit(train_s)
    pipe.save(out)
    scores = evaluate_modular(pipe, val_s)
    (out / "val_metrics.json").write_text(json.dumps(scores, indent=2, sort_keys=True) + "\n")
    print("validation " + " ".join(f"{k} {v:.4f}" for k, v in sorted(scores.items())))
    return EXIT_OK


class _Predictor:
    """Uniform access to a VRUNet checkpoint file or a modular model directory."""

    def __init__(self, path):
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"checkpoint not found: {p}")
        if p.is_dir():
            from .baselines import ModularPipeline
            self.kind, self.model = "modular", ModularPipeline.load(p)
        else:
            from .vrunet import load_model
            self.kind = "vrunet"
            self.model, _ = load_model(p)

    def __call__(self, samples):
        """Per-task probabilities and smoothed pixel trajectories (None for modular)."""
        if self.kind == "modular":
            return self.model.predict(samples).probs, None
        from .vrunet import predict, trajectories_px
        b = predict(self.model, samples)
        return {t: b.probs(t) for t in TASKS}, trajectories_px(b, samples, smooth=True)


def _key(rec) -> tuple:
    return rec["scene_id"], rec["person_id"], int(rec["start_frame"])


def prediction_records(samples, probs, traj) -> list[dict]:
    recs = []
    for i, s in enumerate(samples):
        rec = {"scene_id": s.scene_id, "person_id": s.person_id, "start_frame": int(s.start_frame)}
        for t in TASKS:
            rec[t] = {lab: float(p) for lab, p in zip(LABELS[t], probs[t][i])}
        if traj is None:
            rec["trajectory"] = None
            rec["out_of_frame"] = None
        else:
            w, h = s.image_size
            tr = traj[i]
            rec["trajectory"] = [[float(x), float(y)] for x, y in tr]
            rec["out_of_frame"] = bool(np.any((tr[:, 0] < 0) | (tr[:, 0] > w) | (tr[:, 1] < 0) | (tr[:, 1] > h)))
        recs.append(rec)
    return recs


def read_predictions(path, samples):
    """Align an NDJSON prediction file with ``samples``; returns (probs, traj)."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"predictions not found: {p}")
    by_key = {}
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        if line.strip():
            try:
                rec = json.loads(line)
                by_key[_key(rec)] = rec
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataError(f"{p.name}:{lineno}: bad prediction record ({exc})") from None
    probs = {t: [] for t in TASKS}
    traj = []
    for s in samples:
        rec = by_key.get((s.scene_id, s.person_id, int(s.start_frame)))
        if rec is None:
            raise DataError(f"{p.name}: no prediction for {s.scene_id}/{s.person_id}@{s.start_frame}")
        for t in TASKS:
            probs[t].append([rec[t][lab] for lab in LABELS[t]])
        traj.append(rec.get("trajectory"))
    probs = {t: np.asarray(v, dtype=np.float64) for t, v in probs.items()}
    has_traj = all(tr is not None for tr in traj)
    return probs, (np.asarray(traj, dtype=np.float64) if has_traj else None)


COLUMN_OF = dict(zip(("gait", "attention", "distraction", "orientation", "crossing"), TASK_COLUMNS))


def report_row(samples, probs, traj) -> dict:
    row = {}
    for t in TASKS:
        y = np.array([s.label(t) for s in samples])
        row[COLUMN_OF[t]] = task_ap(probs[t], y)
    if traj is not None:
        errs = [displacement_errors(traj[i], s.future_centers) for i, s in enumerate(samples)]
        row["ADE"] = float(np.mean([e.ade for e in errs]))
        row["FDE"] = float(np.mean([e.fde for e in errs]))
    return row


def cmd_eval(args) -> int:
    if (args.checkpoint is None) == (args.predictions is None):
        raise UsageError("give exactly one of --checkpoint or --predictions")
    samples = read_corpus(corpus_path(args.corpus, "test"))
    if not samples:
        raise DataError(f"{args.corpus}: test corpus is empty")
    if args.checkpoint is not None:
        pred = _Predictor(args.checkpoint)
        probs, traj = pred(samples)
        name = args.name or pred.kind
    else:
        probs, traj = read_predictions(args.predictions, samples)
        name = args.name or "predictions"
    row = report_row(samples, probs, traj)
    write_report(args.out, {name: row})
    print(" ".join(f"{k} {v:.4f}" for k, v in row.items()))
    return EXIT_OK


def cmd_predict(args) -> int:
    pred = _Predictor(args.checkpoint)
    src = Path(args.input)
    if not src.exists():
        raise FileNotFoundError(f"input not found: {src}")
    if src.suffix == CORPUS_SUFFIX:
        samples = read_corpus(src)
    else:
        cfg = merged(load_config(args.config), args, ())
        (wd,) = route(cfg, WindowConfig, extra=("min_visible",))
        if pred.kind == "vrunet":
            wd.setdefault("obs_len", pred.model.cfg.obs_len)
            wd.setdefault("horizon", pred.model.cfg.horizon)
        samples, _ = build_samples(ingest_annotations(src, cfg.get("min_visible", 0.25)), _window_config(wd))
    probs, traj = pred(samples) if samples else ({t: np.zeros((0, len(LABELS[t]))) for t in TASKS}, None)
    recs = prediction_records(samples, probs, traj)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for r in recs:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    print(f"wrote {len(recs)} predictions to {out}")
    return EXIT_OK


def cmd_track(args) -> int:
    from .tracking import Tracker
    cfg = merged(load_config(args.config), args, ())
    allowed = {"iou_min", "max_misses", "q_pos", "q_vel", "r"}
    unknown = set(cfg) - allowed
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    raw = {}
    for f in annotation_files(args.detections):
        for lineno, line in enumerate(f.read_text().splitlines(), 1):
            if line.strip():
                try:
                    raw.setdefault(f, []).append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{f.name}:{lineno}: invalid JSON ({exc.msg})") from None
    records = []
    for f in sorted(raw):
        recs = read_records(f, require_labels=False)
        records.extend(zip(recs, raw[f]))
    by_scene: dict[str, dict[int, list]] = {}
    for parsed, orig in records:
        by_scene.setdefault(parsed["scene_id"], {}).setdefault(parsed["frame"], []).append((parsed, orig))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_tracks = 0
    with open(out / "tracks.ndjson", "w") as fh:
        for sid in sorted(by_scene):
            tr = Tracker(**cfg)
            frames = by_scene[sid]
            for fr in sorted(frames):
                dets = frames[fr]
                tr.step(fr, [(p["box"], p["pose"]) for p, _ in dets])
                for t in tr.tracks:
                    if t.last_frame != fr:
                        continue
                    box = t.history[-1][1]
                    j = next(i for i, (p, _) in enumerate(dets) if p["box"] is box)
                    rec = dict(dets[j][1])
                    rec["person_id"] = f"t{t.id}"
                    fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
            n_tracks += len(tr.all_tracks())
    print(f"tracked {len(by_scene)} scenes, {n_tracks} tracks")
    return EXIT_OK


# parser ---------------------------------------------------------------------

def _ratios(text: str):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"ratios must be comma-separated numbers, got {text!r}") from None
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pedintent", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic annotated corpus")
    s.add_argument("--spec", help="synthesis spec file (key = value or JSON)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("build", help="window annotations into train/val/test corpora")
    s.add_argument("--annotations", required=True, help="annotation file or directory of *.ndjson")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--ratios", type=_ratios, help="train,val,test fractions")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("train", help="train VRUNet or the modular baseline")
    s.add_argument("--corpus", required=True, help="directory with train/val corpora")
    s.add_argument("--model", choices=("vrunet", "modular"), default="vrunet")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", dest="batch_size", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--resume", help="last.ckpt of an earlier run to continue")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="write a per-task AP and ADE/FDE report")
    s.add_argument("--checkpoint", help="VRUNet checkpoint file or modular model directory")
    s.add_argument("--predictions", help="prediction NDJSON as written by 'predict'")
    s.add_argument("--corpus", required=True, help="test corpus file or build directory")
    s.add_argument("--out", required=True)
    s.add_argument("--name", help="row label in the report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="per-window predictions as NDJSON")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True, help="annotation file/directory or a .pidc corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("track", help="assign track ids to per-frame detections")
    s.add_argument("--detections", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_track)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"pedintent: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .vrunet.train import TrainingDiverged
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"pedintent {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"pedintent {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, DataError, CheckpointError, ShapeError) as exc:
        print(f"pedintent {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
