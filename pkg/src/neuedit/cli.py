"""Command line: dataset generation, pretraining, editing, evaluation, sweeps.

Every command writes its outputs plus a ``manifest.json`` recording the
argv, the resolved config and the SHA-256 of each output. Failures exit
nonzero with a one-line JSON error on stderr.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import io as nio
from .codec import PatchCodec
from .diffusion.schedule import make_schedule
from .diffusion.training import TextVideoDiffusion
from .embeddings import default_codebook, embed_frames, embed_text
from .metrics import (COLUMNS, MetricReport, edit_region_mask_from_scores, evaluate,
                      textual_alignment)
from .neutralize_text import factor_swap, identify_text_factors
from .neutralize_video import make_neutral_video, upsample_scores
from .pipeline import (EditConfig, build_neutral_prompt, edit, plain_edit_baseline,
                       target_tuning_baseline, tune)
from .world import WorldConfig, all_specs, describe, render_scene, sample_edit_task

SCHEMA_VERSION = 1
SEED_ENV = "NEUEDIT_SEED"

DEFAULT_PRETRAIN = {"steps": 1500, "lr": 3e-3, "batch_size": 4, "prior_rank": 48}


class CLIError(Exception):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


# -- config -----------------------------------------------------------------
def default_run_config():
    return {
        "schema": SCHEMA_VERSION,
        "seed": 0,
        "edit": EditConfig().to_dict(),
        "world": asdict(WorldConfig()),
        "schedule": {"T": 200, "kind": "linear"},
        "pretrain": dict(DEFAULT_PRETRAIN),
    }


def load_run_config(path=None, overrides=None):
    """Merge a JSON config onto the defaults; unknown keys are errors.

    The top-level ``seed`` overrides ``edit.seed``; the ``NEUEDIT_SEED``
    environment variable overrides both.
    """
    cfg = default_run_config()
    user = {}
    if path:
        if not os.path.exists(path):
            raise CLIError("missing_path", f"config not found: {path}")
        user = nio.read_json(path)
    user = _merge(user, overrides or {})
    if user.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise CLIError("config", f"unsupported config schema {user.get('schema')}")
    for key, value in user.items():
        if key not in cfg:
            raise CLIError("config", f"unknown config key {key!r}")
        if isinstance(cfg[key], dict):
            if not isinstance(value, dict):
                raise CLIError("config", f"config section {key!r} must be an object")
            unknown = set(value) - set(cfg[key])
            if unknown:
                raise CLIError("config", f"unknown keys in {key!r}: {sorted(unknown)}")
            cfg[key].update(value)
        else:
            cfg[key] = value
    if os.environ.get(SEED_ENV):
        cfg["seed"] = int(os.environ[SEED_ENV])
    # the top-level seed drives pretraining and editing alike
    cfg["edit"]["seed"] = int(cfg["seed"])
    try:
        EditConfig.from_dict(cfg["edit"])
        WorldConfig(**cfg["world"])
    except (TypeError, ValueError) as exc:
        raise CLIError("config", str(exc)) from None
    return cfg


def _merge(base, extra):
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _require(path, what):
    if not os.path.exists(path):
        raise CLIError("missing_path", f"{what} not found: {path}")


# -- gen-data ---------------------------------------------------------------
def cmd_gen_data(args):
    cfg = load_run_config(args.config)
    world = WorldConfig(**cfg["world"])
    os.makedirs(args.out, exist_ok=True)
    outputs = []
    specs = all_specs(world.frames, world.height, world.width)
    for i in range(args.n):
        d = os.path.join(args.out, f"clip_{i:04d}")
        if args.tasks:
            task = sample_edit_task(args.seed + i, world)
            video = task.video
            meta = {
                "seed": task.seed, "spec": task.source_spec.to_dict(),
                "source_prompt": task.source_prompt, "target_prompt": task.target_prompt,
                "edit_word_index": task.edit_word_index, "edit_word": task.edit_word,
                "source_word": task.source_word, "kind": task.kind,
            }
            outputs += nio.write_score_maps(d, task.edit_region_mask.astype(float), prefix="mask")
        else:
            spec = specs[(i * 89) % len(specs)]
            video = render_scene(spec, args.seed + i, world.patch)
            meta = {"seed": args.seed + i, "spec": spec.to_dict(), "caption": describe(spec)}
        outputs += nio.write_video(d, video)
        outputs.append(nio.write_json(os.path.join(d, "meta.json"), meta))
    nio.write_manifest(args.out, "gen-data", {"n": args.n, "seed": args.seed, "tasks": args.tasks},
                       cfg, outputs, {"argv": args.argv})
    return {"out": args.out, "clips": args.n}


def _clip_dirs(root):
    _require(root, "data directory")
    dirs = sorted(os.path.join(root, n) for n in os.listdir(root) if n.startswith("clip_"))
    if not dirs:
        raise CLIError("missing_path", f"no clip_* directories in {root}")
    return dirs


# -- pretrain ---------------------------------------------------------------
def pretrain_model(data, cfg):
    p = cfg["pretrain"]
    est = TextVideoDiffusion(
        T_steps=cfg["schedule"]["T"], schedule=cfg["schedule"]["kind"],
        steps=p["steps"], lr=p["lr"], batch_size=p["batch_size"],
        prior_rank=p["prior_rank"], seed=cfg["seed"],
    )
    est.fit(data)
    return est


def cmd_pretrain(args):
    cfg = load_run_config(args.config)
    if args.steps is not None:
        cfg["pretrain"]["steps"] = args.steps
    codec = PatchCodec(patch=cfg["world"]["patch"])
    data = []
    for d in _clip_dirs(args.data):
        meta = nio.read_json(os.path.join(d, "meta.json"))
        caption = meta.get("caption") or meta["source_prompt"]
        data.append((codec.encode(nio.read_video(d)), embed_text(caption).w))
    est = pretrain_model(data, cfg)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    nio.save_checkpoint(args.out, est.model_, est.schedule_, codec.hash, default_codebook().hash,
                        {"pretrain": cfg["pretrain"], "n_clips": len(data)})
    loss_path = os.path.splitext(args.out)[0] + ".loss.csv"
    nio.write_csv(loss_path, ["step", "loss"], [[i + 1, v] for i, v in enumerate(est.loss_curve_)])
    nio.write_manifest(out_dir, "pretrain", {"data": nio.directory_hash(args.data)}, cfg,
                       [args.out, loss_path], {"argv": args.argv})
    return {"checkpoint": args.out, "final_loss": float(np.mean(est.loss_curve_[-50:]))}


# -- edit -------------------------------------------------------------------
def _load_ckpt(path):
    _require(path, "checkpoint")
    model, header = nio.load_checkpoint(path)
    sched = make_schedule(header["schedule"]["T"], header["schedule"]["kind"])
    return model, sched


def _task_mask(video_dir, shape):
    blob = os.path.join(video_dir, "mask.f64")
    if os.path.exists(blob):
        return nio.read_blob(blob, shape[:3]) > 0.5
    return None


def run_edit(model, sched, video, prompt, ecfg, method, source_prompt=None, codec=None):
    if method == "neuedit":
        np_ = build_neutral_prompt(prompt, video, ecfg)
        tuned, curve = tune(model, video, np_, ecfg, sched, codec)
        res = edit(tuned, video, prompt, ecfg, sched, np_, codec)
        res.loss_curve = curve
        return res
    if method == "plain":
        if not source_prompt:
            raise CLIError("usage", "the plain baseline needs --source-prompt")
        return plain_edit_baseline(model, video, source_prompt, prompt, ecfg, sched, codec)
    if method == "target":
        return target_tuning_baseline(model, video, prompt, ecfg, sched, codec)
    raise CLIError("usage", f"unknown method {method!r}")


def cmd_edit(args):
    cfg = load_run_config(args.config)
    ecfg = EditConfig.from_dict(cfg["edit"])
    model, sched = _load_ckpt(args.ckpt)
    _require(args.video, "video directory")
    video = nio.read_video(args.video)
    meta_path = os.path.join(args.video, "meta.json")
    meta = nio.read_json(meta_path) if os.path.exists(meta_path) else {}
    source = args.source_prompt or meta.get("source_prompt") or meta.get("caption")
    codec = PatchCodec(patch=cfg["world"]["patch"])
    res = run_edit(model, sched, video, args.prompt, ecfg, args.method, source, codec)

    out = args.out
    os.makedirs(out, exist_ok=True)
    outputs = nio.write_video(os.path.join(out, "edited"), res.edited)
    np_ = res.neutral_prompt
    outputs.append(nio.write_blob(os.path.join(out, "prompt_features.f64"), np_.w))
    outputs.append(nio.write_json(os.path.join(out, "neutral_prompt.json"),
                                  np_.to_dict({"path": "prompt_features.f64",
                                               "sha256": np_.feature_hash,
                                               "shape": list(np_.w.shape)})))
    ckpt = os.path.join(out, "tuned.ckpt")
    nio.save_checkpoint(ckpt, res.tuned_model, sched, codec.hash, default_codebook().hash)
    outputs.append(ckpt)
    outputs.append(nio.write_csv(os.path.join(out, "tuning_loss.csv"), ["step", "loss"],
                                 [[i + 1, v] for i, v in enumerate(res.loss_curve)]))
    auto_mask = None
    if res.visual_scores is not None:
        outputs += nio.write_score_maps(os.path.join(out, "visual_scores"), res.visual_scores.z)
        outputs += nio.write_video(os.path.join(out, "neutral_video"), res.neutral_video.frames)
        outputs.append(nio.write_blob(os.path.join(out, "attention.f64"), res.attention))
        auto_mask = edit_region_mask_from_scores(res.visual_scores, 0)
    gt = _task_mask(args.video, video.shape)
    report = evaluate(res.edited, video, args.prompt, task=os.path.basename(os.path.normpath(args.video)),
                      kind=meta.get("kind", ""), method=args.method, gt_mask=gt, auto_mask=auto_mask)
    run_meta = {
        "prompt": args.prompt, "source_prompt": source, "method": args.method,
        "attention_shape": list(res.attention.shape) if res.attention is not None else None,
        "grid": [video.shape[1] // codec.patch, video.shape[2] // codec.patch],
        "words": embed_text(args.prompt).tokens,
    }
    outputs.append(nio.write_json(os.path.join(out, "run.json"), run_meta))
    outputs.append(nio.write_json(os.path.join(out, "metrics.json"), report.to_dict()))
    nio.write_manifest(out, "edit", {"video": nio.directory_hash(args.video),
                                     "checkpoint": nio.sha256_file(args.ckpt)},
                       cfg, outputs, {"argv": args.argv})
    return {"out": out, "metrics": report.to_dict()}


# -- eval -------------------------------------------------------------------
def cmd_eval(args):
    _require(args.runs, "runs directory")
    rows = []
    for root, _, names in sorted(os.walk(args.runs)):
        if "metrics.json" in names:
            rows.append(MetricReport.from_dict(nio.read_json(os.path.join(root, "metrics.json"))))
    if not rows:
        raise CLIError("missing_path", f"no metrics.json under {args.runs}")
    rows.sort(key=lambda r: (r.task, r.method))
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    nio.write_csv(args.out, COLUMNS, [[r.to_dict()[k] for k in COLUMNS] for r in rows])
    summary = {}
    for method in sorted({r.method for r in rows}):
        sel = [r for r in rows if r.method == method]
        summary[method] = {k: float(np.nanmean([getattr(r, k) for r in sel]))
                           for k in ("alignment", "masked_psnr", "masked_ssim", "frame_consistency")}
    summary_path = os.path.splitext(args.out)[0] + ".summary.json"
    nio.write_json(summary_path, summary)
    nio.write_manifest(out_dir, "eval", {"runs": args.runs}, {}, [args.out, summary_path],
                       {"argv": args.argv})
    return {"rows": len(rows), "summary": summary}


# -- sweep ------------------------------------------------------------------
def plot_curve(xs, ys, height=96, width=192, margin=8):
    """Rasterize a polyline on a white canvas (for PGM output)."""
    img = np.ones((height, width))
    img[height - margin, margin:width - margin] = 0.6
    img[margin:height - margin + 1, margin] = 0.6
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) == 0:
        return img
    span_x = np.ptp(xs) or 1.0
    span_y = np.ptp(ys) or 1.0
    px = margin + (xs - xs.min()) / span_x * (width - 2 * margin - 1)
    py = height - margin - (ys - ys.min()) / span_y * (height - 2 * margin - 1)
    for i in range(len(xs) - 1):
        n = int(max(abs(px[i + 1] - px[i]), abs(py[i + 1] - py[i]))) + 1
        for u in np.linspace(0, 1, n + 1):
            x = int(round(px[i] + u * (px[i + 1] - px[i])))
            y = int(round(py[i] + u * (py[i + 1] - py[i])))
            img[max(y - 0, 0):y + 1, x] = 0.0
    for x, y in zip(px, py):
        x, y = int(round(x)), int(round(y))
        img[max(y - 1, 0):y + 2, max(x - 1, 0):x + 2] = 0.0
    return img


def _parse_grid(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CLIError("usage", f"bad grid {text!r}") from None


def sweep_rows(param, grid, tasks, model, sched, ecfg, codec=None):
    """One row per (value, task) with swap count, alignment and change magnitude."""
    rows = []
    for task in tasks:
        tp = embed_text(task.target_prompt)
        v = embed_frames(task.video, strict=False).v
        z = identify_text_factors(tp.w, v, tp.tokens).z
        for value in grid:
            row = {"param": param, "value": value, "task": task.seed, "swaps": "",
                   "alignment": "", "change": ""}
            if param == "s":
                c = EditConfig(**{**ecfg.to_dict(), "variant": "swap", "s": value})
                row["swaps"] = factor_swap(tp.tokens, z, value).metadata["n_swapped"]
            elif param == "alpha":
                c = EditConfig(**{**ecfg.to_dict(), "variant": "deform", "alpha": value})
            elif param == "sigma":
                c = EditConfig(**{**ecfg.to_dict(), "sigma": value})
            else:
                raise CLIError("usage", f"unknown sweep parameter {param!r}")
            if param == "sigma":
                # change magnitude of the neutral video inside the true edit region
                nv = make_neutral_video(task.video, task.edit_region_mask.astype(float), value)
                m = task.edit_region_mask
                row["change"] = float(np.abs(nv.frames - task.video)[m].mean())
            else:
                np_ = build_neutral_prompt(task.target_prompt, task.video, c, v)
                tuned, _ = tune(model, task.video, np_, c, sched, codec)
                res = edit(tuned, task.video, task.target_prompt, c, sched, np_, codec)
                row["alignment"] = textual_alignment(res.edited, task.target_prompt)
            rows.append(row)
    return rows


def cmd_sweep(args):
    cfg = load_run_config(args.config)
    ecfg = EditConfig.from_dict(cfg["edit"])
    if args.tuning_steps is not None:
        ecfg.tuning_steps = args.tuning_steps
    grid = _parse_grid(args.grid)
    world = WorldConfig(**cfg["world"])
    tasks = [sample_edit_task(cfg["seed"] + 2 * i, world) for i in range(args.tasks)]
    if args.param == "sigma":
        model, sched = None, None
    else:
        if not args.ckpt:
            raise CLIError("usage", f"sweeping {args.param} needs --ckpt")
        model, sched = _load_ckpt(args.ckpt)
    codec = PatchCodec(patch=world.patch)
    rows = sweep_rows(args.param, grid, tasks, model, sched, ecfg, codec)
    os.makedirs(args.out, exist_ok=True)
    cols = ["param", "value", "task", "swaps", "alignment", "change"]
    raw = nio.write_csv(os.path.join(args.out, f"sweep_{args.param}_raw.csv"), cols,
                        [[r[c] for c in cols] for r in rows])
    curve = []
    for value in grid:
        sel = [r for r in rows if r["value"] == value]
        entry = {"value": value}
        for key in ("swaps", "alignment", "change"):
            vals = [r[key] for r in sel if r[key] != ""]
            entry[key] = float(np.mean(vals)) if vals else ""
        curve.append(entry)
    ccols = ["value", "swaps", "alignment", "change"]
    cpath = nio.write_csv(os.path.join(args.out, f"sweep_{args.param}.csv"), ccols,
                          [[e[c] for c in ccols] for e in curve])
    outputs = [raw, cpath]
    for key in ("swaps", "alignment", "change"):
        ys = [e[key] for e in curve]
        if all(y != "" for y in ys):
            p = os.path.join(args.out, f"sweep_{args.param}_{key}.pgm")
            nio.write_pgm(p, plot_curve(grid, ys))
            outputs.append(p)
    nio.write_manifest(args.out, "sweep", {"param": args.param, "grid": grid,
                                           "tasks": [t.seed for t in tasks],
                                           "checkpoint": nio.sha256_file(args.ckpt) if args.ckpt else None},
                       cfg, outputs, {"argv": args.argv})
    return {"out": args.out, "curve": curve}


# -- inspect-attn -----------------------------------------------------------
def cmd_inspect_attn(args):
    run = args.run
    _require(os.path.join(run, "attention.f64"), "attention blob")
    meta = nio.read_json(os.path.join(run, "run.json"))
    attn = nio.read_blob(os.path.join(run, "attention.f64"), meta["attention_shape"])
    hp, wp = meta["grid"]
    edited = nio.read_video(os.path.join(run, "edited"))
    L, H, W, _ = edited.shape
    out = os.path.join(run, "attn")
    os.makedirs(out, exist_ok=True)
    outputs = []
    words = meta["words"]
    for j, word in enumerate(words):
        maps = attn[..., j].reshape(L, hp, wp)
        up = upsample_scores(maps / max(maps.max(), 1e-12), H, W)
        for i in range(L):
            p = os.path.join(out, f"w{j:02d}_{_safe(word)}_f{i:03d}.pgm")
            nio.write_pgm(p, up[i])
            outputs.append(p)
    nio.write_manifest(out, "inspect-attn", {"run": run}, {}, outputs, {"argv": args.argv})
    return {"out": out, "maps": len(outputs)}


def _safe(word):
    return "".join(ch if ch.isalnum() else "_" for ch in word)


# -- entry point ------------------------------------------------------------
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("usage", message)


def build_parser():
    p = _Parser(prog="neuedit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tasks", action="store_true", help="write edit tasks instead of captioned clips")
    g.add_argument("--config")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("pretrain", help="train the base denoiser")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int)
    t.add_argument("--config")
    t.set_defaults(func=cmd_pretrain)

    e = sub.add_parser("edit", help="tune on one clip and edit it")
    e.add_argument("--video", required=True)
    e.add_argument("--prompt", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--config")
    e.add_argument("--method", choices=["neuedit", "plain", "target"], default="neuedit")
    e.add_argument("--source-prompt")
    e.set_defaults(func=cmd_edit)

    v = sub.add_parser("eval", help="aggregate run metrics into one table")
    v.add_argument("--runs", required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="sweep s, alpha or sigma")
    s.add_argument("--param", required=True, choices=["s", "alpha", "sigma"])
    s.add_argument("--grid", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ckpt")
    s.add_argument("--tasks", type=int, default=3)
    s.add_argument("--tuning-steps", type=int)
    s.add_argument("--config")
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("inspect-attn", help="dump attention heatmaps of an edit run")
    a.add_argument("--run", required=True)
    a.set_defaults(func=cmd_inspect_attn)
    return p


def main(argv=None):
    try:
        argv = sys.argv[1:] if argv is None else [str(a) for a in argv]
        args = build_parser().parse_args(argv)
        args.argv = argv
        result = args.func(args)
    except CLIError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)}), file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(nio.finite_json(result), default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
