"""Command-line entry points.

Subcommands: gen-data, train, sample, rank, evaluate, run-all. Every command
takes --config (run config JSON), --seed (overrides the config seed), and
--out. All artifacts are JSON written atomically; all randomness flows from
the explicit seeds, so re-running a command with the same config and seed
reproduces its outputs byte for byte.

Exit codes: 0 success, 2 validation/usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import torch

from . import pipeline as pl
from .config import (
    RunConfig,
    load_run_config,
    paper_config,
    save_run_config,
    toy_config,
    with_seed,
)
from .hoi import dump_json, load_sequence, save_sequence


class ValidationError(ValueError):
    pass


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_run_config(args.config)
    elif getattr(args, "paper_scale", False):
        cfg = paper_config()
    else:
        cfg = toy_config()
    if getattr(args, "seed", None) is not None:
        cfg = with_seed(cfg, args.seed)
    return cfg


def _require_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    if args.count is not None:
        if args.count < 2:
            raise ValidationError("--count must be >= 2")
        import dataclasses

        cfg = dataclasses.replace(cfg, dataset_count=args.count)
    out = _require_dir(args.out)
    manifest = pl.build_dataset(cfg, out)
    n_train = sum(1 for e in manifest["entries"] if e["split"] == "train")
    n_val = len(manifest["entries"]) - n_train
    save_run_config(cfg, os.path.join(out, "run_config.json"))
    print(f"wrote {n_train} train / {n_val} val sequences to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if not os.path.isdir(args.data):
        raise ValidationError(f"dataset directory not found: {args.data}")
    train_seqs, val_seqs, _ = pl.read_split(args.data)
    out = _require_dir(args.out)
    if args.stage == 1:
        ck = os.path.join(out, "stage1.json")
        curves = pl.train_stage1(train_seqs, val_seqs, cfg, ck)
    else:
        motions = val_motions = None
        if args.cond_mode == "pipeline":
            if not args.stage1_ckpt:
                raise ValidationError("--cond-mode pipeline requires --stage1-ckpt")
            motions = [
                pl.sample_stage1_motions(
                    args.stage1_ckpt,
                    pl.SceneInput(pl.scene_input_from_sequence(s)),
                    [cfg.seed + 31 * i],
                )[0]
                for i, s in enumerate(train_seqs)
            ]
            val_motions = [
                pl.sample_stage1_motions(
                    args.stage1_ckpt,
                    pl.SceneInput(pl.scene_input_from_sequence(s)),
                    [cfg.seed + 31 * (len(train_seqs) + i)],
                )[0]
                for i, s in enumerate(val_seqs)
            ]
        ck = os.path.join(out, "stage2.json")
        curves = pl.train_stage2(train_seqs, val_seqs, cfg, ck, motions, val_motions)
    dump_json(curves, os.path.join(out, f"stage{args.stage}_curves.json"))
    print(
        f"stage {args.stage} trained: {len(curves['train_curve'])} epochs, "
        f"val {curves['val_curve'][0]:.4f} -> {curves['val_curve'][-1]:.4f}; checkpoint {ck}"
    )
    return 0


def cmd_sample(args) -> int:
    cfg = _load_config(args)
    for path, label in ((args.stage1_ckpt, "stage-1"), (args.stage2_ckpt, "stage-2")):
        if not os.path.isfile(path):
            raise ValidationError(f"{label} checkpoint not found: {path}")
    if not os.path.isfile(args.input):
        raise ValidationError(f"scene input not found: {args.input}")
    n_cand = args.n_cand if args.n_cand is not None else cfg.n_cand
    if n_cand < 1:
        raise ValidationError("--n-cand must be >= 1")
    scene = pl.load_scene_input(args.input)
    spec = None if args.no_guidance else cfg.guidance
    out = _require_dir(args.out)
    cands = pl.sample_candidates(
        args.stage1_ckpt,
        args.stage2_ckpt,
        scene,
        n_cand,
        cfg.seed,
        spec,
        fit_iters=cfg.fit_iters,
        fit_step=cfg.fit_step,
    )
    for i, cand in enumerate(cands):
        save_sequence(cand, os.path.join(out, f"cand_{i:03d}.json"))
        if args.export_traj:
            pl.export_trajectories_csv(cand, os.path.join(out, f"cand_{i:03d}_traj.csv"))
    summary = {
        "n_cand": n_cand,
        "seed": cfg.seed,
        "guided": spec is not None,
        "files": [f"cand_{i:03d}.json" for i in range(n_cand)],
    }
    dump_json(summary, os.path.join(out, "sample_summary.json"))
    print(f"wrote {n_cand} candidates to {out} (guidance {'on' if spec else 'off'})")
    return 0


def _load_candidates(cand_dir: str):
    if not os.path.isdir(cand_dir):
        raise ValidationError(f"candidate directory not found: {cand_dir}")
    names = sorted(
        n for n in os.listdir(cand_dir) if n.startswith("cand_") and n.endswith(".json")
    )
    if not names:
        raise ValidationError(f"no candidate files under {cand_dir}")
    return names, [load_sequence(os.path.join(cand_dir, n)) for n in names]


def cmd_rank(args) -> int:
    cfg = _load_config(args)
    names, cands = _load_candidates(args.candidates)
    k = args.k if args.k is not None else cfg.top_k
    if k < 1:
        raise ValidationError("--k must be >= 1")
    report = pl.rank_report(cands, k, cfg.scoring)
    report["files"] = names
    out = _require_dir(args.out)
    dump_json(report, os.path.join(out, "rank_report.json"))
    ordered = sorted(report["scores"], key=lambda s: s["rank"])
    for s in ordered[:k]:
        print(
            f"rank {s['rank']}: {names[s['index']]} "
            f"s_c={s['s_c']:.4f} s_t={s['s_t']:.4f} combined={s['combined']:.4f}"
        )
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    for d in (args.gen, args.gt):
        if not os.path.isdir(d):
            raise ValidationError(f"directory not found: {d}")
    gen_names = sorted(n for n in os.listdir(args.gen) if n.endswith(".json"))
    gt_names = sorted(n for n in os.listdir(args.gt) if n.endswith(".json"))
    if not gen_names or len(gen_names) != len(gt_names):
        raise ValidationError(
            f"need matching nonempty sets, got {len(gen_names)} generated vs {len(gt_names)} reference"
        )
    gen = [load_sequence(os.path.join(args.gen, n)) for n in gen_names]
    gt = [load_sequence(os.path.join(args.gt, n)) for n in gt_names]
    result = pl.evaluate_sets(gen, gt, tau=cfg.contact_tau, seed=cfg.seed)
    result["pairs"] = list(zip(gen_names, gt_names))
    out = _require_dir(args.out)
    dump_json(result, os.path.join(out, "metrics.json"))
    print(result["table"])
    if result["pair_errors"]:
        print(f"{len(result['pair_errors'])} pair(s) failed; see metrics.json")
    return 0


def cmd_run_all(args) -> int:
    cfg = _load_config(args)
    if args.count is not None:
        import dataclasses

        if args.count < 2:
            raise ValidationError("--count must be >= 2")
        cfg = dataclasses.replace(cfg, dataset_count=args.count)
    out = _require_dir(args.out)
    data_dir = os.path.join(out, "data")
    ck_dir = _require_dir(os.path.join(out, "checkpoints"))
    cand_dir = _require_dir(os.path.join(out, "candidates"))

    pl.build_dataset(cfg, data_dir)
    train_seqs, val_seqs, _ = pl.read_split(data_dir)
    print(f"[1/6] dataset: {len(train_seqs)} train / {len(val_seqs)} val")

    ck1 = os.path.join(ck_dir, "stage1.json")
    curves1 = pl.train_stage1(train_seqs, val_seqs, cfg, ck1)
    dump_json(curves1, os.path.join(ck_dir, "stage1_curves.json"))
    print(f"[2/6] stage 1: val {curves1['val_curve'][0]:.3f} -> {curves1['val_curve'][-1]:.3f}")

    ck2 = os.path.join(ck_dir, "stage2.json")
    curves2 = pl.train_stage2(train_seqs, val_seqs, cfg, ck2)
    dump_json(curves2, os.path.join(ck_dir, "stage2_curves.json"))
    print(f"[3/6] stage 2: val {curves2['val_curve'][0]:.3f} -> {curves2['val_curve'][-1]:.3f}")

    target = val_seqs[0]
    scene = pl.SceneInput(pl.scene_input_from_sequence(target))
    dump_json(pl.scene_input_from_sequence(target), os.path.join(out, "scene_input.json"))
    cands = pl.sample_candidates(
        ck1, ck2, scene, cfg.n_cand, cfg.seed, cfg.guidance,
        fit_iters=cfg.fit_iters, fit_step=cfg.fit_step,
    )
    for i, cand in enumerate(cands):
        save_sequence(cand, os.path.join(cand_dir, f"cand_{i:03d}.json"))
    print(f"[4/6] sampled {len(cands)} candidates")

    rank = pl.rank_report(cands, cfg.top_k, cfg.scoring)
    rank["files"] = [f"cand_{i:03d}.json" for i in range(len(cands))]
    dump_json(rank, os.path.join(out, "rank_report.json"))
    print(f"[5/6] top-{cfg.top_k}: {rank['top_k']}")

    # evaluate one generated sample per distinct val scene so the reference
    # set carries real variance for the distribution metrics
    eval_targets = val_seqs[: min(len(val_seqs), max(2, cfg.top_k))]
    gen_set = [cands[rank["top_k"][0]]]
    for j, gt_seq in enumerate(eval_targets[1:], start=1):
        sc = pl.SceneInput(pl.scene_input_from_sequence(gt_seq))
        gen_set.append(
            pl.sample_candidates(
                ck1, ck2, sc, 1, cfg.seed + 10007 * j, cfg.guidance,
                fit_iters=cfg.fit_iters, fit_step=cfg.fit_step,
            )[0]
        )
    result = pl.evaluate_sets(gen_set, eval_targets, tau=cfg.contact_tau, seed=cfg.seed)
    consolidated = {
        "config": cfg.to_dict(),
        "stage1_curves": curves1,
        "stage2_curves": curves2,
        "rank": rank,
        "metrics": result,
    }
    dump_json(consolidated, os.path.join(out, "report.json"))
    print("[6/6] evaluation:")
    print(result["table"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hoisynth",
        description="Gaze-conditioned hand-object interaction synthesis pipeline",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="run config JSON path")
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument(
            "--paper-scale", action="store_true",
            help="use full-scale defaults when no --config is given",
        )

    sp = sub.add_parser("gen-data", help="generate the synthetic dataset")
    common(sp)
    sp.add_argument("--count", type=int, default=None, help="number of scenes")
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("train", help="train one diffusion stage")
    common(sp)
    sp.add_argument("--stage", type=int, choices=(1, 2), required=True)
    sp.add_argument("--data", required=True, help="dataset directory from gen-data")
    sp.add_argument(
        "--cond-mode", choices=("teacher", "pipeline"), default="teacher",
        help="stage-2 condition source: GT object motion or stage-1 samples",
    )
    sp.add_argument("--stage1-ckpt", default=None, help="needed for --cond-mode pipeline")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("sample", help="run the full generation cascade")
    common(sp)
    sp.add_argument("--stage1-ckpt", required=True)
    sp.add_argument("--stage2-ckpt", required=True)
    sp.add_argument("--input", required=True, help="scene input JSON")
    sp.add_argument("--n-cand", type=int, default=None)
    sp.add_argument("--no-guidance", action="store_true")
    sp.add_argument(
        "--export-traj", action="store_true",
        help="also write per-candidate trajectory CSVs for plotting",
    )
    sp.set_defaults(fn=cmd_sample)

    sp = sub.add_parser("rank", help="score and rank candidate files")
    common(sp)
    sp.add_argument("--candidates", required=True, help="directory of cand_*.json")
    sp.add_argument("--k", type=int, default=None)
    sp.set_defaults(fn=cmd_rank)

    sp = sub.add_parser("evaluate", help="metric suite over generated/reference pairs")
    common(sp)
    sp.add_argument("--gen", required=True, help="directory of generated sequences")
    sp.add_argument("--gt", required=True, help="directory of reference sequences")
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("run-all", help="gen-data, train both stages, sample, rank, evaluate")
    common(sp)
    sp.add_argument("--count", type=int, default=None, help="dataset size override")
    sp.set_defaults(fn=cmd_run_all)
    return p


def main(argv=None) -> int:
    torch.set_num_threads(1)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (ValidationError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures keep a distinct exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
