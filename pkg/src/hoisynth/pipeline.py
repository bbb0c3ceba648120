"""End-to-end orchestration: dataset build, two-stage training, guided
sampling with post-optimization, ranking, and evaluation.

Inference follows the cascade: the object-motion denoiser runs first,
conditioned on the gaze encoding and the initial object pose; its output
becomes part of the condition for the hand-motion denoiser, whose sampling
loop applies the sphere-constrained guidance step against contact,
penetration, and kinematic-consistency losses evaluated on decoded raw
frames. The sampled joint tracks are then converted to 61-parameter hand
poses by the fitting optimizer, clamped to the articulation limits, and
serialized alongside the sampled object motion.

Training offers two condition modes for stage 2: teacher mode conditions on
ground-truth object motion (the default; cheap and stable for the cascade),
pipeline mode conditions on stage-1 samples.
"""

from __future__ import annotations

import json
import os

import numpy as np
import torch

from .conditioning import (
    GazeConditioner,
    pooled_descriptor,
    object_pose_rows,
    stage1_condition,
    stage2_condition,
    static_motion,
)
from .config import RunConfig
from .diffusion import (
    Checkpoint,
    TrainItem,
    load_checkpoint,
    sample,
    save_checkpoint,
    static_condition_provider,
    train,
)
from .geometry import PointCloud, Rotation
from .guidance import ActiveGuidance, GuidanceSpec, canonical_guidance_loss
from .hand import HandPose, HandShape, clamp_pose_angles, fit_poses_to_joints, FittingDivergence
from .hoi import (
    GazeSequence,
    HandMotion,
    InteractionSequence,
    J_SLICE,
    ObjectMotion,
    canonicalize,
    dump_json,
    load_sequence,
    save_sequence,
)
from .metrics import (
    MetricsReport,
    canonical_features,
    contact_frame_ratio,
    diversity,
    fid,
    fol,
    mpjpe,
    mpvpe,
    penetration_depth,
    standardize_features,
)
from .selection import rank_candidates
from .synth import DatasetSplit, generate_dataset

DT = torch.float64


# ---------------------------------------------------------------------------
# dataset on disk


def write_dataset(split: DatasetSplit, outdir: str) -> dict:
    os.makedirs(os.path.join(outdir, "train"), exist_ok=True)
    os.makedirs(os.path.join(outdir, "val"), exist_ok=True)
    by_name = {}
    for (seq, meta), entry in zip(
        split.train + split.val, split.manifest["entries"]
    ):
        by_name[entry["name"]] = (seq, entry["split"])
    for name, (seq, which) in by_name.items():
        save_sequence(seq, os.path.join(outdir, which, f"{name}.json"))
    dump_json(split.manifest, os.path.join(outdir, "manifest.json"))
    return split.manifest


def build_dataset(cfg: RunConfig, outdir: str) -> dict:
    split = generate_dataset(cfg.scene, cfg.dataset_count, cfg.seed)
    return write_dataset(split, outdir)


def read_split(outdir: str):
    """(train sequences, val sequences, manifest), ordered by filename."""
    with open(os.path.join(outdir, "manifest.json")) as fh:
        manifest = json.load(fh)
    out = {"train": [], "val": []}
    for which in ("train", "val"):
        d = os.path.join(outdir, which)
        for name in sorted(os.listdir(d)):
            if name.endswith(".json"):
                out[which].append(load_sequence(os.path.join(d, name)))
        if not out[which]:
            raise ValueError(f"no sequences under {d}")
    return out["train"], out["val"], manifest


# ---------------------------------------------------------------------------
# scene input (first frame + gaze + geometry)


def scene_input_from_sequence(seq: InteractionSequence) -> dict:
    h = seq.hands
    return {
        "version": 1,
        "fps": seq.fps,
        "gaze": seq.gaze.points.tolist(),
        "left0": h.left[0].to_vector(h.left_shape.beta).tolist(),
        "right0": h.right[0].to_vector(h.right_shape.beta).tolist(),
        "object0": {
            "rot6d": Rotation(seq.object_motion.rotations[0]).to_rot6d().tolist(),
            "trans": seq.object_motion.translations[0].tolist(),
        },
        "geometry": {
            "points": seq.geometry.points.tolist(),
            "normals": seq.geometry.normals.tolist(),
        },
    }


class SceneInput:
    """Parsed inference input: gaze track, initial hands/object, geometry."""

    def __init__(self, doc: dict):
        if doc.get("version") != 1:
            raise ValueError(f"unsupported scene input version {doc.get('version')!r}")
        self.fps = int(doc["fps"])
        self.gaze = GazeSequence(np.asarray(doc["gaze"], dtype=np.float64))
        self.left0 = np.asarray(doc["left0"], dtype=np.float64).reshape(61)
        self.right0 = np.asarray(doc["right0"], dtype=np.float64).reshape(61)
        obj = doc["object0"]
        self.object_rot0 = Rotation.from_rot6d(np.asarray(obj["rot6d"], dtype=np.float64)).matrix
        self.object_trans0 = np.asarray(obj["trans"], dtype=np.float64).reshape(3)
        geom = doc["geometry"]
        self.cloud = PointCloud(
            np.asarray(geom["points"], dtype=np.float64),
            np.asarray(geom["normals"], dtype=np.float64),
        )

    @property
    def length(self) -> int:
        return len(self.gaze)


def load_scene_input(path: str) -> SceneInput:
    with open(path) as fh:
        return SceneInput(json.load(fh))


# ---------------------------------------------------------------------------
# training


def _stage1_payload(seq: InteractionSequence) -> dict:
    init = static_motion(
        seq.object_motion.rotations[0], seq.object_motion.translations[0], seq.length
    )
    return {
        "gaze": seq.gaze,
        "cloud": seq.geometry,
        "static_motion": init,
        "init_row": object_pose_rows(init)[0],
        "pooled": pooled_descriptor(seq.geometry),
    }


class Stage1CondProvider(torch.nn.Module):
    """Wraps the trainable gaze conditioner as a TrainItem -> condition map."""

    def __init__(self, generator: torch.Generator):
        super().__init__()
        self.conditioner = GazeConditioner(generator)

    def forward(self, item: TrainItem) -> torch.Tensor:
        p = item.payload
        c_g = self.conditioner(p["gaze"], p["static_motion"], p["cloud"])
        return stage1_condition(c_g, p["init_row"], p["pooled"])


def stage1_items(seqs) -> list:
    items = []
    for seq in seqs:
        items.append(
            TrainItem(
                x0=object_pose_rows(seq.object_motion),
                verts=seq.geometry.points,
                payload=_stage1_payload(seq),
            )
        )
    return items


def train_stage1(train_seqs, val_seqs, cfg: RunConfig, out_path: str) -> dict:
    provider = Stage1CondProvider(torch.Generator().manual_seed(cfg.seed + 17))
    result = train(
        stage1_items(train_seqs), stage1_items(val_seqs), provider, cfg.stage1, cfg.seed
    )
    save_checkpoint(
        out_path,
        cfg.stage1,
        result.normalizer,
        {"denoiser": result.denoiser, "conditioner": provider.conditioner},
    )
    return {"train_curve": result.train_curve, "val_curve": result.val_curve}


def _stage2_item(seq: InteractionSequence, motion: ObjectMotion) -> TrainItem:
    hoi = canonicalize(seq)
    h = seq.hands
    cond = stage2_condition(
        motion,
        pooled_descriptor(seq.geometry),
        h.left[0].to_vector(h.left_shape.beta),
        h.right[0].to_vector(h.right_shape.beta),
    )
    return TrainItem(x0=hoi.frames, cond_static=cond.numpy())


def stage2_items(seqs, motions=None) -> list:
    motions = motions or [s.object_motion for s in seqs]
    return [_stage2_item(s, m) for s, m in zip(seqs, motions)]


def train_stage2(
    train_seqs, val_seqs, cfg: RunConfig, out_path: str, motions=None, val_motions=None
) -> dict:
    """Teacher mode by default: condition rows come from GT object motion.

    Pipeline mode passes stage-1 samples as `motions`/`val_motions`.
    """
    result = train(
        stage2_items(train_seqs, motions),
        stage2_items(val_seqs, val_motions),
        static_condition_provider,
        cfg.stage2,
        cfg.seed,
    )
    save_checkpoint(out_path, cfg.stage2, result.normalizer, {"denoiser": result.denoiser})
    return {"train_curve": result.train_curve, "val_curve": result.val_curve}


def sample_stage1_motions(ck_path: str, scene: SceneInput, seeds) -> list:
    """Stage-1 samples decoded to rigid object motions, one per seed."""
    ck = load_checkpoint(ck_path)
    net = ck.build_denoiser()
    conditioner = GazeConditioner(torch.Generator().manual_seed(0))
    ck.load_module("conditioner", conditioner)
    init = static_motion(scene.object_rot0, scene.object_trans0, scene.length)
    with torch.no_grad():
        c_g = conditioner(scene.gaze, init, scene.cloud)
    cond = stage1_condition(c_g, object_pose_rows(init)[0], pooled_descriptor(scene.cloud))
    sched = ck.config.schedule()
    out = []
    for s in seeds:
        xn = sample(net, cond, sched, int(s), clip_range=ck.config.clip_range)
        rows = ck.normalizer.decode(xn.numpy())
        out.append(ObjectMotion.from_rot6d(rows[:, :6], rows[:, 6:]))
    return out


# ---------------------------------------------------------------------------
# inference cascade


def _posed_surface_torch(motion: ObjectMotion, cloud: PointCloud):
    rot = torch.from_numpy(np.array(motion.rotations))
    tr = torch.from_numpy(np.array(motion.translations))
    pts = torch.from_numpy(np.array(cloud.points))
    nrm = torch.from_numpy(np.array(cloud.normals))
    surface = torch.einsum("lij,nj->lni", rot, pts) + tr[:, None, :]
    normals = torch.einsum("lij,nj->lni", rot, nrm)
    return surface, normals


def _fit_hand_track(
    joints: np.ndarray, shape: HandShape, init: HandPose, iters: int, step: float
) -> list:
    try:
        fits = fit_poses_to_joints(joints, shape, init=init, iters=iters, step=step)
    except FittingDivergence as exc:
        fits = exc.results
    return [clamp_pose_angles(f.pose) for f in fits]


def generate_candidate(
    stage1_ck: Checkpoint,
    stage2_ck: Checkpoint,
    stage1_net,
    stage2_net,
    stage1_cond: torch.Tensor,
    scene: SceneInput,
    spec: GuidanceSpec | None,
    seed: int,
    fit_iters: int,
    fit_step: float,
) -> InteractionSequence:
    """One full cascade pass under one seed."""
    sched1 = stage1_ck.config.schedule()
    xn1 = sample(stage1_net, stage1_cond, sched1, seed, clip_range=stage1_ck.config.clip_range)
    rows = stage1_ck.normalizer.decode(xn1.numpy())
    motion = ObjectMotion.from_rot6d(rows[:, :6], rows[:, 6:])

    cond2 = stage2_condition(
        motion, pooled_descriptor(scene.cloud), scene.left0, scene.right0
    )
    active = None
    if spec is not None:
        surface, normals = _posed_surface_torch(motion, scene.cloud)
        norm = stage2_ck.normalizer

        def loss_fn(x0n: torch.Tensor):
            return canonical_guidance_loss(
                norm.decode_t(x0n), surface, normals, float(scene.fps), spec
            )

        active = ActiveGuidance(spec, loss_fn)
    sched2 = stage2_ck.config.schedule()
    xn2 = sample(
        stage2_net, cond2, sched2, seed + 7919,
        guidance=active, clip_range=stage2_ck.config.clip_range,
    )
    frames = stage2_ck.normalizer.decode(xn2.numpy())

    joints = frames[:, J_SLICE].reshape(-1, 42, 3)
    left_pose0, left_beta = HandPose.from_vector(scene.left0)
    right_pose0, right_beta = HandPose.from_vector(scene.right0)
    left_shape = HandShape(left_beta, "left")
    right_shape = HandShape(right_beta, "right")
    left = _fit_hand_track(joints[:, :21], left_shape, left_pose0, fit_iters, fit_step)
    right = _fit_hand_track(joints[:, 21:], right_shape, right_pose0, fit_iters, fit_step)
    hands = HandMotion(left_shape, right_shape, left, right)
    return InteractionSequence(scene.gaze, hands, motion, scene.cloud, scene.fps)


def sample_candidates(
    stage1_path: str,
    stage2_path: str,
    scene: SceneInput,
    n_cand: int,
    seed: int,
    spec: GuidanceSpec | None,
    fit_iters: int = 200,
    fit_step: float = 0.1,
) -> list:
    """n_cand cascade samples under consecutive derived seeds."""
    ck1 = load_checkpoint(stage1_path)
    ck2 = load_checkpoint(stage2_path)
    net1 = ck1.build_denoiser()
    net2 = ck2.build_denoiser()
    conditioner = GazeConditioner(torch.Generator().manual_seed(0))
    ck1.load_module("conditioner", conditioner)
    init = static_motion(scene.object_rot0, scene.object_trans0, scene.length)
    with torch.no_grad():
        c_g = conditioner(scene.gaze, init, scene.cloud)
    cond1 = stage1_condition(c_g, object_pose_rows(init)[0], pooled_descriptor(scene.cloud))
    return [
        generate_candidate(
            ck1, ck2, net1, net2, cond1, scene, spec, seed + 1000 * i, fit_iters, fit_step
        )
        for i in range(n_cand)
    ]


# ---------------------------------------------------------------------------
# ranking and evaluation


def rank_report(candidates, k: int, params) -> dict:
    top, scores = rank_candidates(candidates, k, params)
    return {
        "top_k": top,
        "scores": [s.to_dict() for s in scores],
    }


def _pair_metrics(gen: InteractionSequence, gt: InteractionSequence, tau: float) -> dict:
    from .metrics import _sequence_joints

    if gen.length != gt.length:
        raise ValueError(f"length mismatch: generated {gen.length} vs reference {gt.length}")
    if gen.geometry.points.shape != gt.geometry.points.shape:
        raise ValueError("geometry mismatch between generated and reference")
    return {
        "mpjpe_mm": mpjpe(_sequence_joints(gen), _sequence_joints(gt)),
        "mpvpe_mm": mpvpe(gen.object_motion, gt.object_motion, gt.geometry),
        "fol_mm": fol(gen.object_motion, gt.object_motion),
        "cf_percent": contact_frame_ratio(gen, tau),
        "pd_mm": penetration_depth(gen),
    }


def evaluate_sets(gen_seqs, gt_seqs, tau: float = 0.01, div_pairs: int = 20, seed: int = 0) -> dict:
    """Paired accuracy metrics plus set-level fid/diversity; mean and std."""
    if len(gen_seqs) != len(gt_seqs) or not gen_seqs:
        raise ValueError("need equal nonempty generated/reference lists")
    per_pair = []
    errors = []
    for i, (gen, gt) in enumerate(zip(gen_seqs, gt_seqs)):
        try:
            per_pair.append(_pair_metrics(gen, gt, tau))
        except (ValueError, RuntimeError) as exc:
            errors.append({"pair": i, "error": str(exc)})
    if not per_pair:
        raise RuntimeError(f"all {len(errors)} evaluation pairs failed")
    keys = list(per_pair[0].keys())
    agg = {
        k: {
            "mean": float(np.mean([p[k] for p in per_pair])),
            "std": float(np.std([p[k] for p in per_pair])),
        }
        for k in keys
    }
    set_metrics_valid = len(gen_seqs) >= 2
    if set_metrics_valid:
        gt_feats = np.stack([canonical_features(canonicalize(s).frames) for s in gt_seqs])
        # a reference set without variance (e.g. one target repeated) cannot
        # anchor distribution statistics
        if float(gt_feats.std(axis=0).max()) < 1e-12:
            set_metrics_valid = False
    if set_metrics_valid:
        gen_feats = np.stack([canonical_features(canonicalize(s).frames) for s in gen_seqs])
        gen_std, gt_std = standardize_features(gen_feats, gt_feats)
        fid_val = fid(gt_std, gen_std)
        div_val = diversity(gen_std, pairs=div_pairs, seed=seed)
    else:
        fid_val = div_val = 0.0
    report = MetricsReport(
        mpjpe_mm=agg["mpjpe_mm"]["mean"],
        mpvpe_mm=agg["mpvpe_mm"]["mean"],
        fol_mm=agg["fol_mm"]["mean"],
        cf_percent=agg["cf_percent"]["mean"],
        pd_mm=agg["pd_mm"]["mean"],
        fid=fid_val,
        diversity=div_val,
    )
    return {
        "report": report.to_dict(),
        "aggregate": agg,
        "per_pair": per_pair,
        "pair_errors": errors,
        "set_metrics_valid": set_metrics_valid,
        "table": report.table(),
    }


def export_trajectories_csv(seq: InteractionSequence, path: str) -> None:
    """Frame-indexed gaze/wrist/object-center tracks for plotting."""
    from .selection import sequence_trajectories

    lw, rw, oc = sequence_trajectories(seq)
    g = seq.gaze.points
    header = (
        "frame,gaze_x,gaze_y,gaze_z,left_x,left_y,left_z,"
        "right_x,right_y,right_z,obj_x,obj_y,obj_z"
    )
    lines = [header]
    for i in range(seq.length):
        row = np.concatenate([[i], g[i], lw[i], rw[i], oc[i]])
        lines.append(",".join(repr(float(v)) if j else str(int(v)) for j, v in enumerate(row)))
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
