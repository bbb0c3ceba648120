"""DDPM machinery with x0 prediction for both pipeline stages.

The denoiser predicts x̂_0 directly.  Training and sampling run in
per-channel standardized space (statistics stored with the checkpoint); all
stage losses are evaluated in raw units after decoding, so the published
loss weights keep their meter-scale meaning.

Stage state layouts: stage 1 is the object pose row [rot6d | trans] (9),
stage 2 the canonical interaction vector (333).

Reductions, since the loss equations name norms without dimensions:
L_trans sums per-frame translation-error norms; L_verts sums per-frame
Frobenius norms over the N x 3 vertex displacement (a uniform 1 cm error on
one frame contributes 0.01 * sqrt(N)); L_smooth is one Frobenius norm of
the frame-difference stack of the prediction; L_bone is one Frobenius norm
over all frames and both hands' 20 bone-length errors.
"""

from __future__ import annotations

import base64
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .conditioning import seeded_uniform_
from .geometry import PointCloud
from .hand.skeleton import bone_lengths_torch
from .hoi import J_SLICE, ObjectMotion

DT = torch.float64

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 2e-2


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule, 1-indexed in t; index 0 holds alphaBar_0 = 1."""

    T: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END

    def __post_init__(self) -> None:
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ValueError("need 0 < beta_start <= beta_end < 1")
        beta = np.zeros(self.T + 1)
        beta[1:] = np.linspace(self.beta_start, self.beta_end, self.T)
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        if np.any(np.diff(alpha_bar[1:]) >= 0) and self.T > 1:
            raise ValueError("alpha_bar must be strictly decreasing")
        sigma2 = np.zeros(self.T + 1)
        sigma2[1:] = beta[1:] * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:])
        for name, arr in (
            ("beta", beta),
            ("alpha", alpha),
            ("alpha_bar", alpha_bar),
            ("sigma2", sigma2),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"t must be in [1, {self.T}], got {t}")


def forward_diffuse(x0: torch.Tensor, t, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """x_t = sqrt(alphaBar_t) x0 + sqrt(1 - alphaBar_t) eps."""
    ab = sched.alpha_bar
    if torch.is_tensor(t):
        tn = t.numpy()
        if np.any(tn < 1) or np.any(tn > sched.T):
            raise ValueError(f"t must be in [1, {sched.T}]")
        f = torch.from_numpy(np.sqrt(ab[tn]))
        g = torch.from_numpy(np.sqrt(1.0 - ab[tn]))
        while f.dim() < x0.dim():
            f = f.unsqueeze(-1)
            g = g.unsqueeze(-1)
        return f * x0 + g * eps
    sched.check_t(int(t))
    return math.sqrt(ab[int(t)]) * x0 + math.sqrt(1.0 - ab[int(t)]) * eps


def posterior_mean_variance(
    x_t: torch.Tensor, x0_hat: torch.Tensor, t: int, sched: NoiseSchedule
) -> tuple[torch.Tensor, float]:
    """DDPM posterior q(x_{t-1} | x_t, x0_hat): mean tensor and variance."""
    sched.check_t(t)
    ab, ab_prev = sched.alpha_bar[t], sched.alpha_bar[t - 1]
    beta = sched.beta[t]
    c0 = math.sqrt(ab_prev) * beta / (1.0 - ab)
    ct = math.sqrt(sched.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab)
    return c0 * x0_hat + ct * x_t, float(sched.sigma2[t])


def loss_simple(x0, x0_hat):
    """Mean squared error over all entries; torch or numpy."""
    if torch.is_tensor(x0_hat):
        return ((x0 - x0_hat) ** 2).mean()
    return float(np.mean((np.asarray(x0) - np.asarray(x0_hat)) ** 2))


# ---------------------------------------------------------------------------
# denoiser


def sinusoidal_time_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """(B,) step indices -> (B, dim) sin/cos features; dim must be even."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=DT) / max(half - 1, 1)
    )
    ang = t.to(DT)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


def rot6d_to_matrix(r6: torch.Tensor) -> torch.Tensor:
    """Differentiable Gram-Schmidt decode of (..., 6) -> (..., 3, 3)."""
    a1, a2 = r6[..., 0:3], r6[..., 3:6]
    b1 = a1 / a1.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    a2p = a2 - (b1 * a2).sum(-1, keepdim=True) * b1
    b2 = a2p / a2p.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    b3 = torch.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


def _init_linear(lin: nn.Linear, generator: torch.Generator) -> None:
    seeded_uniform_(lin.weight, lin.in_features, generator)
    if lin.bias is not None:
        seeded_uniform_(lin.bias, lin.in_features, generator)


class _Block(nn.Module):
    """Pre-norm temporal self-attention + feed-forward, manual attention."""

    def __init__(self, width: int, heads: int, generator: torch.Generator):
        super().__init__()
        if width % heads:
            raise ValueError("width must divide by heads")
        self.heads = heads
        self.ln1 = nn.LayerNorm(width, dtype=DT)
        self.qkv = nn.Linear(width, 3 * width, dtype=DT)
        self.proj = nn.Linear(width, width, dtype=DT)
        self.ln2 = nn.LayerNorm(width, dtype=DT)
        self.ff1 = nn.Linear(width, 4 * width, dtype=DT)
        self.ff2 = nn.Linear(4 * width, width, dtype=DT)
        for lin in (self.qkv, self.proj, self.ff1, self.ff2):
            _init_linear(lin, generator)

    def forward(self, h: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
        b, l, w = h.shape
        hd = w // self.heads
        q, k, v = self.qkv(self.ln1(h)).split(w, dim=2)
        q = q.reshape(b, l, self.heads, hd).transpose(1, 2)
        k = k.reshape(b, l, self.heads, hd).transpose(1, 2)
        v = v.reshape(b, l, self.heads, hd).transpose(1, 2)
        logits = q @ k.transpose(-1, -2) / math.sqrt(hd)
        if mask is not None:
            logits = logits.masked_fill(~mask[:, None, None, :], -torch.inf)
        att = torch.softmax(logits, dim=-1)
        out = (att @ v).transpose(1, 2).reshape(b, l, w)
        h = h + self.proj(out)
        return h + self.ff2(torch.nn.functional.gelu(self.ff1(self.ln2(h))))


class SequenceDenoiser(nn.Module):
    """p_theta(x_t, t, c) -> x̂_0 over padded frame sequences."""

    def __init__(
        self,
        frame_dim: int,
        cond_dim: int,
        width: int,
        heads: int = 4,
        time_dim: int = 64,
        blocks: int = 2,
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        if time_dim % 2:
            raise ValueError("time_dim must be even")
        if generator is None:
            generator = torch.Generator().manual_seed(0)
        self.frame_dim = frame_dim
        self.cond_dim = cond_dim
        self.time_dim = time_dim
        self.embed = nn.Linear(frame_dim + cond_dim + time_dim, width, dtype=DT)
        _init_linear(self.embed, generator)
        self.blocks = nn.ModuleList(
            [_Block(width, heads, generator) for _ in range(blocks)]
        )
        self.head = nn.Linear(width, frame_dim, dtype=DT)
        _init_linear(self.head, generator)

    def forward(
        self,
        x: torch.Tensor,
        t,
        cond: torch.Tensor,
        mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        squeeze = x.dim() == 2
        if squeeze:
            x, cond = x.unsqueeze(0), cond.unsqueeze(0)
        b, l, _ = x.shape
        if not torch.is_tensor(t):
            t = torch.full((b,), int(t), dtype=torch.long)
        te = sinusoidal_time_embedding(t, self.time_dim)[:, None, :].expand(b, l, -1)
        h = self.embed(torch.cat([x, cond, te], dim=2))
        for block in self.blocks:
            h = block(h, mask)
        out = self.head(h)
        return out.squeeze(0) if squeeze else out

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != std.shape or mean.ndim != 1 or np.any(std <= 0):
            raise ValueError("normalizer needs matching 1-d mean and positive std")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @staticmethod
    def fit(arrays, floor: float = 1e-6) -> "Normalizer":
        stacked = np.concatenate([np.asarray(a, dtype=np.float64) for a in arrays])
        return Normalizer(stacked.mean(axis=0), np.maximum(stacked.std(axis=0), floor))

    def encode(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.mean) / self.std

    def decode(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) * self.std + self.mean

    def encode_t(self, x: torch.Tensor) -> torch.Tensor:
        return (x - torch.from_numpy(self.mean.copy())) / torch.from_numpy(self.std.copy())

    def decode_t(self, x: torch.Tensor) -> torch.Tensor:
        return x * torch.from_numpy(self.std.copy()) + torch.from_numpy(self.mean.copy())


# ---------------------------------------------------------------------------
# stage losses


@dataclass(frozen=True)
class Stage1Weights:
    lambda_alpha: float = 10.0
    lambda_t: float = 30.0
    lambda_v: float = 10.0
    lambda_s: float = 1.0

    def __post_init__(self) -> None:
        if min(self.lambda_alpha, self.lambda_t, self.lambda_v, self.lambda_s) < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass(frozen=True)
class Stage2Weights:
    lambda_beta: float = 100.0
    lambda_b: float = 100.0

    def __post_init__(self) -> None:
        if min(self.lambda_beta, self.lambda_b) < 0:
            raise ValueError("loss weights must be >= 0")


def _stage1_terms(pred: torch.Tensor, gt: torch.Tensor, verts: torch.Tensor) -> dict:
    """Unweighted stage-1 terms for one sequence; pred/gt (l, 9), verts (N, 3)."""
    l = pred.shape[0]
    simple = ((pred - gt) ** 2).mean()
    trans = (pred[:, 6:9] - gt[:, 6:9]).norm(dim=1).sum()
    rp = rot6d_to_matrix(pred[:, :6])
    rg = rot6d_to_matrix(gt[:, :6])
    vp = torch.einsum("lij,nj->lni", rp, verts) + pred[:, None, 6:9]
    vg = torch.einsum("lij,nj->lni", rg, verts) + gt[:, None, 6:9]
    verts_term = (vp - vg).reshape(l, -1).norm(dim=1).sum()
    smooth = (pred[1:] - pred[:-1]).norm()
    return {"simple": simple, "trans": trans, "verts": verts_term, "smooth": smooth}


def _stage1_total(terms: dict, w: Stage1Weights):
    return (
        w.lambda_alpha * terms["simple"]
        + w.lambda_t * terms["trans"]
        + w.lambda_v * terms["verts"]
        + w.lambda_s * terms["smooth"]
    )


def loss_stage1(
    pred: ObjectMotion,
    gt: ObjectMotion,
    cloud: PointCloud,
    weights: Stage1Weights = Stage1Weights(),
) -> tuple[float, dict]:
    """Weighted stage-1 loss between two object motions, with term breakdown."""
    if len(pred) != len(gt):
        raise ValueError(f"length mismatch: {len(pred)} vs {len(gt)}")

    def rows(m: ObjectMotion) -> torch.Tensor:
        return torch.from_numpy(
            np.concatenate([m.rot6d(), m.translations], axis=1)
        )

    with torch.no_grad():
        terms = _stage1_terms(rows(pred), rows(gt), torch.from_numpy(cloud.points.copy()))
        total = _stage1_total(terms, weights)
    out = {k: float(v) for k, v in terms.items()}
    out["total"] = float(total)
    return out["total"], out


def _stage2_terms(pred: torch.Tensor, gt: torch.Tensor) -> dict:
    """Unweighted stage-2 terms for one sequence; pred/gt (l, 333)."""
    l = pred.shape[0]
    simple = ((pred - gt) ** 2).mean()
    jp = pred[:, J_SLICE].reshape(l, 2, 21, 3)
    jg = gt[:, J_SLICE].reshape(l, 2, 21, 3)
    bone = (bone_lengths_torch(jp) - bone_lengths_torch(jg)).norm()
    return {"simple": simple, "bone": bone}


def _stage2_total(terms: dict, w: Stage2Weights):
    return w.lambda_beta * terms["simple"] + w.lambda_b * terms["bone"]


def loss_stage2(pred, gt, weights: Stage2Weights = Stage2Weights()) -> tuple[float, dict]:
    """Weighted stage-2 loss between canonical HOI sequences (or raw arrays)."""
    p = np.asarray(getattr(pred, "frames", pred), dtype=np.float64)
    g = np.asarray(getattr(gt, "frames", gt), dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    with torch.no_grad():
        terms = _stage2_terms(torch.from_numpy(p), torch.from_numpy(g))
        total = _stage2_total(terms, weights)
    out = {k: float(v) for k, v in terms.items()}
    out["total"] = float(total)
    return out["total"], out


# ---------------------------------------------------------------------------
# training


@dataclass
class StageConfig:
    stage: int
    frame_dim: int
    cond_dim: int
    width: int
    heads: int = 4
    time_dim: int = 64
    blocks: int = 2
    T: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    lr: float = 1e-5
    lr_decay: float = 1.0  # final-epoch lr fraction, decayed exponentially
    batch_size: int = 8
    epochs: int = 10
    val_draws: int = 4  # fixed (t, eps) draws per val sequence
    clip_range: float = 3.0
    stage1_weights: Stage1Weights = field(default_factory=Stage1Weights)
    stage2_weights: Stage2Weights = field(default_factory=Stage2Weights)

    def __post_init__(self) -> None:
        if self.stage not in (1, 2):
            raise ValueError("stage must be 1 or 2")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.val_draws < 1:
            raise ValueError("val_draws must be >= 1")

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(self.T, self.beta_start, self.beta_end)


@dataclass
class TrainItem:
    """One training sequence: raw stage state plus condition ingredients."""

    x0: np.ndarray  # (l, frame_dim), raw units
    cond_static: np.ndarray | None = None  # (l, cond_dim) precomputed condition
    verts: np.ndarray | None = None  # (N, 3) object-frame points, stage 1 only
    payload: object = None  # opaque extra for condition providers


def static_condition_provider(item: TrainItem) -> torch.Tensor:
    return torch.from_numpy(np.array(item.cond_static, dtype=np.float64))


@dataclass
class TrainResult:
    denoiser: SequenceDenoiser
    normalizer: Normalizer
    schedule: NoiseSchedule
    val_curve: list
    train_curve: list


def _sequence_loss(
    config: StageConfig, x0_hat_raw: torch.Tensor, x0_raw: torch.Tensor, item: TrainItem
) -> torch.Tensor:
    if config.stage == 1:
        terms = _stage1_terms(
            x0_hat_raw, x0_raw, torch.from_numpy(np.array(item.verts, dtype=np.float64))
        )
        return _stage1_total(terms, config.stage1_weights)
    terms = _stage2_terms(x0_hat_raw, x0_raw)
    return _stage2_total(terms, config.stage2_weights)


def train(
    items: list,
    val_items: list,
    cond_provider,
    config: StageConfig,
    seed: int,
    val_draws: int | None = None,
) -> TrainResult:
    """Minibatch Adam training of the stage denoiser; deterministic per seed.

    The condition provider maps a TrainItem to its (l, cond_dim) tensor; if
    it is an nn.Module its parameters are trained jointly (the stage-1 gaze
    encoder rides along this way).  Validation uses (t, eps) draws fixed at
    setup so the per-epoch curve reflects parameter movement only.
    """
    if not items:
        raise ValueError("empty training set")
    if val_draws is None:
        val_draws = config.val_draws
    sched = config.schedule()
    normalizer = Normalizer.fit([it.x0 for it in items])
    g_init = torch.Generator().manual_seed(seed)
    denoiser = SequenceDenoiser(
        config.frame_dim,
        config.cond_dim,
        config.width,
        heads=config.heads,
        time_dim=config.time_dim,
        blocks=config.blocks,
        generator=g_init,
    )
    params = list(denoiser.parameters())
    if isinstance(cond_provider, nn.Module):
        params += list(cond_provider.parameters())
    opt = torch.optim.Adam(params, lr=config.lr, betas=(0.9, 0.999))

    g_data = torch.Generator().manual_seed(seed + 1)
    g_val = torch.Generator().manual_seed(seed + 2)
    fixed_val = [
        [
            (
                int(torch.randint(1, sched.T + 1, (1,), generator=g_val)),
                torch.randn(it.x0.shape, generator=g_val, dtype=DT),
            )
            for _ in range(val_draws)
        ]
        for it in val_items
    ]

    def run_batch(batch: list, ts: torch.Tensor, epss: list) -> torch.Tensor:
        lens = [it.x0.shape[0] for it in batch]
        lmax = max(lens)
        b = len(batch)
        x_t = torch.zeros((b, lmax, config.frame_dim), dtype=DT)
        cond = torch.zeros((b, lmax, config.cond_dim), dtype=DT)
        mask = torch.zeros((b, lmax), dtype=torch.bool)
        x0n_list = []
        for i, it in enumerate(batch):
            x0n = torch.from_numpy(normalizer.encode(it.x0))
            x0n_list.append(x0n)
            x_t[i, : lens[i]] = forward_diffuse(x0n, int(ts[i]), epss[i], sched)
            cond[i, : lens[i]] = cond_provider(it)
            mask[i, : lens[i]] = True
        x0_hat = denoiser(x_t, ts, cond, mask)
        losses = []
        for i, it in enumerate(batch):
            raw = normalizer.decode_t(x0_hat[i, : lens[i]])
            losses.append(
                _sequence_loss(config, raw, torch.from_numpy(np.array(it.x0)), it)
            )
        return torch.stack(losses).mean()

    val_curve, train_curve = [], []

    def validate() -> float:
        if not val_items:
            return math.nan
        with torch.no_grad():
            tot = 0.0
            for it, draws in zip(val_items, fixed_val):
                for t, eps in draws:
                    tot += float(
                        run_batch([it], torch.tensor([t], dtype=torch.long), [eps])
                    )
            return tot / (len(val_items) * len(fixed_val[0]))

    for epoch in range(config.epochs):
        cur_lr = config.lr * config.lr_decay ** (epoch / max(config.epochs - 1, 1))
        for group in opt.param_groups:
            group["lr"] = cur_lr
        order = torch.randperm(len(items), generator=g_data).tolist()
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [items[i] for i in order[start : start + config.batch_size]]
            ts = torch.randint(1, sched.T + 1, (len(batch),), generator=g_data)
            epss = [
                torch.randn(it.x0.shape, generator=g_data, dtype=DT) for it in batch
            ]
            opt.zero_grad()
            loss = run_batch(batch, ts, epss)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.detach()))
        train_curve.append(sum(epoch_losses) / len(epoch_losses))
        val_curve.append(validate())

    return TrainResult(denoiser, normalizer, sched, val_curve, train_curve)


# ---------------------------------------------------------------------------
# sampling


def sample(
    denoiser,
    cond: torch.Tensor,
    sched: NoiseSchedule,
    seed: int,
    guidance=None,
    clip_range: float = 3.0,
) -> torch.Tensor:
    """Reverse diffusion from seeded noise; returns x_0 in normalized units.

    With ``guidance`` (see guidance.ActiveGuidance) each step with sigma > 0
    draws through the spherical-constraint step instead of the plain DDPM
    posterior draw.
    """
    from . import guidance as guidance_mod

    gen = torch.Generator().manual_seed(seed)
    l = cond.shape[0]
    x = torch.randn((l, denoiser.frame_dim), generator=gen, dtype=DT)
    for t in range(sched.T, 0, -1):
        if not torch.isfinite(x).all():
            raise RuntimeError(f"non-finite sampler state at t={t}")
        sigma = math.sqrt(sched.sigma2[t])
        guided = (
            guidance is not None
            and sigma > 0.0
            and t % max(guidance.spec.frequency, 1) == 0
        )
        with torch.no_grad():
            x0_hat = denoiser(x, t, cond).clamp(-clip_range, clip_range)
            mu, _ = posterior_mean_variance(x, x0_hat, t, sched)
        if guided:
            grad = guidance_mod.grad_wrt_noisy(
                x,
                t,
                cond,
                denoiser,
                lambda x0: guidance.loss_fn(x0.clamp(-clip_range, clip_range)),
            )
            x = guidance_mod.dsg_step(
                mu,
                sigma,
                grad,
                guidance.spec.w,
                gen,
                g_min=guidance.spec.g_min,
                mode=guidance.spec.mode,
            )
        elif t > 1:
            x = mu + sigma * torch.randn(mu.shape, generator=gen, dtype=DT)
        else:
            x = mu
    return x.detach()


# ---------------------------------------------------------------------------
# checkpoints


CHECKPOINT_VERSION = 1


def _module_payload(module: nn.Module) -> dict:
    names, shapes, chunks = [], [], []
    for name, p in module.named_parameters():
        names.append(name)
        shapes.append(list(p.shape))
        chunks.append(p.detach().numpy().astype("<f8").reshape(-1))
    flat = np.concatenate(chunks) if chunks else np.zeros(0)
    return {
        "param_names": names,
        "param_shapes": shapes,
        "data": base64.b64encode(flat.tobytes()).decode("ascii"),
    }


def _load_payload(module: nn.Module, payload: dict) -> None:
    names = [n for n, _ in module.named_parameters()]
    if names != payload["param_names"]:
        raise ValueError("checkpoint parameter names do not match the module")
    flat = np.frombuffer(base64.b64decode(payload["data"]), dtype="<f8")
    offset = 0
    with torch.no_grad():
        for (name, p), shape in zip(module.named_parameters(), payload["param_shapes"]):
            n = int(np.prod(shape)) if shape else 1
            if list(p.shape) != shape:
                raise ValueError(f"shape mismatch for {name}: {list(p.shape)} vs {shape}")
            p.copy_(torch.from_numpy(flat[offset : offset + n].reshape(shape).copy()))
            offset += n
    if offset != flat.size:
        raise ValueError("checkpoint payload size mismatch")


def config_to_dict(config: StageConfig) -> dict:
    return asdict(config)


def config_from_dict(d: dict) -> StageConfig:
    d = dict(d)
    d["stage1_weights"] = Stage1Weights(**d.get("stage1_weights", {}))
    d["stage2_weights"] = Stage2Weights(**d.get("stage2_weights", {}))
    return StageConfig(**d)


def save_checkpoint(
    path: str, config: StageConfig, normalizer: Normalizer, modules: dict
) -> None:
    """JSON checkpoint: config, normalization stats, named parameter blocks."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": config_to_dict(config),
        "normalizer": {
            "mean": normalizer.mean.tolist(),
            "std": normalizer.std.tolist(),
        },
        "modules": {name: _module_payload(m) for name, m in modules.items()},
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")
    os.replace(tmp, path)


@dataclass
class Checkpoint:
    config: StageConfig
    normalizer: Normalizer
    payloads: dict

    def build_denoiser(self) -> SequenceDenoiser:
        net = SequenceDenoiser(
            self.config.frame_dim,
            self.config.cond_dim,
            self.config.width,
            heads=self.config.heads,
            time_dim=self.config.time_dim,
            blocks=self.config.blocks,
            generator=torch.Generator().manual_seed(0),
        )
        _load_payload(net, self.payloads["denoiser"])
        return net

    def load_module(self, name: str, module: nn.Module) -> None:
        _load_payload(module, self.payloads[name])


def load_checkpoint(path: str) -> Checkpoint:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    return Checkpoint(
        config=config_from_dict(doc["config"]),
        normalizer=Normalizer(
            np.asarray(doc["normalizer"]["mean"]), np.asarray(doc["normalizer"]["std"])
        ),
        payloads=doc["modules"],
    )
