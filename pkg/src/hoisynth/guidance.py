"""Interaction-manifold guidance: physics losses and the DSG sampling step.

The guided draw stays on the sphere ||x_{t-1} - mu_t|| = sqrt(d) * sigma_t,
mixing a random deviation with the normalized descent direction of the
guidance loss.  Mixing happens in deviation space by default; the absolute
variant (mixing whole states, whose direction then depends on ||mu_t||) and
a naive additive variant are kept behind the ``mode`` flag for ablations.

Sign conventions: the stored offset F points joint -> surface, so the
penetration score is s = (joint - surface) . n = (-F) . n, positive outside
the surface; a joint only contributes once s + eta goes negative.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .geometry import PointCloud
from .hoi import (
    A_SLICE,
    F_SLICE,
    J_SLICE,
    V_SLICE,
    CanonicalHOI,
    ObjectMotion,
    posed_normals,
    posed_points,
    recanonicalize,
    recanonicalize_torch,
)

DT = torch.float64


@dataclass(frozen=True)
class GuidanceSpec:
    lambda_k: float = 100.0
    lambda_c: float = 1000.0
    lambda_p: float = 100.0
    w: float = 0.99
    tau: float = 0.01
    eps: float = 1e-6
    eta: float = 0.001
    g_min: float = 1e-8
    mode: str = "deviation"
    frequency: int = 1  # apply guidance when t % frequency == 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.w <= 1.0:
            raise ValueError("guidance rate w must lie in [0, 1]")
        if self.tau <= 0 or self.eta <= 0:
            raise ValueError("tau and eta must be positive")
        if self.mode not in ("deviation", "absolute", "naive"):
            raise ValueError(f"unknown guidance mode {self.mode!r}")
        if self.frequency < 1:
            raise ValueError("frequency must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "GuidanceSpec":
        return GuidanceSpec(**d)


@dataclass
class ActiveGuidance:
    """What the sampler needs: the spec plus a loss over (normalized) x̂_0."""

    spec: GuidanceSpec
    loss_fn: object  # callable: x̂_0 tensor -> scalar, or (scalar, breakdown)


# ---------------------------------------------------------------------------
# losses (torch cores on joints (l, 42, 3) with per-frame surfaces (l, N, 3))


def _nearest_surface(joints: torch.Tensor, surface: torch.Tensor):
    d2 = (
        (joints * joints).sum(-1)[:, :, None]
        - 2.0 * torch.einsum("lkd,lnd->lkn", joints, surface)
        + (surface * surface).sum(-1)[:, None, :]
    )
    idx = d2.detach().argmin(dim=2)
    return idx, surface.gather(1, idx[:, :, None].expand(-1, -1, 3))


def loss_contact_torch(
    joints: torch.Tensor, surface: torch.Tensor, tau: float, eps: float
) -> torch.Tensor:
    """Mean near-surface distance over all below-threshold (frame, joint)
    slots; the indicator mask carries no gradient."""
    _, nearest = _nearest_surface(joints, surface)
    d = torch.sqrt(((joints - nearest) ** 2).sum(-1).clamp_min(1e-30))
    mask = (d.detach() < tau).to(DT)
    return (d * mask).sum() / (mask.sum() + eps)


def loss_penetration_torch(
    joints: torch.Tensor, surface: torch.Tensor, normals: torch.Tensor, eta: float
) -> torch.Tensor:
    """-sum min(0, s + eta) with s the signed offset along the outward normal."""
    idx, nearest = _nearest_surface(joints, surface)
    n = normals.gather(1, idx[:, :, None].expand(-1, -1, 3))
    s = ((joints - nearest) * n).sum(-1)
    return -torch.clamp(s + eta, max=0.0).sum()


def _as_joint_tensor(joints_seq: np.ndarray) -> torch.Tensor:
    j = np.asarray(joints_seq, dtype=np.float64)
    if j.ndim == 2 and j.shape[1] == 126:
        j = j.reshape(-1, 42, 3)
    if j.ndim != 3 or j.shape[1:] != (42, 3):
        raise ValueError(f"joints must be (l, 126) or (l, 42, 3), got {j.shape}")
    return torch.from_numpy(j.copy())


def loss_contact(
    joints_seq: np.ndarray,
    motion: ObjectMotion,
    cloud: PointCloud,
    tau: float = 0.01,
    eps: float = 1e-6,
) -> float:
    j = _as_joint_tensor(joints_seq)
    surface = torch.from_numpy(posed_points(motion, cloud))
    with torch.no_grad():
        return float(loss_contact_torch(j, surface, tau, eps))


def loss_penetration(
    joints_seq: np.ndarray,
    motion: ObjectMotion,
    cloud: PointCloud,
    eta: float = 0.001,
) -> float:
    j = _as_joint_tensor(joints_seq)
    surface = torch.from_numpy(posed_points(motion, cloud))
    normals = torch.from_numpy(posed_normals(motion, cloud))
    with torch.no_grad():
        return float(loss_penetration_torch(j, surface, normals, eta))


def loss_kinematic(hoi: CanonicalHOI, tilde) -> float:
    """Sum of whole-tensor L2 norms against the recalculated quantities."""
    f_t, v_t, a_t = tilde
    return float(
        np.linalg.norm(hoi.offsets - f_t)
        + np.linalg.norm(hoi.velocities - v_t)
        + np.linalg.norm(hoi.accelerations - a_t)
    )


def total_guidance_loss(
    hoi: CanonicalHOI,
    motion: ObjectMotion,
    cloud: PointCloud,
    spec: GuidanceSpec = GuidanceSpec(),
    fps: float = 30,
) -> tuple[float, dict]:
    tilde = recanonicalize(hoi.frames[:, J_SLICE], motion, cloud, fps)
    lk = loss_kinematic(hoi, tilde)
    lc = loss_contact(hoi.frames[:, J_SLICE], motion, cloud, spec.tau, spec.eps)
    lp = loss_penetration(hoi.frames[:, J_SLICE], motion, cloud, spec.eta)
    total = spec.lambda_k * lk + spec.lambda_c * lc + spec.lambda_p * lp
    return total, {"kinematic": lk, "contact": lc, "penetration": lp, "total": total}


def canonical_guidance_loss(
    x0_raw: torch.Tensor,
    surface: torch.Tensor,
    normals: torch.Tensor,
    fps: float,
    spec: GuidanceSpec,
) -> tuple[torch.Tensor, dict]:
    """Differentiable guidance loss on a raw canonical sequence (l, 333)."""
    l = x0_raw.shape[0]
    j_flat = x0_raw[:, J_SLICE]
    f_t, v_t, a_t = recanonicalize_torch(j_flat, surface, fps)
    lk = (
        (x0_raw[:, F_SLICE] - f_t).norm()
        + (x0_raw[:, V_SLICE] - v_t).norm()
        + (x0_raw[:, A_SLICE] - a_t).norm()
    )
    joints = j_flat.reshape(l, 42, 3)
    lc = loss_contact_torch(joints, surface, spec.tau, spec.eps)
    lp = loss_penetration_torch(joints, surface, normals, spec.eta)
    total = spec.lambda_k * lk + spec.lambda_c * lc + spec.lambda_p * lp
    breakdown = {
        "kinematic": float(lk.detach()),
        "contact": float(lc.detach()),
        "penetration": float(lp.detach()),
        "total": float(total.detach()),
    }
    return total, breakdown


# ---------------------------------------------------------------------------
# sampling-side machinery


def grad_wrt_noisy(x_t: torch.Tensor, t: int, cond: torch.Tensor, denoiser, loss_closure):
    """Reverse-mode gradient of loss_closure(denoiser(x_t, t, cond)) in x_t."""
    x = x_t.detach().clone().requires_grad_(True)
    out = loss_closure(denoiser(x, t, cond))
    loss, breakdown = out if isinstance(out, tuple) else (out, {})
    (grad,) = torch.autograd.grad(loss, x)
    if not torch.isfinite(grad).all():
        detail = breakdown or {"loss": float(loss)}
        raise RuntimeError(f"non-finite guidance gradient at t={t}: {detail}")
    return grad.detach()


def dsg_step(
    mu: torch.Tensor,
    sigma_t: float,
    grad: torch.Tensor,
    w: float,
    generator: torch.Generator,
    g_min: float = 1e-8,
    mode: str = "deviation",
) -> torch.Tensor:
    """One guided draw constrained to the sphere of radius sqrt(d)*sigma_t."""
    if sigma_t < 0:
        raise ValueError("sigma_t must be >= 0")
    if not 0.0 <= w <= 1.0:
        raise ValueError("w must lie in [0, 1]")
    if sigma_t == 0.0:
        return mu.clone()
    z = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    rand_dev = sigma_t * z
    gn = float(grad.norm())
    if gn < g_min:
        return mu + rand_dev
    if mode == "naive":
        # ablation: add the descent step directly to the unguided draw
        return mu + rand_dev - grad
    sqrt_d = math.sqrt(mu.numel())
    d_guided = -sqrt_d * sigma_t * grad / max(gn, g_min)
    if mode == "deviation":
        direction = rand_dev + w * (d_guided - rand_dev)
    elif mode == "absolute":
        h_t = mu + rand_dev
        direction = h_t + w * ((mu + d_guided) - h_t)
    else:
        raise ValueError(f"unknown guidance mode {mode!r}")
    dn = float(direction.norm())
    if dn == 0.0:
        return mu + rand_dev
    return mu + sqrt_d * sigma_t * direction / dn
