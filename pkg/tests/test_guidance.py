"""Guidance losses, gradients through the denoiser, and the constrained step."""

import math

import numpy as np
import pytest
import torch

from conftest import box_cloud
from hoisynth.diffusion import SequenceDenoiser
from hoisynth.geometry import PointCloud, Rotation
from hoisynth.guidance import (
    GuidanceSpec,
    canonical_guidance_loss,
    dsg_step,
    grad_wrt_noisy,
    loss_contact,
    loss_kinematic,
    loss_penetration,
    total_guidance_loss,
    loss_contact_torch,
    loss_penetration_torch,
)
from hoisynth.hand.model import THETA_DIM, HandPose, HandShape
from hoisynth.hoi import (
    F_SLICE,
    J_SLICE,
    CanonicalHOI,
    GazeSequence,
    HandMotion,
    InteractionSequence,
    ObjectMotion,
    canonicalize,
    posed_normals,
    posed_points,
    recanonicalize,
)

torch.set_num_threads(1)

FPS = 30.0


def identity_motion(l, trans=(0.0, 0.0, 0.0)):
    return ObjectMotion(np.tile(np.eye(3), (l, 1, 1)), np.tile(np.asarray(trans, float), (l, 1)))


def far_joints(l, base=(1.0, 1.0, 1.0)):
    """(l, 42, 3) joint frames parked far from any desk-scale object."""
    j = np.tile(np.asarray(base, float), (l, 42, 1))
    j += np.arange(42)[None, :, None] * 0.01  # spread so nearest search is unambiguous
    return j


def plane_cloud(half=0.1, step=0.01):
    ax = np.arange(-half, half + step / 2, step)
    xs, ys = np.meshgrid(ax, ax, indexing="ij")
    pts = np.stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)], axis=1)
    normals = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
    return PointCloud(pts, normals)


def static_far_scene(l=5):
    left = HandPose(Rotation.identity(), np.array([-0.3, 0.0, 0.1]), np.zeros(THETA_DIM))
    right = HandPose(Rotation.identity(), np.array([0.3, 0.0, 0.1]), np.zeros(THETA_DIM))
    hands = HandMotion(
        HandShape(side="left"), HandShape(side="right"), (left,) * l, (right,) * l
    )
    motion = identity_motion(l, trans=(0.0, 0.9, 0.0))
    gaze = GazeSequence(np.tile([0.0, 0.9, 0.0], (l, 1)))
    seq = InteractionSequence(gaze, hands, motion, box_cloud(100), fps=30)
    return canonicalize(seq), motion, seq.geometry


class TestGuidanceSpec:
    def test_defaults(self):
        s = GuidanceSpec()
        assert (s.lambda_k, s.lambda_c, s.lambda_p) == (100.0, 1000.0, 100.0)
        assert s.w == 0.99 and s.tau == 0.01 and s.eps == 1e-6
        assert s.eta == 0.001 and s.g_min == 1e-8

    def test_validation(self):
        for kw in (
            {"w": -0.1},
            {"w": 1.1},
            {"tau": 0.0},
            {"eta": -1.0},
            {"mode": "bogus"},
            {"frequency": 0},
        ):
            with pytest.raises(ValueError):
                GuidanceSpec(**kw)

    def test_dict_roundtrip(self):
        s = GuidanceSpec(lambda_k=0.0, w=0.5, frequency=3)
        assert GuidanceSpec.from_dict(s.to_dict()) == s


class TestLossKinematic:
    def test_self_consistent_zero(self):
        hoi, motion, cloud = static_far_scene()
        tilde = recanonicalize(hoi.frames[:, J_SLICE], motion, cloud, FPS)
        assert loss_kinematic(hoi, tilde) < 1e-9

    def test_single_entry_perturbation(self):
        hoi, motion, cloud = static_far_scene()
        tilde = recanonicalize(hoi.frames[:, J_SLICE], motion, cloud, FPS)
        frames = hoi.frames.copy()
        frames[2, F_SLICE.start + 7] += 3.0
        bumped = CanonicalHOI(frames)
        assert loss_kinematic(bumped, tilde) == pytest.approx(3.0, abs=1e-9)

    def test_matches_scratch_norms(self):
        rng = np.random.default_rng(61)
        hoi, motion, cloud = static_far_scene()
        frames = hoi.frames.copy()
        frames[:, 168:] += rng.normal(size=frames[:, 168:].shape) * 0.1
        bumped = CanonicalHOI(frames)
        f_t, v_t, a_t = recanonicalize(frames[:, J_SLICE], motion, cloud, FPS)
        expected = (
            np.linalg.norm(bumped.offsets - f_t)
            + np.linalg.norm(bumped.velocities - v_t)
            + np.linalg.norm(bumped.accelerations - a_t)
        )
        assert loss_kinematic(bumped, (f_t, v_t, a_t)) == pytest.approx(expected, rel=1e-15)


class TestLossContact:
    def one_point_cloud(self):
        return PointCloud(np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]]))

    def test_all_far_zero(self):
        j = far_joints(3)
        assert loss_contact(j, identity_motion(3), self.one_point_cloud()) == 0.0

    def test_single_near_joint(self):
        j = far_joints(1)
        j[0, 4] = [0.005, 0.0, 0.0]  # 5 mm from the only surface point
        loss = loss_contact(j, identity_motion(1), self.one_point_cloud())
        assert loss == pytest.approx(0.005 / (1.0 + 1e-6), rel=1e-12)
        assert abs(loss - 0.005) < 1e-7

    def test_two_near_joints_two_frames(self):
        j = far_joints(2)
        j[0, 4] = [0.004, 0.0, 0.0]
        j[1, 9] = [0.0, 0.006, 0.0]
        loss = loss_contact(j, identity_motion(2), self.one_point_cloud())
        # hand evaluation of the masked mean
        assert loss == pytest.approx(0.010 / (2.0 + 1e-6), rel=1e-12)
        assert abs(loss - 0.005) < 1e-8

    def test_flat_joints_accepted(self):
        j = far_joints(2).reshape(2, 126)
        assert loss_contact(j, identity_motion(2), self.one_point_cloud()) == 0.0

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError):
            loss_contact(np.zeros((2, 40, 3)), identity_motion(2), self.one_point_cloud())

    def test_mask_carries_no_gradient(self):
        # moving a joint inside tau changes the loss through d only; the
        # 1/(count+eps) factor is locked by the detached indicator
        j = torch.tensor(far_joints(1))
        j[0, 4] = torch.tensor([0.006, 0.0, 0.0])
        j.requires_grad_(True)
        surface = torch.zeros((1, 1, 3), dtype=torch.float64)
        loss = loss_contact_torch(j, surface, tau=0.01, eps=1e-6)
        loss.backward()
        g = j.grad[0, 4].numpy()
        # d = x coordinate here, so dloss/dx = 1/(1+eps), other coords 0
        assert g[0] == pytest.approx(1.0 / (1.0 + 1e-6), rel=1e-9)
        assert g[1] == 0.0 and g[2] == 0.0


class TestLossPenetration:
    def test_all_outside_zero(self):
        cloud = plane_cloud()
        j = far_joints(2, base=(0.0, 0.0, 1.0))
        assert loss_penetration(j, identity_motion(2), cloud) == 0.0

    def test_single_penetrating_joint(self):
        # 4 mm through the plane with 1 mm slack leaves 3 mm of violation
        cloud = plane_cloud()
        j = far_joints(1, base=(0.0, 0.0, 1.0))
        j[0, 7] = [0.0, 0.0, -0.004]
        loss = loss_penetration(j, identity_motion(1), cloud, eta=0.001)
        assert loss == pytest.approx(0.003, abs=1e-12)

    def test_plane_oracle_depth_minus_slack(self):
        cloud = plane_cloud()
        for depth in (0.002, 0.005, 0.02):
            j = far_joints(1, base=(0.0, 0.0, 1.0))
            j[0, 0] = [0.0, 0.0, -depth]
            loss = loss_penetration(j, identity_motion(1), cloud, eta=0.001)
            assert loss == pytest.approx(depth - 0.001, abs=1e-12)

    def test_shallow_violation_within_slack_is_free(self):
        cloud = plane_cloud()
        j = far_joints(1, base=(0.0, 0.0, 1.0))
        j[0, 0] = [0.0, 0.0, -0.0005]  # inside the eta allowance
        assert loss_penetration(j, identity_motion(1), cloud, eta=0.001) == 0.0

    def test_sums_over_joints_and_frames(self):
        cloud = plane_cloud()
        j = far_joints(2, base=(0.0, 0.0, 1.0))
        j[0, 0] = [0.0, 0.0, -0.004]
        j[0, 1] = [0.01, 0.0, -0.006]
        j[1, 2] = [0.0, 0.01, -0.003]
        loss = loss_penetration(j, identity_motion(2), cloud, eta=0.001)
        assert loss == pytest.approx(0.003 + 0.005 + 0.002, abs=1e-12)


class TestTotalGuidanceLoss:
    def test_all_terms_zero(self):
        hoi, motion, cloud = static_far_scene()
        total, terms = total_guidance_loss(hoi, motion, cloud)
        assert terms["contact"] == 0.0
        assert terms["penetration"] == 0.0
        assert terms["kinematic"] < 1e-9
        assert total < 1e-7

    def test_unit_kinematic_weighs_100(self):
        hoi, motion, cloud = static_far_scene()
        frames = hoi.frames.copy()
        frames[1, F_SLICE.start] += 1.0
        total, terms = total_guidance_loss(CanonicalHOI(frames), motion, cloud)
        assert terms["kinematic"] == pytest.approx(1.0, abs=1e-9)
        assert total == pytest.approx(100.0, abs=1e-6)

    def test_weighted_sum_of_individual_terms(self):
        rng = np.random.default_rng(62)
        hoi, motion, cloud = static_far_scene()
        frames = hoi.frames.copy()
        frames[:, :126] += rng.normal(size=(len(frames), 126)) * 0.3
        bumped = CanonicalHOI(frames)
        spec = GuidanceSpec(lambda_k=2.0, lambda_c=7.0, lambda_p=11.0)
        total, terms = total_guidance_loss(bumped, motion, cloud, spec)
        tilde = recanonicalize(frames[:, J_SLICE], motion, cloud, FPS)
        lk = loss_kinematic(bumped, tilde)
        lc = loss_contact(frames[:, J_SLICE], motion, cloud, spec.tau, spec.eps)
        lp = loss_penetration(frames[:, J_SLICE], motion, cloud, spec.eta)
        assert terms["kinematic"] == pytest.approx(lk, rel=1e-12)
        assert terms["contact"] == pytest.approx(lc, rel=1e-12)
        assert terms["penetration"] == pytest.approx(lp, rel=1e-12)
        assert total == pytest.approx(2 * lk + 7 * lc + 11 * lp, rel=1e-12)

    def test_torch_path_matches_numpy_facade(self):
        rng = np.random.default_rng(63)
        hoi, motion, cloud = static_far_scene()
        frames = hoi.frames.copy()
        frames[:, :126] += rng.normal(size=(len(frames), 126)) * 0.2
        bumped = CanonicalHOI(frames)
        spec = GuidanceSpec()
        total_np, terms_np = total_guidance_loss(bumped, motion, cloud, spec)
        surface = torch.from_numpy(posed_points(motion, cloud))
        normals = torch.from_numpy(posed_normals(motion, cloud))
        total_t, terms_t = canonical_guidance_loss(
            torch.from_numpy(frames), surface, normals, FPS, spec
        )
        for k in ("kinematic", "contact", "penetration", "total"):
            assert terms_t[k] == pytest.approx(terms_np[k], rel=1e-9, abs=1e-12)
        assert float(total_t) == pytest.approx(total_np, rel=1e-9)

    def test_canonical_loss_gradient_flows(self):
        hoi, motion, cloud = static_far_scene()
        x = torch.tensor(hoi.frames, requires_grad=True)
        surface = torch.from_numpy(posed_points(motion, cloud))
        normals = torch.from_numpy(posed_normals(motion, cloud))
        total, _ = canonical_guidance_loss(x, surface, normals, FPS, GuidanceSpec())
        total.backward()
        assert x.grad is not None
        assert torch.isfinite(x.grad).all()
        assert float(x.grad.abs().sum()) > 0


class _IdentityDenoiser(torch.nn.Module):
    def __init__(self, frame_dim):
        super().__init__()
        self.frame_dim = frame_dim

    def forward(self, x, t, cond, mask=None):
        return x


class TestGradWrtNoisy:
    def test_identity_chain(self):
        gen = torch.Generator().manual_seed(64)
        x = torch.randn((4, 6), generator=gen, dtype=torch.float64)
        cond = torch.zeros((4, 2), dtype=torch.float64)
        g = grad_wrt_noisy(x, 3, cond, _IdentityDenoiser(6), lambda x0: 0.5 * (x0**2).sum())
        assert torch.allclose(g, x, atol=1e-14)

    def test_constant_loss_zero_gradient(self):
        gen = torch.Generator().manual_seed(65)
        x = torch.randn((4, 6), generator=gen, dtype=torch.float64)
        cond = torch.zeros((4, 2), dtype=torch.float64)
        g = grad_wrt_noisy(x, 3, cond, _IdentityDenoiser(6), lambda x0: (x0 * 0.0).sum())
        assert torch.equal(g, torch.zeros_like(x))

    def test_matches_finite_differences_through_denoiser(self):
        net = SequenceDenoiser(9, 4, 16, heads=2, time_dim=8, blocks=1,
                               generator=torch.Generator().manual_seed(66))
        gen = torch.Generator().manual_seed(67)
        x = torch.randn((6, 9), generator=gen, dtype=torch.float64)
        cond = torch.randn((6, 4), generator=gen, dtype=torch.float64)
        closure = lambda x0: torch.sin(x0).sum()
        g = grad_wrt_noisy(x, 7, cond, net, closure).numpy()

        def f(arr):
            with torch.no_grad():
                return float(closure(net(torch.tensor(arr), 7, cond)))

        rng = np.random.default_rng(68)
        base = x.numpy()
        h = 1e-6
        for flat in rng.choice(base.size, size=50, replace=False):
            i, j = np.unravel_index(flat, base.shape)
            plus, minus = base.copy(), base.copy()
            plus[i, j] += h
            minus[i, j] -= h
            fd = (f(plus) - f(minus)) / (2 * h)
            assert abs(g[i, j] - fd) <= 1e-3 * max(1.0, abs(fd))

    def test_tuple_closure_and_nonfinite_error(self):
        gen = torch.Generator().manual_seed(69)
        x = torch.randn((3, 6), generator=gen, dtype=torch.float64)
        cond = torch.zeros((3, 2), dtype=torch.float64)
        g1 = grad_wrt_noisy(
            x, 2, cond, _IdentityDenoiser(6), lambda x0: ((x0**2).sum(), {"term": 1.0})
        )
        g2 = grad_wrt_noisy(x, 2, cond, _IdentityDenoiser(6), lambda x0: (x0**2).sum())
        assert torch.equal(g1, g2)
        with pytest.raises(RuntimeError, match="non-finite"):
            grad_wrt_noisy(
                x, 2, cond, _IdentityDenoiser(6),
                lambda x0: (x0.sum() * float("inf"), {"kinematic": 1.0}),
            )


class TestDsgStep:
    def setup_method(self):
        gen = torch.Generator().manual_seed(70)
        self.mu = torch.randn((6, 9), generator=gen, dtype=torch.float64)
        self.grad = torch.randn((6, 9), generator=gen, dtype=torch.float64)
        self.sigma = 0.37
        self.sqrt_d = math.sqrt(self.mu.numel())

    def test_w1_pure_descent(self):
        out = dsg_step(self.mu, self.sigma, self.grad, 1.0, torch.Generator().manual_seed(0))
        expect = self.mu - self.sqrt_d * self.sigma * self.grad / self.grad.norm()
        assert torch.allclose(out, expect, atol=1e-12)

    def test_w0_random_direction_constrained(self):
        out = dsg_step(self.mu, self.sigma, self.grad, 0.0, torch.Generator().manual_seed(4))
        z = torch.randn(self.mu.shape, generator=torch.Generator().manual_seed(4), dtype=torch.float64)
        expect = self.mu + self.sqrt_d * self.sigma * z / z.norm()
        assert torch.allclose(out, expect, atol=1e-12)

    def test_sphere_radius_for_all_w_and_modes(self):
        for mode in ("deviation", "absolute"):
            for w in (0.0, 0.25, 0.5, 0.75, 0.99, 1.0):
                for seed in (1, 2, 3):
                    out = dsg_step(
                        self.mu, self.sigma, self.grad, w,
                        torch.Generator().manual_seed(seed), mode=mode,
                    )
                    r = float((out - self.mu).norm())
                    target = self.sqrt_d * self.sigma
                    assert abs(r - target) <= 1e-9 * target

    def test_sigma_zero_returns_mu(self):
        out = dsg_step(self.mu, 0.0, self.grad, 0.7, torch.Generator().manual_seed(5))
        assert torch.equal(out, self.mu)

    def test_tiny_gradient_falls_back_to_unguided(self):
        tiny = torch.full_like(self.grad, 1e-12)
        out = dsg_step(self.mu, self.sigma, tiny, 0.9, torch.Generator().manual_seed(6))
        z = torch.randn(self.mu.shape, generator=torch.Generator().manual_seed(6), dtype=torch.float64)
        assert torch.equal(out, self.mu + self.sigma * z)

    def test_cosine_monotone_in_w(self):
        unit_descent = -self.grad / self.grad.norm()
        for seed in (7, 8, 9):
            last = -2.0
            for w in (0.0, 0.25, 0.5, 0.75, 0.99, 1.0):
                out = dsg_step(
                    self.mu, self.sigma, self.grad, w, torch.Generator().manual_seed(seed)
                )
                dev = out - self.mu
                cos = float((dev * unit_descent).sum() / dev.norm())
                assert cos >= last - 1e-12
                last = cos

    def test_naive_mode_adds_raw_gradient_step(self):
        out = dsg_step(
            self.mu, self.sigma, self.grad, 0.5,
            torch.Generator().manual_seed(10), mode="naive",
        )
        z = torch.randn(self.mu.shape, generator=torch.Generator().manual_seed(10), dtype=torch.float64)
        assert torch.equal(out, self.mu + self.sigma * z - self.grad)

    def test_absolute_mode_matches_manual_formula(self):
        w = 0.6
        out = dsg_step(
            self.mu, self.sigma, self.grad, w,
            torch.Generator().manual_seed(11), mode="absolute",
        )
        z = torch.randn(self.mu.shape, generator=torch.Generator().manual_seed(11), dtype=torch.float64)
        rand_dev = self.sigma * z
        d_guided = -self.sqrt_d * self.sigma * self.grad / self.grad.norm()
        h_t = self.mu + rand_dev
        direction = h_t + w * ((self.mu + d_guided) - h_t)
        expect = self.mu + self.sqrt_d * self.sigma * direction / direction.norm()
        assert torch.allclose(out, expect, atol=1e-12)

    def test_validation(self):
        gen = torch.Generator().manual_seed(12)
        with pytest.raises(ValueError):
            dsg_step(self.mu, -0.1, self.grad, 0.5, gen)
        with pytest.raises(ValueError):
            dsg_step(self.mu, self.sigma, self.grad, 1.5, gen)
