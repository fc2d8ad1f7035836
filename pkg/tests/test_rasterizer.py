"""Renderer behavior: projection, blending contract, modes, agreement."""

import numpy as np
import pytest

from splatforge.editing import CompositeScene, assign_label, default_label_color
from splatforge.errors import ParameterError
from splatforge.gaussians import Camera, Gaussian, GaussianCloud, quat_to_matrix
from splatforge.rasterizer import project, render, render_reference
from splatforge.sh import SH_C0

from conftest import random_cloud, random_camera, random_quaternions


def identity_camera(fx=40.0, fy=40.0, cx=16.0, cy=12.0, width=32, height=24):
    """Camera frame equal to the world frame (looks down world +z)."""
    return Camera(fx, fy, cx, cy, width, height, np.eye(4))


def analytic_single_splat(g, cam, background):
    """Independent per-pixel evaluation of one Gaussian.

    Projects the covariance through the camera rotation and the
    perspective Jacobian with explicit matrix calls, then evaluates the
    blending contract at every pixel center. Written as plain loops so
    it shares no code with the renderer.
    """
    R = cam.rotation
    t = cam.translation
    p = R @ g.mean + t
    x, y, z = p
    assert z > cam.near

    Rg = quat_to_matrix(g.rotation)
    cov3 = Rg @ np.diag(g.scale**2) @ Rg.T
    J = np.array(
        [
            [cam.fx / z, 0.0, -cam.fx * x / z**2],
            [0.0, cam.fy / z, -cam.fy * y / z**2],
        ]
    )
    cov2 = J @ R @ cov3 @ R.T @ J.T + 0.3 * np.eye(2)
    conic = np.linalg.inv(cov2)
    u = cam.fx * x / z + cam.cx
    v = cam.fy * y / z + cam.cy

    direction = g.mean - cam.position
    direction = direction / np.linalg.norm(direction)
    color = np.clip(0.5 + g.sh.reshape(-1, 3)[0] * SH_C0, 0.0, 1.0)

    img = np.zeros((cam.height, cam.width, 3))
    alpha_map = np.zeros((cam.height, cam.width))
    for row in range(cam.height):
        for col in range(cam.width):
            d = np.array([col + 0.5 - u, row + 0.5 - v])
            q = d @ conic @ d
            alpha = g.opacity * np.exp(-0.5 * q)
            if q > 9.0 or alpha < 1.0 / 255.0:
                alpha = 0.0
            img[row, col] = alpha * color + (1.0 - alpha) * np.asarray(background)
            alpha_map[row, col] = alpha
    return img, alpha_map


class TestClosedForm:
    @pytest.mark.parametrize("renderer", [render, render_reference])
    def test_single_splat_matches_analytic(self, rng, renderer):
        background = np.array([0.1, 0.2, 0.3])
        for _ in range(10):
            g = Gaussian(
                mean=rng.uniform(-0.3, 0.3, 3),
                rotation=random_quaternions(rng, 1)[0],
                scale=rng.uniform(0.05, 0.3, 3),
                opacity=rng.uniform(0.3, 1.0),
                sh=rng.uniform(-0.5, 0.5, 3),
            )
            cam = random_camera(rng, width=32, height=24, focal=40.0)
            expected, expected_alpha = analytic_single_splat(g, cam, background)
            out = renderer(GaussianCloud.from_gaussians([g]), cam, background=background)
            assert np.max(np.abs(out.color - expected)) <= 1e-6
            assert np.max(np.abs(out.alpha - expected_alpha)) <= 1e-6

    @pytest.mark.parametrize("renderer", [render, render_reference])
    def test_two_splat_blending_exact(self, renderer):
        # two coincident wide splats centered on a pixel: the nearer one
        # red at alpha 0.5, the farther green at alpha 0.5; front-to-back
        # blending gives exactly (0.5, 0.25, 0) there
        cam = identity_camera(fx=10.0, fy=10.0, cx=8.5, cy=8.5, width=16, height=16)
        # overdriven DC coefficients clamp to exact primary colors
        red = Gaussian(
            mean=[0.0, 0.0, 2.0],
            rotation=[1, 0, 0, 0],
            scale=[5.0, 5.0, 5.0],
            opacity=0.5,
            sh=[4.0, -4.0, -4.0],
        )
        green = Gaussian(
            mean=[0.0, 0.0, 3.0],
            rotation=[1, 0, 0, 0],
            scale=[5.0, 5.0, 5.0],
            opacity=0.5,
            sh=[-4.0, 4.0, -4.0],
        )
        out = renderer(GaussianCloud.from_gaussians([red, green]), cam)
        center = out.color[8, 8]
        assert center[0] == 0.5
        assert center[1] == 0.25
        assert center[2] == 0.0
        assert out.alpha[8, 8] == 0.75

    @pytest.mark.parametrize("renderer", [render, render_reference])
    def test_saturated_pixel_freezes(self, renderer):
        # an opaque splat zeroes transmittance; anything behind it is
        # invisible and the background no longer contributes
        cam = identity_camera(fx=10.0, fy=10.0, cx=8.5, cy=8.5, width=16, height=16)
        wall = Gaussian(
            mean=[0.0, 0.0, 2.0],
            rotation=[1, 0, 0, 0],
            scale=[6.0, 6.0, 6.0],
            opacity=1.0,
            sh=[4.0, 4.0, 4.0],
        )
        behind = Gaussian(
            mean=[0.0, 0.0, 4.0],
            rotation=[1, 0, 0, 0],
            scale=[6.0, 6.0, 6.0],
            opacity=1.0,
            sh=[4.0, -4.0, -4.0],
        )
        out = renderer(
            GaussianCloud.from_gaussians([wall, behind]), cam, background=(0.0, 0.0, 1.0)
        )
        assert np.allclose(out.color[8, 8], [1.0, 1.0, 1.0])
        assert out.alpha[8, 8] == 1.0


class TestAgreement:
    def test_tiled_matches_reference(self, rng):
        worst = 0.0
        for _ in range(30):
            n = int(rng.integers(1, 80))
            degree = int(rng.integers(0, 4))
            cloud = random_cloud(rng, n, degree=degree)
            cam = random_camera(rng)
            bg = rng.uniform(0.0, 1.0, 3)
            a = render(cloud, cam, background=bg)
            b = render_reference(cloud, cam, background=bg)
            worst = max(worst, float(np.max(np.abs(a.color - b.color))))
            worst = max(worst, float(np.max(np.abs(a.alpha - b.alpha))))
        assert worst <= 1e-5

    def test_label_images_agree(self, rng):
        for _ in range(10):
            cloud = random_cloud(rng, 40, labels=rng.integers(0, 3, 40))
            cam = random_camera(rng)
            a = render(cloud, cam, mode="label")
            b = render_reference(cloud, cam, mode="label")
            assert np.array_equal(a.label, b.label)

    def test_determinism(self, rng):
        cloud = random_cloud(rng, 60, degree=1)
        cam = random_camera(rng)
        a = render(cloud, cam)
        b = render(cloud, cam)
        assert a.color.tobytes() == b.color.tobytes()
        assert a.alpha.tobytes() == b.alpha.tobytes()


class TestModes:
    def make_two_label_scene(self):
        # label-1 splat left of center, label-2 splat right, both opaque
        a = Gaussian(
            mean=[-0.5, 0.0, 2.0],
            rotation=[1, 0, 0, 0],
            scale=[0.15, 0.15, 0.15],
            opacity=1.0,
            sh=[4.0, -4.0, -4.0],
            label=1,
        )
        b = Gaussian(
            mean=[0.5, 0.0, 2.0],
            rotation=[1, 0, 0, 0],
            scale=[0.15, 0.15, 0.15],
            opacity=1.0,
            sh=[-4.0, 4.0, -4.0],
            label=2,
        )
        cam = identity_camera(fx=30.0, fy=30.0, cx=16.0, cy=12.0, width=32, height=24)
        return GaussianCloud.from_gaussians([a, b]), cam

    def test_label_mode_assigns_winners(self):
        cloud, cam = self.make_two_label_scene()
        out = render(cloud, cam, mode="label")
        # the projected centers are cx +- fx * 0.5/2 = 16 -+ 7.5
        assert out.label[12, 8] == 1
        assert out.label[12, 23] == 2
        assert out.label[0, 0] == 0
        # label colors come from the fixed palette
        assert np.allclose(out.color[12, 8], default_label_color(1), atol=0.05)

    def test_label_tie_goes_to_background(self):
        # a single splat with alpha exactly 0.5 at its center pixel
        # splits the weight evenly; the tie goes to the lower label (0)
        g = Gaussian(
            mean=[0.0, 0.0, 2.0],
            rotation=[1, 0, 0, 0],
            scale=[5.0, 5.0, 5.0],
            opacity=0.5,
            sh=[0.0, 0.0, 0.0],
            label=3,
        )
        cam = identity_camera(fx=10.0, fy=10.0, cx=8.5, cy=8.5, width=16, height=16)
        out = render(GaussianCloud.from_gaussians([g]), cam, mode="label")
        assert out.label[8, 8] == 0

    def test_tool_mask_ignores_other_labels(self):
        cloud, cam = self.make_two_label_scene()
        out = render(cloud, cam, mode="tool_mask", tool_id=2)
        # the label-1 splat contributes nothing, not even occlusion
        assert np.max(out.color[:, :16]) == 0.0
        assert np.max(out.color[12, 23]) > 0.5
        assert out.label is None

    def test_tool_mask_background_forced_black(self):
        cloud, cam = self.make_two_label_scene()
        out = render(cloud, cam, mode="tool_mask", tool_id=1, background=(1.0, 1.0, 1.0))
        assert np.max(out.color[:, 16:]) == 0.0

    def test_tool_mask_requires_tool_id(self, rng):
        cloud = random_cloud(rng, 3)
        with pytest.raises(ParameterError):
            render(cloud, random_camera(rng), mode="tool_mask")

    def test_unknown_mode_rejected(self, rng):
        with pytest.raises(ParameterError):
            render(random_cloud(rng, 3), random_camera(rng), mode="depth")

    def test_bad_background_rejected(self, rng):
        with pytest.raises(ParameterError):
            render(random_cloud(rng, 3), random_camera(rng), background=(2.0, 0.0, 0.0))

    def test_composite_scene_accepted(self, rng):
        cloud = random_cloud(rng, 10, labels=1)
        scene = CompositeScene.from_cloud(cloud, source=1)
        out = render(scene, random_camera(rng), mode="tool_mask", tool_id=1)
        assert out.color.shape == (48, 64, 3)


class TestProjection:
    def test_center_projection(self):
        cam = identity_camera()
        g = Gaussian(
            mean=[0.0, 0.0, 3.0],
            rotation=[1, 0, 0, 0],
            scale=[0.1, 0.1, 0.1],
            opacity=0.9,
            sh=[0.0, 0.0, 0.0],
        )
        splat = project(g, cam)
        assert splat is not None
        assert np.allclose(splat.uv, [cam.cx, cam.cy], atol=1e-12)
        assert splat.depth == pytest.approx(3.0)

    def test_behind_camera_culled(self):
        cam = identity_camera()
        g = Gaussian(
            mean=[0.0, 0.0, -3.0],
            rotation=[1, 0, 0, 0],
            scale=[0.1, 0.1, 0.1],
            opacity=0.9,
            sh=[0.0, 0.0, 0.0],
        )
        assert project(g, cam) is None

    def test_far_offscreen_culled(self):
        cam = identity_camera()
        g = Gaussian(
            mean=[50.0, 0.0, 3.0],
            rotation=[1, 0, 0, 0],
            scale=[0.1, 0.1, 0.1],
            opacity=0.9,
            sh=[0.0, 0.0, 0.0],
        )
        assert project(g, cam) is None

    def test_transparent_splats_invisible(self, rng):
        # opacities below the alpha floor can never contribute
        cloud = random_cloud(rng, 10)
        cloud.opacities[:] = 1e-4
        out = render(cloud, random_camera(rng), background=(0.5, 0.5, 0.5))
        assert np.allclose(out.color, 0.5)
        assert np.all(out.alpha == 0.0)

    def test_empty_scene_is_background(self, rng):
        out = render(GaussianCloud.empty(0), random_camera(rng), background=(0.2, 0.4, 0.6))
        assert np.allclose(out.color, [0.2, 0.4, 0.6])
        assert np.all(out.alpha == 0.0)

    def test_depth_ties_broken_by_scene_index(self):
        # two coincident splats at one depth: the first in the cloud
        # must blend first, so the center shows mostly its color
        cam = identity_camera(fx=10.0, fy=10.0, cx=8.5, cy=8.5, width=16, height=16)
        first = Gaussian(
            mean=[0.0, 0.0, 2.0],
            rotation=[1, 0, 0, 0],
            scale=[5.0, 5.0, 5.0],
            opacity=0.9,
            sh=[4.0, -4.0, -4.0],
        )
        second = Gaussian(
            mean=[0.0, 0.0, 2.0],
            rotation=[1, 0, 0, 0],
            scale=[5.0, 5.0, 5.0],
            opacity=0.9,
            sh=[-4.0, 4.0, -4.0],
        )
        out = render(GaussianCloud.from_gaussians([first, second]), cam)
        assert out.color[8, 8, 0] == pytest.approx(0.9)
        assert out.color[8, 8, 1] == pytest.approx(0.09)
