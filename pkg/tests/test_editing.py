"""Editing operations: extraction, labeling, transforms, fusion."""

import numpy as np
import pytest

from splatforge.editing import (
    CompositeScene,
    ExtractionParams,
    assign_label,
    default_label_color,
    extract_foreground,
    fuse,
    robust_centroid,
    transform_cloud,
)
from splatforge.errors import ParameterError
from splatforge.gaussians import GaussianCloud, RigidTransform, quat_to_matrix
from splatforge.sh import SH_C0, evaluate_sh_colors, sh_basis

from conftest import random_cloud, random_directions, random_quaternions


def cloud_with_means(rng, means, degree=0):
    n = means.shape[0]
    base = random_cloud(rng, n, degree=degree)
    return GaussianCloud(
        means=means,
        rotations=base.rotations,
        scales=base.scales,
        opacities=base.opacities,
        sh=base.sh,
        labels=base.labels,
    )


class TestCentroid:
    def test_median_resists_outliers(self, rng):
        means = np.zeros((11, 3))
        means[:10] = rng.normal(scale=0.01, size=(10, 3))
        means[10] = [500.0, 0.0, 0.0]
        cloud = cloud_with_means(rng, means)
        assert np.linalg.norm(robust_centroid(cloud, "median")) < 0.1
        assert np.linalg.norm(robust_centroid(cloud, "mean")) > 10.0

    def test_empty_cloud_rejected(self):
        with pytest.raises(ParameterError):
            robust_centroid(GaussianCloud.empty())

    def test_unknown_mode_rejected(self, rng):
        with pytest.raises(ParameterError):
            robust_centroid(random_cloud(rng, 3), "mode")


class TestExtraction:
    def test_partitions_cloud(self, rng):
        cloud = random_cloud(rng, 50)
        kept, dropped = extract_foreground(cloud)
        assert len(kept) + len(dropped) == 50

    def test_separates_distant_outliers(self, rng):
        # outliers stay under 5% of the cloud so the default percentile
        # radius excludes them; they are scattered, not a second cluster
        inner = rng.normal(scale=0.3, size=(300, 3))
        outer = 40.0 * random_directions(rng, 10)
        cloud = cloud_with_means(rng, np.concatenate([inner, outer]))
        kept, dropped = extract_foreground(cloud)
        assert np.all(np.linalg.norm(kept.means, axis=1) < 20.0)
        assert np.sum(np.linalg.norm(dropped.means, axis=1) > 20.0) == 10

    def test_keeps_original_order(self, rng):
        cloud = random_cloud(rng, 30)
        kept, _ = extract_foreground(cloud)
        # means of the kept cloud appear in the same relative order
        rows = [np.flatnonzero((cloud.means == m).all(axis=1))[0] for m in kept.means]
        assert rows == sorted(rows)

    def test_density_pass_drops_isolated_survivor(self, rng):
        # a point inside the radius cut but far from the dense blob is
        # removed by the k-nearest-neighbor pass
        inner = rng.normal(scale=0.05, size=(300, 3))
        floater = np.array([[2.0, 0.0, 0.0]])
        cloud = cloud_with_means(rng, np.concatenate([inner, floater]))
        params = ExtractionParams(radius_percentile=100.0)
        kept, dropped = extract_foreground(cloud, params)
        assert len(dropped) >= 1
        assert np.any(np.all(dropped.means == floater[0], axis=1))

    def test_small_clouds_rejected_for_knn(self, rng):
        with pytest.raises(ParameterError):
            extract_foreground(random_cloud(rng, 5), ExtractionParams(knn_k=8))

    def test_param_validation(self):
        with pytest.raises(ParameterError):
            ExtractionParams(radius_percentile=0.0)
        with pytest.raises(ParameterError):
            ExtractionParams(knn_k=0)
        with pytest.raises(ParameterError):
            ExtractionParams(knn_distance_factor=-1.0)
        with pytest.raises(ParameterError):
            ExtractionParams(center_mode="centroid")


class TestLabelColors:
    def test_background_is_black(self):
        assert np.allclose(default_label_color(0), 0.0)

    def test_first_labels_distinct(self):
        colors = [tuple(default_label_color(l)) for l in range(1, 9)]
        assert len(set(colors)) == 8

    def test_palette_wraps(self):
        assert np.allclose(default_label_color(9), default_label_color(1))

    def test_negative_rejected(self):
        with pytest.raises(ParameterError):
            default_label_color(-1)


class TestAssignLabel:
    def test_labeled_keeps_appearance(self, rng):
        cloud = random_cloud(rng, 8, degree=2)
        labeled, _ = assign_label(cloud, 3)
        assert np.array_equal(labeled.labels, np.full(8, 3))
        assert np.allclose(labeled.sh, cloud.sh)
        assert np.allclose(labeled.means, cloud.means)

    def test_flat_twin_renders_label_color(self, rng):
        cloud = random_cloud(rng, 8, degree=2)
        color = np.array([0.1, 0.9, 0.4])
        _, flat = assign_label(cloud, 2, color)
        dirs = random_directions(rng, 8)
        out = evaluate_sh_colors(flat.sh, flat.sh_degree, dirs)
        assert np.allclose(out, color, atol=1e-12)
        assert np.all(flat.sh[:, 1:, :] == 0.0)
        assert np.allclose(flat.sh[:, 0, :], (color - 0.5) / SH_C0)

    def test_flat_twin_shares_geometry(self, rng):
        cloud = random_cloud(rng, 5, degree=1)
        _, flat = assign_label(cloud, 1)
        assert np.allclose(flat.means, cloud.means)
        assert np.allclose(flat.opacities, cloud.opacities)
        assert np.allclose(flat.scales, cloud.scales)

    def test_default_color_from_palette(self, rng):
        cloud = random_cloud(rng, 3)
        _, flat = assign_label(cloud, 1)
        out = evaluate_sh_colors(flat.sh, 0, np.array([[0.0, 0.0, 1.0]]))
        assert np.allclose(out[0], default_label_color(1), atol=1e-12)

    def test_label_zero_rejected(self, rng):
        with pytest.raises(ParameterError):
            assign_label(random_cloud(rng, 3), 0)

    def test_bad_color_rejected(self, rng):
        with pytest.raises(ParameterError):
            assign_label(random_cloud(rng, 3), 1, np.array([1.5, 0.0, 0.0]))


class TestTransformCloud:
    def test_means_follow_transform(self, rng):
        cloud = random_cloud(rng, 10)
        t = RigidTransform(
            rotation=random_quaternions(rng, 1)[0],
            translation=rng.normal(size=3),
            pivot=rng.normal(size=3),
        )
        moved = transform_cloud(cloud, t)
        assert np.allclose(moved.means, t.apply(cloud.means), atol=1e-12)

    def test_covariance_equivariance(self, rng):
        # covariances must transform as R C R^T; this is the property
        # that makes rotating quaternions equivalent to rotating shapes
        worst = 0.0
        for _ in range(30):
            cloud = random_cloud(rng, 8)
            t = RigidTransform(rotation=random_quaternions(rng, 1)[0])
            moved = transform_cloud(cloud, t)
            R = t.rotation_matrix
            expected = np.einsum("ij,njk,lk->nil", R, cloud.covariances(), R)
            worst = max(worst, float(np.max(np.abs(moved.covariances() - expected))))
        assert worst <= 1e-9

    def test_round_trip(self, rng):
        cloud = random_cloud(rng, 12, degree=3)
        t = RigidTransform(
            rotation=random_quaternions(rng, 1)[0],
            translation=rng.normal(size=3),
            pivot=rng.normal(size=3),
        )
        back = transform_cloud(transform_cloud(cloud, t), t.inverse())
        assert np.max(np.abs(back.means - cloud.means)) <= 1e-9
        assert np.max(np.abs(back.sh - cloud.sh)) <= 1e-9
        assert np.max(np.abs(back.covariances() - cloud.covariances())) <= 1e-9

    def test_appearance_follows_rotation(self, rng):
        # radiance toward direction d before the move equals radiance
        # toward R d afterwards
        cloud = random_cloud(rng, 6, degree=3)
        t = RigidTransform(rotation=random_quaternions(rng, 1)[0])
        moved = transform_cloud(cloud, t)
        R = t.rotation_matrix
        dirs = random_directions(rng, 20)
        before = np.einsum("db,nbc->ndc", sh_basis(3, dirs), cloud.sh)
        after = np.einsum("db,nbc->ndc", sh_basis(3, dirs @ R.T), moved.sh)
        assert np.allclose(before, after, atol=1e-9)

    def test_dc_only_zeroes_higher_bands(self, rng):
        cloud = random_cloud(rng, 4, degree=2)
        moved = transform_cloud(cloud, RigidTransform(), sh_mode="dc_only")
        assert np.allclose(moved.sh[:, 0, :], cloud.sh[:, 0, :])
        assert np.all(moved.sh[:, 1:, :] == 0.0)

    def test_scales_and_opacities_invariant(self, rng):
        cloud = random_cloud(rng, 5)
        t = RigidTransform(rotation=random_quaternions(rng, 1)[0], translation=[1, 2, 3])
        moved = transform_cloud(cloud, t)
        assert np.allclose(moved.scales, cloud.scales)
        assert np.allclose(moved.opacities, cloud.opacities)

    def test_unknown_mode_rejected(self, rng):
        with pytest.raises(ParameterError):
            transform_cloud(random_cloud(rng, 2), RigidTransform(), sh_mode="fast")


class TestFuse:
    def test_sources_track_membership(self, rng):
        background = random_cloud(rng, 10)
        tool_a, _ = assign_label(random_cloud(rng, 4), 1)
        tool_b, _ = assign_label(random_cloud(rng, 6), 2)
        scene = fuse(background, [(tool_a, RigidTransform()), (tool_b, RigidTransform())])
        assert len(scene.cloud) == 20
        assert np.array_equal(scene.sources[:10], np.zeros(10))
        assert np.array_equal(scene.sources[10:14], np.full(4, 1))
        assert np.array_equal(scene.sources[14:], np.full(6, 2))
        assert scene.tool_ids() == [1, 2]

    def test_degree_unified_by_padding(self, rng):
        background = random_cloud(rng, 5, degree=0)
        tool, _ = assign_label(random_cloud(rng, 3, degree=2), 1)
        scene = fuse(background, [(tool, RigidTransform())])
        assert scene.cloud.sh_degree == 2
        assert np.allclose(scene.cloud.sh[:5, 0, :], background.sh[:, 0, :])
        assert np.all(scene.cloud.sh[:5, 1:, :] == 0.0)

    def test_pose_applied_to_tool(self, rng):
        background = random_cloud(rng, 2)
        tool, _ = assign_label(random_cloud(rng, 3), 1)
        t = RigidTransform(translation=[5.0, 0.0, 0.0])
        scene = fuse(background, [(tool, t)])
        assert np.allclose(scene.cloud.means[2:], tool.means + [5.0, 0.0, 0.0])

    def test_empty_background(self, rng):
        tool, _ = assign_label(random_cloud(rng, 3), 1)
        scene = fuse(GaussianCloud.empty(0), [(tool, RigidTransform())])
        assert len(scene.cloud) == 3
        assert scene.tool_ids() == [1]

    def test_no_tools_is_background(self, rng):
        background = random_cloud(rng, 7)
        scene = fuse(background, [])
        assert len(scene.cloud) == 7
        assert scene.tool_ids() == []
        assert np.allclose(scene.cloud.means, background.means)

    def test_composite_scene_length_check(self, rng):
        with pytest.raises(ParameterError):
            CompositeScene(random_cloud(rng, 3), np.zeros(2, dtype=np.int32))

    def test_from_cloud_tags_uniformly(self, rng):
        scene = CompositeScene.from_cloud(random_cloud(rng, 4), source=2)
        assert np.array_equal(scene.sources, np.full(4, 2))
