import numpy as np
import pytest

from _support import random_cloud

from splatseq.cameras import look_at_camera
from splatseq.gaussians import GaussianCloud, logit, sigmoid
from splatseq.projection import project_cloud
from splatseq.rasterizer import render, render_backward, tile_bin


CAM = look_at_camera([2.0, 0.0, 0.0], width=32, height=32)


def test_empty_cloud_renders_background():
    cloud = GaussianCloud.empty(background=(0.2, 0.4, 0.6))
    out = render(cloud, CAM)
    assert np.allclose(out.image, [0.2, 0.4, 0.6])
    assert np.all(out.alpha == 0.0)
    assert np.all(out.contributors == 0)


@pytest.mark.parametrize("opacity", [0.1, 0.5, 0.9])
def test_single_centered_splat_alpha_equals_opacity(opacity):
    # camera with the principal point on a pixel center, splat on the axis
    cam = look_at_camera([2.0, 0.0, 0.0], width=33, height=33)
    assert cam.cx == 16.5  # center of pixel (16, 16)
    cloud = GaussianCloud(
        means=np.zeros((1, 3)),
        rotations=np.array([[1.0, 0, 0, 0]]),
        log_scales=np.full((1, 3), np.log(0.05)),
        opacity_logits=np.array([logit(opacity)]),
        colors=np.full((1, 3), 0.2),
        background=(1, 1, 1),
    )
    out = render(cloud, cam)
    assert abs(out.alpha[16, 16] - opacity) <= 1e-3


def test_transparent_splat_is_a_no_op():
    cloud = random_cloud(5, 12)
    base = render(cloud, CAM)
    extra = GaussianCloud(
        means=np.vstack([cloud.means, [[0.0, 0.0, 0.0]]]),
        rotations=np.vstack([cloud.rotations, [[1.0, 0, 0, 0]]]),
        log_scales=np.vstack([cloud.log_scales, [[np.log(0.2)] * 3]]),
        opacity_logits=np.append(cloud.opacity_logits, -40.0),
        colors=np.vstack([cloud.colors, [[0.9, 0.1, 0.1]]]),
        background=cloud.background,
    )
    out = render(extra, CAM)
    assert np.max(np.abs(out.image - base.image)) <= 1e-6


def test_tiling_invariance():
    cloud = random_cloud(7, 20)
    base = render(cloud, CAM, tile_size=16)
    for tile_size in (5, 8, 64):
        other = render(cloud, CAM, tile_size=tile_size)
        assert np.max(np.abs(other.image - base.image)) <= 1e-6


def test_input_permutation_invariance():
    cloud = random_cloud(11, 15)
    base = render(cloud, CAM)
    rng = np.random.default_rng(0)
    for _ in range(3):
        perm = rng.permutation(len(cloud))
        shuffled = GaussianCloud(
            means=cloud.means[perm], rotations=cloud.rotations[perm],
            log_scales=cloud.log_scales[perm],
            opacity_logits=cloud.opacity_logits[perm],
            colors=cloud.colors[perm], background=cloud.background,
        )
        assert np.array_equal(render(shuffled, CAM).image, base.image)


def test_renders_are_bit_identical():
    cloud = random_cloud(13, 18)
    a = render(cloud, CAM)
    b = render(cloud, CAM)
    assert np.array_equal(a.image, b.image)
    assert np.array_equal(a.alpha, b.alpha)
    assert np.array_equal(a.contributors, b.contributors)


def test_worker_count_does_not_change_output():
    cloud = random_cloud(17, 25)
    serial = render(cloud, CAM, n_workers=1)
    threaded = render(cloud, CAM, n_workers=4)
    assert np.array_equal(serial.image, threaded.image)
    up = np.random.default_rng(0).normal(size=(32, 32, 3)) / 3072
    g1 = render_backward(cloud, CAM, up, n_workers=1)
    g4 = render_backward(cloud, CAM, up, n_workers=4)
    for name in ("means", "rotations", "log_scales", "opacity_logits", "colors"):
        assert np.array_equal(getattr(g1, name), getattr(g4, name))


def test_alpha_monotone_under_added_splat():
    # opacities and counts bounded so transmittance never hits the early-stop
    rng = np.random.default_rng(23)
    for trial in range(10):
        cloud = random_cloud(trial, 8, opacity_range=(-2.0, 0.0))
        base = render(cloud, CAM)
        extra_mean = rng.normal(0, 0.3, 3)
        grown = GaussianCloud(
            means=np.vstack([cloud.means, extra_mean[None]]),
            rotations=np.vstack([cloud.rotations, [[1.0, 0, 0, 0]]]),
            log_scales=np.vstack([cloud.log_scales, [[np.log(0.1)] * 3]]),
            opacity_logits=np.append(cloud.opacity_logits, 0.0),
            colors=np.vstack([cloud.colors, [[0.5, 0.5, 0.5]]]),
            background=cloud.background,
        )
        out = render(grown, CAM)
        assert np.all(out.alpha >= base.alpha - 1e-12)


def test_image_is_premultiplied_plus_background():
    cloud = random_cloud(29, 14, background=(0.1, 0.2, 0.3))
    out_a = render(cloud, CAM)
    other = cloud.replace(background=np.array([0.9, 0.05, 0.4]))
    out_b = render(other, CAM)
    premult_a = out_a.image - (1.0 - out_a.alpha)[:, :, None] * cloud.background
    premult_b = out_b.image - (1.0 - out_b.alpha)[:, :, None] * other.background
    assert np.allclose(premult_a, premult_b, atol=1e-12)
    assert np.all(out_a.alpha >= 0.0) and np.all(out_a.alpha <= 1.0)


def _proj_of(cloud):
    return project_cloud(cloud.means, cloud.rotations, cloud.log_scales,
                         cloud.opacity_logits, cloud.colors, CAM)


def test_tile_bin_small_splat_lands_in_one_tile():
    # a tiny splat projected onto the center of tile (1, 1), far from borders
    offset = 8.0 * 2.0 / CAM.fx  # 8 px at depth 2
    cloud = GaussianCloud(
        means=np.array([[0.0, offset, -offset]]),
        rotations=np.array([[1.0, 0, 0, 0]]),
        log_scales=np.full((1, 3), np.log(0.01)),
        opacity_logits=np.zeros(1),
        colors=np.full((1, 3), 0.5),
    )
    proj = _proj_of(cloud)
    assert np.allclose(proj.mean2d[0], [24.0, 24.0], atol=1e-6)
    bins = tile_bin(proj, CAM.width, CAM.height, tile_size=16)
    owning = [(tx, ty) for ty in range(bins.n_tiles_y) for tx in range(bins.n_tiles_x)
              if 0 in bins.splats_for_tile(tx, ty)]
    assert owning == [(1, 1)]


def test_tile_bin_spanning_splat_in_all_four_tiles():
    cloud = GaussianCloud(
        means=np.zeros((1, 3)),
        rotations=np.array([[1.0, 0, 0, 0]]),
        log_scales=np.full((1, 3), np.log(0.15)),
        opacity_logits=np.zeros(1),
        colors=np.full((1, 3), 0.5),
    )
    proj = _proj_of(cloud)
    assert abs(proj.mean2d[0, 0] - 16.0) < 1e-9  # on the 2x2 tile corner
    bins = tile_bin(proj, CAM.width, CAM.height, tile_size=16)
    for tx in (0, 1):
        for ty in (0, 1):
            members = bins.splats_for_tile(tx, ty)
            assert np.count_nonzero(members == 0) == 1


def test_tile_bin_lists_sorted_by_depth_then_index():
    cloud = random_cloud(31, 30)
    proj = _proj_of(cloud)
    bins = tile_bin(proj, CAM.width, CAM.height, tile_size=16)
    for ty in range(bins.n_tiles_y):
        for tx in range(bins.n_tiles_x):
            members = bins.splats_for_tile(tx, ty)
            depths = proj.depth[members]
            assert np.all(np.diff(depths) >= 0.0)
            ties = np.flatnonzero(np.diff(depths) == 0.0)
            for t in ties:
                assert members[t] < members[t + 1]


def test_tile_bin_exact_depth_ties_break_by_index():
    # two splats at identical depth, overlapping: processed in index order
    means = np.array([[0.0, 0.02, 0.0], [0.0, -0.02, 0.0]])
    cloud = GaussianCloud(
        means=means,
        rotations=np.tile([1.0, 0, 0, 0], (2, 1)),
        log_scales=np.full((2, 3), np.log(0.3)),
        opacity_logits=np.zeros(2),
        colors=np.array([[0.9, 0.1, 0.1], [0.1, 0.1, 0.9]]),
    )
    proj = _proj_of(cloud)
    assert proj.depth[0] == proj.depth[1]
    bins = tile_bin(proj, CAM.width, CAM.height, tile_size=32)
    members = bins.splats_for_tile(0, 0)
    both = members[np.isin(members, [0, 1])]
    assert list(both) == [0, 1]


def test_backward_rejects_mismatched_upstream():
    cloud = random_cloud(37, 5)
    with pytest.raises(ValueError, match="does not match"):
        render_backward(cloud, CAM, np.zeros((16, 16, 3)))
    bad = np.zeros((32, 32, 3))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="finite"):
        render_backward(cloud, CAM, bad)


def test_contributor_counts_match_coverage():
    cloud = random_cloud(41, 10)
    out = render(cloud, CAM)
    assert out.contributors.max() <= len(cloud)
    # pixels with zero contributors show pure background
    empty = out.contributors == 0
    assert np.allclose(out.image[empty], cloud.background, atol=1e-12)
    assert np.all(out.alpha[empty] == 0.0)


def test_opacity_saturation_stays_below_one():
    cloud = GaussianCloud(
        means=np.zeros((1, 3)),
        rotations=np.array([[1.0, 0, 0, 0]]),
        log_scales=np.full((1, 3), np.log(0.3)),
        opacity_logits=np.array([200.0]),  # sigmoid saturates to 1.0 exactly
        colors=np.full((1, 3), 0.5),
    )
    out = render(cloud, CAM)
    assert sigmoid(200.0) == 1.0
    assert out.alpha.max() < 1.0  # alpha clamp keeps compositing finite
    assert np.all(np.isfinite(out.image))
