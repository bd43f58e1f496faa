import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _support import random_cloud

from splatseq.evaluate import (
    EvalError,
    EvalReport,
    clip_i,
    decimate_views,
    evaluate_video,
    format_ablation_table,
    format_score_table,
    psnr,
    render_eval_videos,
    validate_report,
)
from splatseq.pipeline import Video3D
from splatseq.embedders import SurrogateEmbedder
from splatseq.synthetic import SyntheticScene


class FixedEmbedder:
    """Maps every image to one constant unit vector."""

    identifier = "fixed"
    dim = 4

    def embed(self, image):
        return np.array([1.0, 0.0, 0.0, 0.0])


class OrthogonalToReferenceEmbedder:
    """Reference image gets e0; every other image gets e1."""

    identifier = "orthogonal"
    dim = 4

    def __init__(self, reference):
        self.reference = reference

    def embed(self, image):
        if image.shape == self.reference.shape and np.array_equal(image, self.reference):
            return np.array([1.0, 0.0, 0.0, 0.0])
        return np.array([0.0, 1.0, 0.0, 0.0])


def _tiny_video(n_frames=2):
    scene = SyntheticScene(n_gaussians=15, seed=3, motion_amplitude=0.4)
    clouds = [scene.cloud_at(i, n_frames) for i in range(n_frames)]
    return Video3D(clouds=tuple(clouds), cameras=(), provenance={})


def test_psnr_identical_images_report_cap():
    img = np.random.default_rng(0).random((8, 8, 3))
    assert psnr(img, img) == 99.0


def test_psnr_of_opposite_constants_is_zero():
    assert psnr(np.zeros((4, 4, 3)), np.ones((4, 4, 3))) == 0.0


def test_psnr_matches_direct_mse_oracle():
    rng = np.random.default_rng(1)
    a = rng.random((6, 6, 3))
    b = rng.random((6, 6, 3))
    mse = np.mean((a - b) ** 2)
    assert abs(psnr(a, b) - 10.0 * np.log10(1.0 / mse)) < 1e-12


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_render_eval_videos_shape_and_determinism():
    video = _tiny_video(n_frames=2)
    seqs = render_eval_videos(video, n_cameras=4, resolution=24)
    assert len(seqs) == 4
    assert all(len(s) == 2 for s in seqs)
    again = render_eval_videos(video, n_cameras=4, resolution=24)
    for s1, s2 in zip(seqs, again):
        for f1, f2 in zip(s1, s2):
            assert np.array_equal(f1, f2)


def test_single_frame_video_gives_single_image_sequences():
    seqs = render_eval_videos(_tiny_video(n_frames=1), n_cameras=3, resolution=16)
    assert len(seqs) == 3 and all(len(s) == 1 for s in seqs)


def test_clip_i_of_identical_embeddings_is_one():
    ref = np.zeros((8, 8, 3))
    videos = [[np.zeros((8, 8, 3))] * 3 for _ in range(2)]
    report = clip_i(ref, videos, FixedEmbedder())
    assert report.clip_i == 1.0
    assert report.similarity.shape == (2, 3)


def test_clip_i_orthogonal_embeddings_is_zero():
    ref = np.full((8, 8, 3), 0.25)
    videos = [[np.zeros((8, 8, 3))] * 2 for _ in range(3)]
    report = clip_i(ref, videos, OrthogonalToReferenceEmbedder(ref))
    assert report.clip_i == 0.0


def test_clip_i_is_mean_of_matrix_exactly():
    rng = np.random.default_rng(2)
    video = _tiny_video(2)
    seqs = render_eval_videos(video, n_cameras=3, resolution=24)
    report = clip_i(rng.random((24, 24, 3)), seqs, SurrogateEmbedder())
    assert report.clip_i == float(report.similarity.mean())
    assert np.all(report.similarity >= 0.0)  # nonnegative-feature embedder
    assert np.all(report.similarity <= 1.0 + 1e-12)


def test_clip_i_invariant_under_view_and_frame_permutation():
    rng = np.random.default_rng(3)
    video = _tiny_video(3)
    seqs = render_eval_videos(video, n_cameras=4, resolution=16)
    shuffled_views = [seqs[i] for i in (2, 0, 3, 1)]
    shuffled_frames = [[s[i] for i in (1, 2, 0)] for s in shuffled_views]
    ref = rng.random((16, 16, 3))
    a = clip_i(ref, seqs, SurrogateEmbedder())
    b = clip_i(ref, shuffled_frames, SurrogateEmbedder())
    assert abs(a.clip_i - b.clip_i) < 1e-12


def test_embedder_failure_carries_coordinates():
    class Flaky:
        identifier = "flaky"

        def __init__(self):
            self.calls = 0

        def embed(self, image):
            self.calls += 1
            if self.calls == 4:  # reference + 2 frames succeed, then fail
                raise RuntimeError("boom")
            return np.array([1.0, 0.0])

    videos = [[np.zeros((4, 4, 3))] * 2 for _ in range(2)]
    with pytest.raises(EvalError, match=r"view 1 frame 0"):
        clip_i(np.zeros((4, 4, 3)), videos, Flaky())


def test_decimation_exact_indices_and_subset_chain():
    three = decimate_views(18, 3)
    nine = decimate_views(18, 9)
    eighteen = decimate_views(18, 18)
    assert list(three) == [0, 6, 12]
    assert list(nine) == [0, 2, 4, 6, 8, 10, 12, 14, 16]
    assert set(three) < set(nine) < set(eighteen)


def test_decimation_validation():
    with pytest.raises(ValueError):
        decimate_views(18, 5)
    with pytest.raises(ValueError):
        decimate_views(18, 0)
    with pytest.raises(ValueError):
        decimate_views(18, 19)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 31 - 1))
def test_report_mean_invariant_under_permutation(n_views, n_frames, seed):
    rng = np.random.default_rng(seed)
    sim = rng.uniform(-1.0, 1.0, (n_views, n_frames))
    report = EvalReport(clip_i=float(sim.mean()), similarity=sim, embedder="x", config={})
    perm = rng.permutation(n_views)
    permuted = EvalReport(clip_i=float(sim[perm].mean()), similarity=sim[perm],
                          embedder="x", config={})
    assert abs(report.clip_i - permuted.clip_i) < 1e-12


def test_report_rejects_wrong_mean_or_range():
    sim = np.full((2, 2), 0.5)
    with pytest.raises(ValueError, match="mean"):
        EvalReport(clip_i=0.9, similarity=sim, embedder="x", config={})
    with pytest.raises(ValueError, match=r"\[-1, 1\]"):
        EvalReport(clip_i=1.5, similarity=np.full((1, 1), 1.5), embedder="x", config={})


def test_report_json_round_trip_and_schema(tmp_path):
    sim = np.array([[0.5, 0.75], [0.25, 0.5]])
    report = EvalReport(clip_i=float(sim.mean()), similarity=sim,
                        embedder="surrogate-v1", config={"n_views": 4}, psnr=31.5)
    path = tmp_path / "report.json"
    report.save_json(path)
    import json

    loaded = json.loads(path.read_text())
    validate_report(loaded)
    back = EvalReport.from_dict(loaded)
    assert back.clip_i == report.clip_i
    assert np.array_equal(back.similarity, report.similarity)
    assert back.psnr == 31.5


def test_validate_report_rejects_malformed():
    with pytest.raises(ValueError, match="missing"):
        validate_report({"clip_i": 0.5})
    with pytest.raises(ValueError, match="clip_i"):
        validate_report({"clip_i": 2.0, "similarity": [[0.1]], "embedder": "e", "config": {}})
    with pytest.raises(ValueError, match="rows"):
        validate_report({"clip_i": 0.5, "similarity": [[0.1], [0.1, 0.2]],
                         "embedder": "e", "config": {}})


def test_score_table_formatting_comparison_fixture():
    # report-formatting fixture with the published comparison numbers
    table = format_score_table(
        [("baseline_a", 0.8544), ("baseline_b", 0.9227), ("per_frame", 0.8946)])
    lines = table.splitlines()
    assert lines[0].split() == ["Model", "CLIP-I"]
    assert "baseline_a  0.8544" in lines[2]
    assert "baseline_b  0.9227" in lines[3]
    assert "per_frame   0.8946" in lines[4]
    # aligned columns
    widths = {len(line) for line in lines}
    assert len(widths) == 1


def test_view_count_table_fixture():
    cells = [
        {"config": {"n_views": 3}, "report": EvalReport(
            clip_i=0.8532, similarity=np.full((1, 1), 0.8532), embedder="x", config={}),
         "error": None},
        {"config": {"n_views": 9}, "report": EvalReport(
            clip_i=0.8879, similarity=np.full((1, 1), 0.8879), embedder="x", config={}),
         "error": None},
        {"config": {"n_views": 18}, "report": EvalReport(
            clip_i=0.8946, similarity=np.full((1, 1), 0.8946), embedder="x", config={}),
         "error": None},
    ]
    table = format_ablation_table(cells, key="n_views")
    assert "Number of views" in table
    for fragment in ("3", "0.8532", "9", "0.8879", "18", "0.8946"):
        assert fragment in table
    rows = table.splitlines()[2:]
    assert [r.split()[0] for r in rows] == ["3", "9", "18"]


def test_motion_table_fixture():
    def cell(amp, score):
        return {"config": {"motion_amplitude": amp}, "report": EvalReport(
            clip_i=score, similarity=np.full((1, 1), score), embedder="x", config={}),
            "error": None}

    table = format_ablation_table(
        [cell(120, 0.8946), cell(160, 0.8893), cell(200, 0.8897)],
        key="motion_amplitude")
    assert "Motion score" in table
    for fragment in ("120", "0.8946", "160", "0.8893", "200", "0.8897"):
        assert fragment in table


def test_evaluate_video_with_ground_truth_reports_psnr():
    scene = SyntheticScene(n_gaussians=15, seed=8)
    clouds = [scene.cloud_at(i, 2) for i in range(2)]
    video = Video3D(clouds=tuple(clouds), cameras=(), provenance={})
    reference = render_eval_videos(video, n_cameras=1, resolution=24)[0][0]
    report = evaluate_video(video, reference, SurrogateEmbedder(),
                            gt_clouds=clouds, n_cameras=3, resolution=24)
    assert report.psnr == 99.0  # video is its own ground truth
    assert report.psnr_matrix.shape == (3, 2)
