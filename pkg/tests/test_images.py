import numpy as np

from splatseq.images import load_png, luminance, quantize, resize_bilinear, save_png


def test_png_round_trip_matches_quantize(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.random((20, 24, 3))
    path = tmp_path / "img.png"
    save_png(path, img)
    back = load_png(path)
    assert np.array_equal(back, quantize(img))
    # quantize is idempotent: a second round-trip is exact
    save_png(path, back)
    assert np.array_equal(load_png(path), back)


def test_quantize_clips_out_of_range():
    img = np.array([[[-0.5, 0.5, 1.5]]])
    q = quantize(img)
    assert q[0, 0, 0] == 0.0 and q[0, 0, 2] == 1.0


def test_luminance_weights():
    assert abs(luminance(np.ones((1, 1, 3)))[0, 0] - 1.0) < 1e-12
    red = np.zeros((1, 1, 3))
    red[..., 0] = 1.0
    assert abs(luminance(red)[0, 0] - 0.299) < 1e-12


def test_resize_preserves_constants_and_is_deterministic():
    img = np.full((33, 17, 3), 0.37)
    out = resize_bilinear(img, 64, 64)
    assert out.shape == (64, 64, 3)
    assert np.allclose(out, 0.37, atol=1e-12)
    rng = np.random.default_rng(1)
    img = rng.random((40, 40))
    a = resize_bilinear(img, 64, 64)
    b = resize_bilinear(img.copy(), 64, 64)
    assert np.array_equal(a, b)


def test_resize_identity_when_shape_matches():
    rng = np.random.default_rng(2)
    img = rng.random((16, 16, 3))
    out = resize_bilinear(img, 16, 16)
    assert np.allclose(out, img, atol=1e-12)
