"""Photometric training loss: (1 - lambda) * L1 + lambda * (1 - SSIM).

SSIM follows the usual single-scale recipe: an 11x11 gaussian window with
sigma 1.5, constants C1 = 0.01^2 and C2 = 0.03^2 for images in [0, 1],
computed per channel with zero-padded separable convolutions and averaged
over all pixels and channels. Both terms return analytic image gradients so
the renderer's adjoint can be driven directly.
"""

import numpy as np
from scipy.ndimage import convolve1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    t = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-(t * t) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    return w / w.sum()


_WINDOW = _window()


def _blur(img: np.ndarray) -> np.ndarray:
    out = convolve1d(img, _WINDOW, axis=0, mode="constant", cval=0.0)
    return convolve1d(out, _WINDOW, axis=1, mode="constant", cval=0.0)


def l1_loss(rendered: np.ndarray, target: np.ndarray):
    """Mean absolute error and its gradient wrt `rendered`."""
    diff = rendered - target
    grad = np.sign(diff) / diff.size
    return float(np.abs(diff).mean()), grad


def ssim(rendered: np.ndarray, target: np.ndarray):
    """Mean SSIM over pixels and channels, plus d(SSIM)/d(rendered)."""
    x = np.asarray(rendered, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    m1 = _blur(x)
    m2 = _blur(y)
    e1 = _blur(x * x)
    e12 = _blur(x * y)
    e2 = _blur(y * y)
    v1 = e1 - m1 * m1
    v2 = e2 - m2 * m2
    cov = e12 - m1 * m2

    a = 2.0 * m1 * m2 + SSIM_C1
    b = 2.0 * cov + SSIM_C2
    c = m1 * m1 + m2 * m2 + SSIM_C1
    d = v1 + v2 + SSIM_C2
    cd = c * d
    s = (a * b) / cd
    value = float(s.mean())

    # partials wrt the blurred intermediates, then pull back through the
    # (self-adjoint, zero-padded) blur
    u = 1.0 / s.size
    ds_dm1 = 2.0 * m2 * (b - a) / cd + 2.0 * m1 * s * (1.0 / d - 1.0 / c)
    ds_de1 = -s / d
    ds_de12 = 2.0 * a / cd
    grad = _blur(u * ds_dm1) + 2.0 * x * _blur(u * ds_de1) + y * _blur(u * ds_de12)
    return value, grad


def photometric_loss(rendered: np.ndarray, target: np.ndarray, lambda_dssim: float = 0.2):
    """Blended loss and its gradient wrt `rendered`.

    Zero iff the images are identical (for lambda_dssim < 1).
    """
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"image shapes differ: {rendered.shape} vs {target.shape}")
    if not 0.0 <= lambda_dssim <= 1.0:
        raise ValueError("lambda_dssim must lie in [0, 1]")
    l1, g_l1 = l1_loss(rendered, target)
    if lambda_dssim == 0.0:
        return l1, g_l1
    s, g_s = ssim(rendered, target)
    loss = (1.0 - lambda_dssim) * l1 + lambda_dssim * (1.0 - s)
    grad = (1.0 - lambda_dssim) * g_l1 - lambda_dssim * g_s
    return loss, grad
