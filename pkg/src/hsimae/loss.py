"""Composite reconstruction objective: masked MSE plus spectral angle.

The MSE term averages squared error over the masked voxels only, so
its gradient is exactly zero elsewhere. The spectral-angle term
averages the per-pixel angle between true and reconstructed spectra
over every (cropped) pixel, so its gradient reaches the whole cube.
The total is the convex combination alpha * MSE + (1 - alpha) * SAM.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc

ZERO_NORM_EPS = 1e-12


class EmptyMaskError(ValueError):
    """No masked voxels; the masked MSE average is undefined."""


@dataclass
class LossReport:
    l_mse: float
    l_sam: float
    l_rec: float
    n_masked: int       # |M|
    n_pixels: int       # |Omega| (valid pixels entering the SAM average)
    n_excluded: int     # zero-norm pixels left out of the SAM average
    alpha: float

    def to_json(self):
        return json.dumps({
            "l_mse": self.l_mse, "l_sam": self.l_sam, "l_rec": self.l_rec,
            "n_masked": self.n_masked, "n_pixels": self.n_pixels,
            "n_excluded": self.n_excluded, "alpha": self.alpha,
        })


def _wrap_const(a):
    return a if isinstance(a, tc.Tensor) else tc.Tensor(a)


def mse_masked(y, y_hat, mask):
    """Mean squared error over masked voxels; zero gradient elsewhere."""
    y = _wrap_const(y)
    mask = np.asarray(mask, dtype=bool)
    if y.data.shape != y_hat.data.shape or mask.shape != y.data.shape:
        raise tc.ShapeError(
            f"mse_masked: {y.data.shape}, {y_hat.data.shape}, {mask.shape}")
    n = int(mask.sum())
    if n == 0:
        raise EmptyMaskError("masked voxel set is empty")
    diff = tc.mul(tc.sub(y, y_hat), tc.Tensor(mask.astype(np.float64)))
    return tc.scale(tc.tsum(tc.mul(diff, diff)), 1.0 / n)


def sam_pixel(y, y_hat):
    """Spectral angle (radians) between one pixel's true and predicted spectra."""
    y, y_hat = _wrap_const(y), _wrap_const(y_hat)
    ny = float(np.linalg.norm(y.data))
    nyh = float(np.linalg.norm(y_hat.data))
    if ny <= ZERO_NORM_EPS or nyh <= ZERO_NORM_EPS:
        raise ValueError("zero-norm spectrum has no spectral angle")
    dot = tc.tsum(tc.mul(y, y_hat))
    norm_prod = tc.mul(tc.sqrt(tc.tsum(tc.mul(y, y))),
                       tc.sqrt(tc.tsum(tc.mul(y_hat, y_hat))))
    return tc.arccos(tc.div(dot, norm_prod))


def sam_loss(y, y_hat):
    """Mean spectral angle over all pixels; returns (loss, excluded count).

    Pixels whose true or predicted spectrum has (near-)zero norm are
    excluded from the average and counted instead of raising.
    """
    y = _wrap_const(y)
    if y.data.shape != y_hat.data.shape:
        raise tc.ShapeError(f"sam_loss: {y.data.shape} vs {y_hat.data.shape}")
    h, w, b = y.data.shape
    n = h * w
    y2 = tc.reshape(y, (n, b))
    yh2 = tc.reshape(y_hat, (n, b))
    ny = np.linalg.norm(y2.data, axis=1)
    nyh = np.linalg.norm(yh2.data, axis=1)
    valid = np.flatnonzero((ny > ZERO_NORM_EPS) & (nyh > ZERO_NORM_EPS))
    excluded = n - valid.size
    if valid.size == 0:
        raise ValueError("every pixel has a zero-norm spectrum")
    yv = tc.gather_rows(y2, valid)
    yhv = tc.gather_rows(yh2, valid)
    dots = tc.tsum(tc.mul(yv, yhv), axis=1)
    norms = tc.mul(tc.sqrt(tc.tsum(tc.mul(yv, yv), axis=1)),
                   tc.sqrt(tc.tsum(tc.mul(yhv, yhv), axis=1)))
    angles = tc.arccos(tc.div(dots, norms))
    return tc.scale(tc.tsum(angles), 1.0 / valid.size), excluded


def rec_loss(y, y_hat, mask, alpha=0.5):
    """Convex combination of masked MSE and all-pixel SAM.

    Returns (scalar loss tensor, LossReport).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    l_mse = mse_masked(y, y_hat, mask)
    l_sam, excluded = sam_loss(y, y_hat)
    total = tc.add(tc.scale(l_mse, alpha), tc.scale(l_sam, 1.0 - alpha))
    tc.check_finite(total, "in reconstruction loss")
    y_arr = y.data if isinstance(y, tc.Tensor) else np.asarray(y)
    h, w, _ = y_arr.shape
    report = LossReport(
        l_mse=float(l_mse.data), l_sam=float(l_sam.data),
        l_rec=float(total.data), n_masked=int(np.asarray(mask).sum()),
        n_pixels=h * w - excluded, n_excluded=excluded, alpha=float(alpha))
    return total, report
