"""Patch partitioning, flattening, and positional encodings.

A cube is cut into non-overlapping 9 x 9 x 8 spatial-spectral patches.
Residual rows/columns/bands beyond the floor multiples are cropped (a
warning is logged); cropped voxels take no part in tokenization or the
losses. Each spectral group of 8 bands carries a representative
wavelength (arithmetic mean of its band centers, micrometers) that
feeds a multi-frequency sinusoidal encoding via the angular frequency
2*pi/lambda.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc

log = logging.getLogger(__name__)

PATCH_H = 9
PATCH_W = 9
PATCH_B = 8
PATCH_LEN = PATCH_H * PATCH_W * PATCH_B  # 648


@dataclass
class TokenGrid:
    """(p, q, k)-indexed patches of one cube, plus the cropped target values."""

    P: int
    Q: int
    K: int
    patches: np.ndarray        # (P*Q*K, 648), flattened i-outer, j-middle, b-inner
    order: np.ndarray          # (P*Q*K, 3) rows of (p, q, k), 0-based
    cropped_values: np.ndarray  # (9P, 9Q, 8K), the loss target region
    cropped: tuple             # (rows, cols, bands) dropped past floor multiples

    @property
    def n_tokens(self):
        return self.P * self.Q * self.K

    def token_id(self, p, q, k):
        return (p * self.Q + q) * self.K + k


@dataclass
class SpectralMeta:
    """Per-group mean wavelengths (micrometers) and angular frequencies."""

    lambdas: np.ndarray  # (K,)
    omegas: np.ndarray   # (K,), exactly 2*pi/lambda

    def __post_init__(self):
        if np.any(self.lambdas <= 0):
            raise ValueError("group wavelengths must be positive")


def mean_wavelength(band_centers):
    """Arithmetic mean of the 8 band-center wavelengths of one group."""
    band_centers = np.asarray(band_centers, dtype=np.float64)
    if band_centers.shape != (PATCH_B,) or np.any(band_centers <= 0):
        raise ValueError(f"need {PATCH_B} positive band centers")
    return float(band_centers.mean())


def spectral_meta(wavelengths, K):
    lambdas = np.array([mean_wavelength(wavelengths[PATCH_B * k:PATCH_B * (k + 1)])
                        for k in range(K)])
    return SpectralMeta(lambdas=lambdas, omegas=2.0 * np.pi / lambdas)


def partition(cube):
    """Cut a cube into the token grid; crops non-divisible extents."""
    h, w, b = cube.values.shape
    if h < PATCH_H or w < PATCH_W or b < PATCH_B:
        raise ValueError(f"cube {h}x{w}x{b} smaller than one patch")
    P, Q, K = h // PATCH_H, w // PATCH_W, b // PATCH_B
    cropped = (h - PATCH_H * P, w - PATCH_W * Q, b - PATCH_B * K)
    if any(cropped):
        log.warning("cropping %d rows, %d cols, %d bands past patch multiples",
                    *cropped)
    region = cube.values[:PATCH_H * P, :PATCH_W * Q, :PATCH_B * K]
    patches = np.empty((P * Q * K, PATCH_LEN))
    order = np.empty((P * Q * K, 3), dtype=np.int64)
    t = 0
    for p in range(P):
        for q in range(Q):
            for k in range(K):
                block = region[PATCH_H * p:PATCH_H * (p + 1),
                               PATCH_W * q:PATCH_W * (q + 1),
                               PATCH_B * k:PATCH_B * (k + 1)]
                patches[t] = block.reshape(-1)
                order[t] = (p, q, k)
                t += 1
    return TokenGrid(P=P, Q=Q, K=K, patches=patches, order=order,
                     cropped_values=region.copy(), cropped=cropped)


def _sin_cos_vector(arg_base, d):
    """Interleaved [sin_0, cos_0, sin_1, cos_1, ...] over d/2 frequencies."""
    i = np.arange(d // 2)
    args = arg_base / (10000.0 ** (2.0 * i / d))
    out = np.empty(d)
    out[0::2] = np.sin(args)
    out[1::2] = np.cos(args)
    return out


def spec_enc(lam, d_spec):
    """Wavelength encoding: sin/cos of omega scaled over d_spec/2 frequencies."""
    if d_spec % 2 or d_spec < 2:
        raise ValueError(f"d_spec must be even and >= 2, got {d_spec}")
    if lam <= 0:
        raise ValueError(f"wavelength must be positive, got {lam}")
    return _sin_cos_vector(2.0 * np.pi / lam, d_spec)


def sinusoidal_pe(pos, d_model):
    """Classic fixed sinusoidal position encoding."""
    if d_model % 2:
        raise ValueError(f"d_model must be even, got {d_model}")
    if pos < 0:
        raise ValueError("position must be non-negative")
    return _sin_cos_vector(float(pos), d_model)


def spec_enc_table(meta, d_spec):
    return np.stack([spec_enc(lam, d_spec) for lam in meta.lambdas])


def embed_tokens(grid, meta, proj_w, proj_b, spatial_pe):
    """Per-token embedding: linear patch projection + learned spatial
    position vector + wavelength encoding (added directly, d_spec = d_model).

    proj_w: Tensor (648, d); proj_b: Tensor (d,); spatial_pe: Tensor (P*Q, d).
    Returns a Tensor of shape (P*Q*K, d).
    """
    d = proj_w.data.shape[1]
    if proj_w.data.shape != (PATCH_LEN, d):
        raise ValueError(f"projector must be ({PATCH_LEN}, d), got {proj_w.data.shape}")
    if spatial_pe.data.shape != (grid.P * grid.Q, d):
        raise ValueError(
            f"spatial table must be ({grid.P * grid.Q}, {d}), got {spatial_pe.data.shape}")
    if meta.lambdas.shape != (grid.K,):
        raise ValueError("spectral meta does not match grid K")
    proj = tc.add_rowvec(tc.matmul(tc.Tensor(grid.patches), proj_w), proj_b)
    spatial_idx = grid.order[:, 0] * grid.Q + grid.order[:, 1]
    spatial = tc.gather_rows(spatial_pe, spatial_idx)
    spec = tc.Tensor(spec_enc_table(meta, d)[grid.order[:, 2]])
    return tc.add(tc.add(proj, spatial), spec)
