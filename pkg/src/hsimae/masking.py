"""Dual spatial-spectral masking.

Two-stage sampling: a fraction rho_s of spatial grid cells (p, q) is
hidden with every spectral group at those cells, then a fraction rho_b
of spectral-group indices k is hidden at every spatial location. A
token stays visible only if both its spatial cell and spectral group
survived, so 50/50 masking leaves 25% of tokens visible.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .tokenizer import PATCH_H, PATCH_W, PATCH_B


class NothingVisibleError(ValueError):
    """The requested ratios leave no visible tokens."""


def round_half_up(x):
    return int(math.floor(x + 0.5))


def derive_seed(run_seed, *parts):
    """Stable 64-bit sub-seed from a run seed and context labels."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(run_seed)).encode())
    for p in parts:
        h.update(b"/")
        h.update(str(p).encode())
    return int.from_bytes(h.digest(), "little")


@dataclass
class MaskPlan:
    P: int
    Q: int
    K: int
    masked_spatial: set        # of (p, q)
    masked_spectral: set       # of k
    seed: int
    rho_s: float
    rho_b: float
    visible: list = field(init=False)       # ordered (p, q, k)
    masked_tokens: list = field(init=False)  # ordered (p, q, k)

    def __post_init__(self):
        self.visible = []
        self.masked_tokens = []
        for p in range(self.P):
            for q in range(self.Q):
                for k in range(self.K):
                    if (p, q) in self.masked_spatial or k in self.masked_spectral:
                        self.masked_tokens.append((p, q, k))
                    else:
                        self.visible.append((p, q, k))

    def token_id(self, p, q, k):
        return (p * self.Q + q) * self.K + k

    @property
    def visible_ids(self):
        return np.array([self.token_id(*t) for t in self.visible], dtype=np.int64)

    @property
    def masked_ids(self):
        return np.array([self.token_id(*t) for t in self.masked_tokens],
                        dtype=np.int64)

    def to_json(self):
        return json.dumps({
            "P": self.P, "Q": self.Q, "K": self.K,
            "masked_spatial": sorted(list(t) for t in self.masked_spatial),
            "masked_spectral": sorted(self.masked_spectral),
            "seed": self.seed, "rho_s": self.rho_s, "rho_b": self.rho_b,
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(P=d["P"], Q=d["Q"], K=d["K"],
                   masked_spatial={tuple(t) for t in d["masked_spatial"]},
                   masked_spectral=set(d["masked_spectral"]),
                   seed=d["seed"], rho_s=d["rho_s"], rho_b=d["rho_b"])


def sample_mask_plan(P, Q, K, rho_s, rho_b, seed):
    """Uniform without-replacement sampling of masked cells and groups."""
    if P * Q < 1 or K < 1:
        raise ValueError("grid must contain at least one token")
    if not (0.0 <= rho_s <= 1.0 and 0.0 <= rho_b <= 1.0):
        raise ValueError("mask ratios must lie in [0, 1]")
    n_s = round_half_up(rho_s * P * Q)
    n_b = round_half_up(rho_b * K)
    rng = np.random.default_rng(seed)
    cells = rng.choice(P * Q, size=n_s, replace=False)
    groups = rng.choice(K, size=n_b, replace=False)
    plan = MaskPlan(P=P, Q=Q, K=K,
                    masked_spatial={(int(c) // Q, int(c) % Q) for c in cells},
                    masked_spectral={int(g) for g in groups},
                    seed=int(seed), rho_s=float(rho_s), rho_b=float(rho_b))
    if not plan.visible:
        raise NothingVisibleError(
            f"mask ratios ({rho_s}, {rho_b}) leave no visible tokens")
    return plan


def apply_mask(embeddings, plan):
    """Select visible-token rows in plan order; returns (rows, index map)."""
    from . import tensorcore as tc
    n = plan.P * plan.Q * plan.K
    if embeddings.data.shape[0] != n:
        raise ValueError(
            f"embeddings have {embeddings.data.shape[0]} rows, expected {n}")
    ids = plan.visible_ids
    return tc.gather_rows(embeddings, ids), ids


def voxel_mask(plan, H, W, B):
    """Boolean (H, W, B) array: True on voxels of masked tokens.

    Cropped voxels (past the floor multiples) are always False.
    """
    if H < PATCH_H * plan.P or W < PATCH_W * plan.Q or B < PATCH_B * plan.K:
        raise ValueError("cube extents smaller than the plan's grid")
    m = np.zeros((H, W, B), dtype=bool)
    for p, q, k in plan.masked_tokens:
        m[PATCH_H * p:PATCH_H * (p + 1),
          PATCH_W * q:PATCH_W * (q + 1),
          PATCH_B * k:PATCH_B * (k + 1)] = True
    return m
