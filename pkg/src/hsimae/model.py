"""Transformer encoder/decoder over spatial-spectral tokens.

Pre-norm ViT-style blocks. The encoder sees only visible tokens; the
decoder scatters encoder latents back into the full token grid, fills
hidden slots with a learned mask token, re-adds the positional
encodings (mask tokens are otherwise position-blind), and maps every
token back to its 648 voxel values. A separate head classifies a cube
from the mean-pooled latents of an unmasked encoding pass.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensorcore as tc
from . import tokenizer
from .tokenizer import PATCH_LEN

CHECKPOINT_MAGIC = "hsimae-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    d_model: int = 64
    n_enc_layers: int = 4
    n_dec_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256

    def __post_init__(self):
        if min(self.d_model, self.n_enc_layers, self.n_dec_layers,
               self.n_heads, self.d_ff) < 1:
            raise ValueError("all config counts must be >= 1")
        if self.d_model % self.n_heads:
            raise ValueError(
                f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        if self.d_model % 2:
            raise ValueError("d_model must be even (wavelength encoding pairs)")

    def to_dict(self):
        return {"d_model": self.d_model, "n_enc_layers": self.n_enc_layers,
                "n_dec_layers": self.n_dec_layers, "n_heads": self.n_heads,
                "d_ff": self.d_ff}


def desk_config():
    return ModelConfig()


def micro_config():
    """Smallest useful config; used for finite-difference gradient checks."""
    return ModelConfig(d_model=16, n_enc_layers=1, n_dec_layers=1,
                       n_heads=2, d_ff=32)


def full_scale_config():
    """768-wide preset at the scale reported for the full model.

    Documented for reference; never exercised by the test suite.
    """
    return ModelConfig(d_model=768, n_enc_layers=24, n_dec_layers=8,
                       n_heads=12, d_ff=3072)


def param_shapes(config, P, Q, n_classes):
    """Fixed parameter order; also the checkpoint payload order."""
    d, f = config.d_model, config.d_ff
    shapes = {}
    shapes["patch_proj_w"] = (PATCH_LEN, d)
    shapes["patch_proj_b"] = (d,)
    shapes["spatial_pe"] = (P * Q, d)
    for stack, n_layers in (("enc", config.n_enc_layers),
                            ("dec", config.n_dec_layers)):
        for i in range(n_layers):
            pre = f"{stack}{i}_"
            shapes[pre + "ln1_g"] = (d,)
            shapes[pre + "ln1_b"] = (d,)
            for name in ("q", "k", "v", "o"):
                shapes[pre + f"w{name}"] = (d, d)
                shapes[pre + f"b{name}"] = (d,)
            shapes[pre + "ln2_g"] = (d,)
            shapes[pre + "ln2_b"] = (d,)
            shapes[pre + "ff1_w"] = (d, f)
            shapes[pre + "ff1_b"] = (f,)
            shapes[pre + "ff2_w"] = (f, d)
            shapes[pre + "ff2_b"] = (d,)
        shapes[f"{stack}_lnf_g"] = (d,)
        shapes[f"{stack}_lnf_b"] = (d,)
    shapes["mask_token"] = (d,)
    shapes["recon_w"] = (d, PATCH_LEN)
    shapes["recon_b"] = (PATCH_LEN,)
    shapes["cls_w"] = (d, n_classes)
    shapes["cls_b"] = (n_classes,)
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    P: int
    Q: int
    K: int
    n_classes: int
    seed: int
    arrays: dict = field(default_factory=dict)  # name -> np.ndarray, fixed order

    def tensors(self, trainable=None):
        """Wrap arrays as graph leaves; trainable limits which get gradients."""
        return {name: tc.Tensor(arr, requires_grad=(
            trainable is None or name in trainable))
            for name, arr in self.arrays.items()}

    @property
    def n_params(self):
        return sum(a.size for a in self.arrays.values())

    def copy(self):
        return ModelParams(config=self.config, P=self.P, Q=self.Q, K=self.K,
                           n_classes=self.n_classes, seed=self.seed,
                           arrays={k: v.copy() for k, v in self.arrays.items()})


def _truncated_normal(rng, shape, std=0.02):
    """Normal(0, std^2) redrawn until inside +-2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while np.any(bad):
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


def init_params(config, P, Q, K, n_classes, seed):
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(config, P, Q, n_classes).items():
        if name.endswith("_g"):
            arrays[name] = np.ones(shape)
        elif name == "mask_token" or (len(shape) == 2 and name != "spatial_pe"):
            arrays[name] = _truncated_normal(rng, shape)
        else:
            # biases, LN offsets, and the spatial table start at zero
            arrays[name] = np.zeros(shape)
    return ModelParams(config=config, P=P, Q=Q, K=K, n_classes=n_classes,
                       seed=int(seed), arrays=arrays)


# -- forward passes -------------------------------------------------------


def _attention(x, t, pre, config):
    d, n_heads = config.d_model, config.n_heads
    dh = d // n_heads
    q = tc.add_rowvec(tc.matmul(x, t[pre + "wq"]), t[pre + "bq"])
    k = tc.add_rowvec(tc.matmul(x, t[pre + "wk"]), t[pre + "bk"])
    v = tc.add_rowvec(tc.matmul(x, t[pre + "wv"]), t[pre + "bv"])
    heads = []
    for h in range(n_heads):
        qh = tc.slice_cols(q, h * dh, (h + 1) * dh)
        kh = tc.slice_cols(k, h * dh, (h + 1) * dh)
        vh = tc.slice_cols(v, h * dh, (h + 1) * dh)
        scores = tc.scale(tc.matmul(qh, tc.transpose(kh)), 1.0 / np.sqrt(dh))
        heads.append(tc.matmul(tc.softmax(scores, axis=-1), vh))
    merged = tc.concat_cols(heads) if n_heads > 1 else heads[0]
    return tc.add_rowvec(tc.matmul(merged, t[pre + "wo"]), t[pre + "bo"])


def _feed_forward(x, t, pre):
    h = tc.gelu(tc.add_rowvec(tc.matmul(x, t[pre + "ff1_w"]), t[pre + "ff1_b"]))
    return tc.add_rowvec(tc.matmul(h, t[pre + "ff2_w"]), t[pre + "ff2_b"])


def _run_stack(x, t, stack, n_layers, config, eps=1e-6):
    for i in range(n_layers):
        pre = f"{stack}{i}_"
        normed = tc.layer_norm(x, t[pre + "ln1_g"], t[pre + "ln1_b"], eps)
        x = tc.add(x, _attention(normed, t, pre, config))
        normed = tc.layer_norm(x, t[pre + "ln2_g"], t[pre + "ln2_b"], eps)
        x = tc.add(x, _feed_forward(normed, t, pre))
    return tc.layer_norm(x, t[f"{stack}_lnf_g"], t[f"{stack}_lnf_b"], eps)


def encode(visible_embeddings, tensors, config):
    """Encoder stack over visible tokens; row order preserved."""
    if visible_embeddings.data.shape[0] < 1:
        raise ValueError("need at least one visible token")
    return _run_stack(visible_embeddings, tensors, "enc",
                      config.n_enc_layers, config)


def _positional_rows(tensors, order, Q_table, spec_table):
    spatial_idx = order[:, 0] * Q_table + order[:, 1]
    spatial = tc.gather_rows(tensors["spatial_pe"], spatial_idx)
    return tc.add(spatial, tc.Tensor(spec_table[order[:, 2]]))


def _unflatten_index(P, Q, K):
    """Flat-cube index -> row of the (tokens x 648) head output."""
    ii, jj, bb = np.indices((9 * P, 9 * Q, 8 * K))
    t = ((ii // 9) * Q + (jj // 9)) * K + (bb // 8)
    e = ((ii % 9) * 9 + (jj % 9)) * 8 + (bb % 8)
    return (t * PATCH_LEN + e).reshape(-1)


def decode(latents, plan, tensors, config, meta):
    """Reconstruct the cropped cube from visible-token latents.

    Returns a Tensor of shape (9P, 9Q, 8K) covering every token,
    visible and masked alike.
    """
    P, Q, K = plan.P, plan.Q, plan.K
    n_tokens = P * Q * K
    n_visible = len(plan.visible)
    if latents.data.shape[0] != n_visible:
        raise ValueError(
            f"latents rows {latents.data.shape[0]} != visible {n_visible}")
    d = config.d_model
    mask_row = tc.reshape(tensors["mask_token"], (1, d))
    stacked = tc.concat_rows([latents, mask_row])
    perm = np.full(n_tokens, n_visible, dtype=np.int64)  # default: mask token
    perm[plan.visible_ids] = np.arange(n_visible)
    x = tc.gather_rows(stacked, perm)
    order = np.array([[p, q, k] for p in range(P) for q in range(Q)
                      for k in range(K)], dtype=np.int64)
    spec_table = tokenizer.spec_enc_table(meta, d)
    x = tc.add(x, _positional_rows(tensors, order, Q, spec_table))
    x = _run_stack(x, tensors, "dec", config.n_dec_layers, config)
    flat = tc.add_rowvec(tc.matmul(x, tensors["recon_w"]), tensors["recon_b"])
    flat = tc.reshape(flat, (n_tokens * PATCH_LEN, 1))
    cube = tc.gather_rows(flat, _unflatten_index(P, Q, K))
    return tc.reshape(cube, (9 * P, 9 * Q, 8 * K))


def embed_for(params, grid, meta, tensors):
    """Token embeddings using this model's projector and spatial table."""
    if grid.P > params.P or grid.Q > params.Q:
        raise ValueError(
            f"grid {grid.P}x{grid.Q} exceeds spatial table {params.P}x{params.Q}")
    proj = tc.add_rowvec(tc.matmul(tc.Tensor(grid.patches),
                                   tensors["patch_proj_w"]),
                         tensors["patch_proj_b"])
    spec_table = tokenizer.spec_enc_table(meta, params.config.d_model)
    pos = _positional_rows(tensors, grid.order, params.Q, spec_table)
    return tc.add(proj, pos)


def classify(cube, params, tensors=None):
    """Logits for one cube: encode all tokens unmasked, mean-pool, project."""
    grid = tokenizer.partition(cube)
    meta = tokenizer.spectral_meta(cube.wavelengths, grid.K)
    if tensors is None:
        tensors = params.tensors()
    emb = embed_for(params, grid, meta, tensors)
    latents = encode(emb, tensors, params.config)
    pooled = tc.tmean(latents, axis=0, keepdims=True)
    logits = tc.add_rowvec(tc.matmul(pooled, tensors["cls_w"]), tensors["cls_b"])
    return tc.reshape(logits, (params.n_classes,))


# -- checkpoints ----------------------------------------------------------


def save_checkpoint(params, path):
    header = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "P": params.P, "Q": params.Q, "K": params.K,
        "n_classes": params.n_classes, "seed": params.seed,
        "param_order": list(params.arrays.keys()),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in params.arrays.values():
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        config = ModelConfig(**header["config"])
        shapes = param_shapes(config, header["P"], header["Q"],
                              header["n_classes"])
        if list(shapes.keys()) != header["param_order"]:
            raise ValueError("checkpoint parameter order mismatch")
        arrays = {}
        for name, shape in shapes.items():
            count = int(np.prod(shape))
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"checkpoint truncated in {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise ValueError("trailing bytes in checkpoint")
    return ModelParams(config=config, P=header["P"], Q=header["Q"],
                       K=header["K"], n_classes=header["n_classes"],
                       seed=header["seed"], arrays=arrays)
