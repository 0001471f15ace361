"""Optimization, augmentation, training loops, and classification metrics.

Pre-training reconstructs masked synthetic (or real, desk-sized) cubes
with the composite MSE + spectral-angle objective under AdamW.
Fine-tuning trains the classifier head (linear probe) or the whole
model on 9 x 9 full-band windows centered on labeled pixels.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import hsidata, loss, masking, model, tokenizer
from . import tensorcore as tc


@dataclass
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05


@dataclass
class OptimState:
    m: dict = field(default_factory=dict)  # name -> first moment
    v: dict = field(default_factory=dict)  # name -> second moment
    t: int = 0


def adamw_step(arrays, grads, state, hyper):
    """One AdamW update, in place on `arrays`, for every name in `grads`.

    Weight decay is decoupled: each updated parameter is first scaled
    by (1 - lr * wd), then receives the bias-corrected Adam step.
    """
    state.t += 1
    t = state.t
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient for '{name}' at optimizer step {t}")
        p = arrays[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if hyper.weight_decay:
            p *= 1.0 - hyper.lr * hyper.weight_decay
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * g * g
        m_hat = m / (1.0 - hyper.beta1 ** t)
        v_hat = v / (1.0 - hyper.beta2 ** t)
        p -= hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)


def augment(cube, seed, jitter_sigma=0.01):
    """Random horizontal/vertical flips plus per-band spectral jitter.

    Each flip fires with probability 1/2; jitter adds one Gaussian
    draw (sigma in normalized units) to every value of a band. Labels
    flip together with the values.
    """
    rng = np.random.default_rng(seed)
    values = cube.values
    labels = cube.labels
    if rng.random() < 0.5:
        values = values[:, ::-1, :]
        labels = None if labels is None else labels[:, ::-1]
    if rng.random() < 0.5:
        values = values[::-1, :, :]
        labels = None if labels is None else labels[::-1, :]
    values = values.copy()
    if jitter_sigma > 0:
        values += rng.normal(0.0, jitter_sigma, size=cube.bands)
    return hsidata.HsiCube(values=values, wavelengths=cube.wavelengths.copy(),
                           labels=None if labels is None else labels.copy())


@dataclass
class ClassReport:
    confusion: np.ndarray  # rows = true class, cols = predicted
    oa: float              # percent
    aa: float              # percent
    kappa: float
    degenerate: bool = False

    def to_json(self):
        return json.dumps({
            "confusion": self.confusion.tolist(), "oa": self.oa, "aa": self.aa,
            "kappa": self.kappa, "degenerate": self.degenerate})


def evaluate(pred, true):
    """Confusion matrix, overall/average accuracy, and Cohen's kappa."""
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError("prediction and truth must be equal-length, non-empty")
    n_classes = int(max(pred.max(), true.max()))
    if min(pred.min(), true.min()) < 1:
        raise ValueError("class ids must be >= 1 (0 marks unlabeled pixels)")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (true - 1, pred - 1), 1)
    total = confusion.sum()
    p_o = np.trace(confusion) / total
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore"):
        recalls = np.diag(confusion) / support
    aa = 100.0 * float(np.mean(recalls[support > 0]))
    p_e = float(confusion.sum(axis=1) @ confusion.sum(axis=0)) / total ** 2
    degenerate = bool(p_e >= 1.0 - 1e-15)
    if degenerate:
        kappa = 1.0 if p_o == 1.0 else 0.0
    else:
        kappa = (p_o - p_e) / (1.0 - p_e)
    return ClassReport(confusion=confusion, oa=100.0 * float(p_o), aa=aa,
                       kappa=float(kappa), degenerate=degenerate)


@dataclass
class TrainSettings:
    steps: int = 300
    alpha: float = 0.5
    rho_s: float = 0.5
    rho_b: float = 0.5
    hyper: AdamHyper = field(default_factory=AdamHyper)
    augment: bool = True
    jitter_sigma: float = 0.01
    fixed_plan: bool = False
    checkpoint_every: int = 0  # 0 = final checkpoint only
    ft_epochs: int = 20


def _plan_for(grid, settings, seed):
    return masking.sample_mask_plan(grid.P, grid.Q, grid.K,
                                    settings.rho_s, settings.rho_b, seed)


def pretrain(cubes, config, settings, run_seed,
             log_path=None, checkpoint_path=None):
    """Masked-reconstruction pre-training loop.

    Round-robin over cubes; per step: augment, normalize, tokenize,
    mask, encode visible tokens, decode, composite loss, backward,
    AdamW. Returns (ModelParams, list of per-step log dicts).
    """
    if not cubes:
        raise ValueError("need at least one cube")
    grids = [tokenizer.partition(c) for c in cubes]
    dims = {(g.P, g.Q, g.K) for g in grids}
    if len(dims) != 1:
        raise ValueError(f"all cubes must share one token grid, got {dims}")
    P, Q, K = dims.pop()
    probe_plan = _plan_for(grids[0], settings, seed=0)
    if not probe_plan.masked_tokens:
        raise ValueError(
            "mask ratios leave no masked tokens; the masked MSE is undefined")
    n_classes = max(2, max(int(c.labels.max()) if c.labels is not None else 0
                           for c in cubes))
    params = model.init_params(config, P, Q, K, n_classes,
                               seed=masking.derive_seed(run_seed, "init"))
    state = OptimState()
    log_entries = []
    for step in range(settings.steps):
        cube_id = step % len(cubes)
        epoch = step // len(cubes)
        cube = cubes[cube_id]
        if settings.augment:
            cube = augment(cube, masking.derive_seed(run_seed, "aug", step),
                           jitter_sigma=settings.jitter_sigma)
        cube, _ = hsidata.normalize(cube)
        grid = tokenizer.partition(cube)
        meta = tokenizer.spectral_meta(cube.wavelengths, grid.K)
        if settings.fixed_plan:
            plan_seed = masking.derive_seed(run_seed, "plan", 0, 0, 0)
        else:
            plan_seed = masking.derive_seed(run_seed, "plan", epoch, step, cube_id)
        plan = _plan_for(grid, settings, plan_seed)
        tensors = params.tensors()
        emb = model.embed_for(params, grid, meta, tensors)
        vis, _ = masking.apply_mask(emb, plan)
        latents = model.encode(vis, tensors, config)
        recon = model.decode(latents, plan, tensors, config, meta)
        mask = masking.voxel_mask(plan, *grid.cropped_values.shape)
        try:
            total, report = loss.rec_loss(grid.cropped_values, recon, mask,
                                          alpha=settings.alpha)
        except FloatingPointError as exc:
            raise FloatingPointError(
                f"non-finite loss at step {step}; plan: {plan.to_json()}") from exc
        total.backward()
        grads = {name: t.grad for name, t in tensors.items()
                 if t.grad is not None}
        adamw_step(params.arrays, grads, state, settings.hyper)
        log_entries.append({"step": step, "l_mse": report.l_mse,
                            "l_sam": report.l_sam, "l_rec": report.l_rec,
                            "seed": plan.seed})
        if (checkpoint_path and settings.checkpoint_every
                and (step + 1) % settings.checkpoint_every == 0):
            model.save_checkpoint(params, checkpoint_path)
    if checkpoint_path:
        model.save_checkpoint(params, checkpoint_path)
    if log_path:
        with open(log_path, "w") as fh:
            for entry in log_entries:
                fh.write(json.dumps(entry) + "\n")
    return params, log_entries


def extract_window(cube, i, j, half=4):
    """9 x 9 full-band window centered on (i, j), edges replicate-padded."""
    padded = np.pad(cube.values, ((half, half), (half, half), (0, 0)),
                    mode="edge")
    window = padded[i:i + 2 * half + 1, j:j + 2 * half + 1, :]
    return hsidata.HsiCube(values=window, wavelengths=cube.wavelengths.copy())


def read_split(path):
    """CSV rows `i,j,label,split` with split in {train, test}."""
    train, test = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("i,"):
                continue
            parts = line.split(",")
            if len(parts) != 4 or parts[3] not in ("train", "test"):
                raise ValueError(f"{path}:{lineno}: bad split row {line!r}")
            entry = (int(parts[0]), int(parts[1]), int(parts[2]))
            (train if parts[3] == "train" else test).append(entry)
    return train, test


def write_split(path, rows):
    with open(path, "w") as fh:
        fh.write("i,j,label,split\n")
        for i, j, label, split in rows:
            fh.write(f"{i},{j},{label},{split}\n")


def make_split(cube, train_fraction, seed):
    """Stratified random train/test split over labeled pixels."""
    rng = np.random.default_rng(seed)
    rows = []
    for c in np.unique(cube.labels):
        if c == 0:
            continue
        coords = np.argwhere(cube.labels == c)
        rng.shuffle(coords)
        n_train = max(1, int(round(train_fraction * len(coords))))
        n_train = min(n_train, len(coords) - 1)
        for idx, (i, j) in enumerate(coords):
            split = "train" if idx < n_train else "test"
            rows.append((int(i), int(j), int(c), split))
    return rows


def _cross_entropy(logits, label):
    """-log softmax(logits)[label], stable via max subtraction."""
    probs = tc.softmax(logits)
    onehot = np.zeros(logits.data.shape)
    onehot[label] = 1.0
    p = tc.tsum(tc.mul(probs, tc.Tensor(onehot)))
    return tc.scale(tc.log(p), -1.0)


PROBE_PARAMS = ("cls_w", "cls_b")


def finetune(params, cube, split, mode, settings, run_seed=0):
    """Train the classifier on labeled windows; returns (ClassReport, params).

    mode 'probe' updates only the classifier head; 'full' updates every
    parameter. `split` is (train_rows, test_rows) of (i, j, label).
    """
    if mode not in ("probe", "full"):
        raise ValueError(f"mode must be 'probe' or 'full', got {mode}")
    if cube.labels is None:
        raise ValueError("fine-tuning needs a labeled cube")
    train_rows, test_rows = split
    if not train_rows or not test_rows:
        raise ValueError("split must contain train and test pixels")
    n_classes = max(label for _, _, label in train_rows + test_rows)
    params = params.copy()
    if params.n_classes != n_classes:
        # fresh head sized for this task
        rng = np.random.default_rng(masking.derive_seed(run_seed, "head"))
        d = params.config.d_model
        params.n_classes = n_classes
        params.arrays["cls_w"] = model._truncated_normal(rng, (d, n_classes))
        params.arrays["cls_b"] = np.zeros(n_classes)
    trainable = set(PROBE_PARAMS) if mode == "probe" else set(params.arrays)
    normed, _ = hsidata.normalize(cube)
    windows = {(i, j): extract_window(normed, i, j)
               for i, j, _ in train_rows + test_rows}
    state = OptimState()
    order = np.arange(len(train_rows))
    rng = np.random.default_rng(masking.derive_seed(run_seed, "order"))
    for epoch in range(settings.ft_epochs):
        rng.shuffle(order)
        for idx in order:
            i, j, label = train_rows[idx]
            tensors = params.tensors(trainable=trainable)
            logits = model.classify(windows[(i, j)], params, tensors)
            ce = _cross_entropy(logits, label - 1)
            ce.backward()
            grads = {name: tensors[name].grad for name in trainable
                     if tensors[name].grad is not None}
            adamw_step(params.arrays, grads, state, settings.hyper)
    preds, trues = [], []
    for i, j, label in test_rows:
        logits = model.classify(windows[(i, j)], params).data
        preds.append(int(np.argmax(logits)) + 1)
        trues.append(label)
    return evaluate(preds, trues), params
