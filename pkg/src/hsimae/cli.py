"""Command-line entry point.

Subcommands: gen-synth, pretrain, finetune, eval, reconstruct, inspect.
Options can come from a JSON config file (--config); explicit flags win.
Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
failure.
"""

import argparse
import json
import sys

import numpy as np

from . import hsidata, loss, masking, model, tokenizer, training
from . import tensorcore as tc

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _pick(args, config, section, key, default):
    """Flag value if given, else config-file value, else default."""
    val = getattr(args, key.replace("-", "_"), None)
    if val is not None:
        return val
    return config.get(section, {}).get(key, default)


def _model_config(args, config):
    return model.ModelConfig(
        d_model=int(_pick(args, config, "model", "d_model", 64)),
        n_enc_layers=int(_pick(args, config, "model", "n_enc_layers", 4)),
        n_dec_layers=int(_pick(args, config, "model", "n_dec_layers", 2)),
        n_heads=int(_pick(args, config, "model", "n_heads", 4)),
        d_ff=int(_pick(args, config, "model", "d_ff", 256)))


def _train_settings(args, config):
    hyper = training.AdamHyper(
        lr=float(_pick(args, config, "train", "lr", 1e-3)),
        weight_decay=float(_pick(args, config, "train", "weight_decay", 0.05)))
    return training.TrainSettings(
        steps=int(_pick(args, config, "train", "steps", 300)),
        alpha=float(_pick(args, config, "train", "alpha", 0.5)),
        rho_s=float(_pick(args, config, "train", "rho_s", 0.5)),
        rho_b=float(_pick(args, config, "train", "rho_b", 0.5)),
        hyper=hyper,
        augment=not getattr(args, "no_augment", False),
        fixed_plan=getattr(args, "fixed_plan", False),
        ft_epochs=int(_pick(args, config, "train", "ft_epochs", 20)))


def cmd_gen_synth(args):
    cube = hsidata.gen_synthetic(args.height, args.width, args.bands,
                                 args.classes, args.seed)
    hsidata.save_cube(cube, args.out)
    if args.split_out:
        rows = training.make_split(cube, args.train_fraction,
                                   masking.derive_seed(args.seed, "split"))
        training.write_split(args.split_out, rows)
    print(f"wrote {args.out}: {cube.height}x{cube.width}x{cube.bands}, "
          f"{args.classes} classes")
    return EXIT_OK


def cmd_pretrain(args):
    config = _load_config(args.config)
    cubes = [hsidata.load_cube(p) for p in args.data]
    params, log = training.pretrain(
        cubes, _model_config(args, config), _train_settings(args, config),
        run_seed=args.seed, log_path=args.log, checkpoint_path=args.out)
    last = log[-1]
    print(f"pretrained {len(log)} steps; final l_rec={last['l_rec']:.6f} "
          f"(l_mse={last['l_mse']:.6f}, l_sam={last['l_sam']:.6f})")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_finetune(args):
    config = _load_config(args.config)
    params = model.load_checkpoint(args.checkpoint)
    cube = hsidata.load_cube(args.data)
    split = training.read_split(args.split)
    report, tuned = training.finetune(params, cube, split, args.mode,
                                      _train_settings(args, config),
                                      run_seed=args.seed)
    if args.out:
        model.save_checkpoint(tuned, args.out)
    print(report.to_json())
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(report.to_json() + "\n")
    return EXIT_OK


def _read_labels_csv(path):
    labels = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("i,"):
                continue
            parts = line.split(",")
            if len(parts) < 3:
                raise ValueError(f"{path}:{lineno}: bad label row {line!r}")
            labels[(int(parts[0]), int(parts[1]))] = int(parts[2])
    return labels


def cmd_eval(args):
    pred = _read_labels_csv(args.pred)
    true = _read_labels_csv(args.true)
    keys = sorted(set(pred) & set(true))
    if not keys:
        raise ValueError("prediction and truth share no pixels")
    report = training.evaluate([pred[k] for k in keys], [true[k] for k in keys])
    print(report.to_json())
    return EXIT_OK


def cmd_reconstruct(args):
    params = model.load_checkpoint(args.checkpoint)
    cube = hsidata.load_cube(args.data)
    normed, stats = hsidata.normalize(cube)
    grid = tokenizer.partition(normed)
    meta = tokenizer.spectral_meta(normed.wavelengths, grid.K)
    plan = masking.sample_mask_plan(grid.P, grid.Q, grid.K,
                                    args.rho_s, args.rho_b, args.seed)
    if not plan.masked_tokens:
        raise ValueError(
            "mask ratios leave nothing masked, so the masked MSE is "
            "undefined; pass nonzero --rho-s or --rho-b")
    tensors = params.tensors(trainable=set())
    emb = model.embed_for(params, grid, meta, tensors)
    vis, _ = masking.apply_mask(emb, plan)
    latents = model.encode(vis, tensors, params.config)
    recon = model.decode(latents, plan, tensors, params.config, meta)
    mask = masking.voxel_mask(plan, *grid.cropped_values.shape)
    _, report = loss.rec_loss(grid.cropped_values, recon, mask,
                              alpha=args.alpha)
    print(report.to_json())
    if args.out:
        band_stats = hsidata.NormStats(mean=stats.mean[:8 * grid.K],
                                       std=stats.std[:8 * grid.K])
        out_cube = hsidata.denormalize(
            hsidata.HsiCube(values=recon.data,
                            wavelengths=cube.wavelengths[:8 * grid.K]),
            band_stats)
        hsidata.save_cube(out_cube, args.out)
        print(f"wrote {args.out}")
    if args.sam_map:
        h, w, b = grid.cropped_values.shape
        angles = np.zeros((h, w, 1))
        for i in range(h):
            for j in range(w):
                y = grid.cropped_values[i, j]
                yh = recon.data[i, j]
                ny, nyh = np.linalg.norm(y), np.linalg.norm(yh)
                if ny > loss.ZERO_NORM_EPS and nyh > loss.ZERO_NORM_EPS:
                    cos = np.clip(y @ yh / (ny * nyh), -1.0, 1.0)
                    angles[i, j, 0] = np.arccos(cos)
        hsidata.save_cube(hsidata.HsiCube(values=angles,
                                          wavelengths=np.array([1.0])),
                          args.sam_map)
        print(f"wrote {args.sam_map}")
    return EXIT_OK


def cmd_inspect(args):
    cube = hsidata.load_cube(args.data)
    info = {
        "height": cube.height, "width": cube.width, "bands": cube.bands,
        "wavelength_min_um": cube.wavelengths[0],
        "wavelength_max_um": cube.wavelengths[-1],
        "labeled": cube.labels is not None,
    }
    if cube.labels is not None:
        info["n_classes"] = int(cube.labels.max())
        info["labeled_pixels"] = int((cube.labels > 0).sum())
    print(json.dumps(info))
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="hsimae",
                     description="Masked-autoencoder pipeline for "
                                 "hyperspectral cubes")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1,
                       help="worker parallelism (1 keeps runs bit-reproducible)")

    p = sub.add_parser("gen-synth", help="generate a labeled synthetic cube")
    common(p)
    p.add_argument("--h", dest="height", type=int, required=True)
    p.add_argument("--w", dest="width", type=int, required=True)
    p.add_argument("--b", dest="bands", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split-out")
    p.add_argument("--train-fraction", type=float, default=0.3)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("pretrain", help="masked-reconstruction pre-training")
    common(p)
    p.add_argument("--data", nargs="+", required=True, help="HSC cube files")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="JSON-lines loss log path")
    p.add_argument("--steps", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--rho-s", type=float)
    p.add_argument("--rho-b", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--d-model", type=int)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--fixed-plan", action="store_true")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="train the classifier on labeled pixels")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True, help="CSV i,j,label,split")
    p.add_argument("--mode", choices=["probe", "full"], default="full")
    p.add_argument("--out", help="tuned checkpoint path")
    p.add_argument("--report", help="ClassReport JSON path")
    p.add_argument("--epochs", dest="ft_epochs", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="score a prediction CSV against truth")
    common(p)
    p.add_argument("--pred", required=True, help="CSV i,j,label")
    p.add_argument("--true", required=True, help="CSV i,j,label")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reconstruct",
                       help="mask, reconstruct, and report losses for one cube")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--rho-s", type=float, default=0.5)
    p.add_argument("--rho-b", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--out", help="reconstructed cube (HSC, de-normalized)")
    p.add_argument("--sam-map", help="per-pixel angle map (single-band HSC)")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("inspect", help="print cube header facts")
    common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (hsidata.FormatError, tc.DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
