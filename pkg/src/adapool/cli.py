"""Command-line driver: ``adapool {train,eval,swap,analyze,export,gen-data}``."""

import argparse
import logging
import os
import sys

import numpy as np

from . import analysis
from .checkpoint import load_checkpoint, save_checkpoint
from .config import format_config, load_config, thresholds, training_config
from .datasets import gen_orbit_dataset, load_csv, load_idx, save_idx, shifted_digits
from .groups import make_cyclic_group
from .network import preset
from .trainer import (evaluate, network_from_checkpoint, swap_pooling, train,
                      write_metrics_csv)

log = logging.getLogger("adapool")


def _load_data(args, split=None):
    split = split or getattr(args, "split", "train")
    if args.data_csv:
        return load_csv(args.data_csv, split)
    if not args.data_images or not args.data_labels:
        raise ValueError("--data-images and --data-labels (or --data-csv) are required")
    return load_idx(args.data_images, args.data_labels, split)


def cmd_train(args):
    values = load_config(args.config) if args.config else {}
    config = training_config(values, seed=args.seed)
    data = _load_data(args, "train")
    test = None
    if args.test_images or args.test_labels:
        test = load_idx(args.test_images, args.test_labels, "test")
    init = load_checkpoint(args.checkpoint) if args.checkpoint else None
    if init is not None:
        spec = init.spec
    else:
        n_classes = values.get("n_classes", data.n_classes)
        spec = preset(values.get("preset", "svhn-small"), n_classes=n_classes,
                      input_shape=(1, *data.images.shape[1:]))
    result = train(spec, config, data, test, init=init)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(result.checkpoint, os.path.join(args.out, "checkpoint.adpl"))
    write_metrics_csv(result.metrics, os.path.join(args.out, "metrics.csv"))
    for row in result.metrics[-2 if test is not None else -1:]:
        print(f"epoch={row.epoch} split={row.split} loss={row.loss:.6f} "
              f"accuracy={100 * row.accuracy:.2f}%")


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    net = network_from_checkpoint(ckpt)
    loss, acc = evaluate(net, _load_data(args))
    print(f"split={args.split} loss={loss:.6f} accuracy={100 * acc:.2f}%")


def cmd_swap(args):
    ckpt = swap_pooling(load_checkpoint(args.checkpoint), args.mode, seed=args.seed or 0)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "checkpoint.adpl")
    save_checkpoint(ckpt, path)
    print(f"wrote {path}")


def _adaptive_layers(ckpt):
    net = network_from_checkpoint(ckpt)
    layers = net.adaptive_layers()
    if not layers:
        raise ValueError("checkpoint has no adaptive pooling layers")
    return layers


def cmd_analyze(args):
    values = load_config(args.config) if args.config else {}
    if args.seed is not None:
        values["seed"] = args.seed
    th = thresholds(values)
    ckpt = load_checkpoint(args.checkpoint)
    rows = []
    for idx, layer in _adaptive_layers(ckpt):
        pm = layer.pooling_matrix
        layer_rows = analysis.analyze_pooling(pm, p=layer.p, thresholds=th, layer=idx)
        rows.extend(layer_rows)
        lc = analysis.layer_contiguity(pm, tau_a=th.tau_a, permutations=th.permutations, seed=th.seed)
        dist = np.mean([r["distance_to_mean"] for r in layer_rows])
        print(f"layer={idx} elements={pm.n} contiguity={lc.mean_score:.4f} "
              f"baseline={lc.baseline_mean:.4f}+-{lc.baseline_std:.4f} distance_to_mean={dist:.4f}")
    os.makedirs(args.out, exist_ok=True)
    analysis.write_report_csv(rows, os.path.join(args.out, "analysis.csv"))
    with open(os.path.join(args.out, "thresholds.cfg"), "w") as f:
        f.write(format_config(vars(th)))


def cmd_export(args):
    ckpt = load_checkpoint(args.checkpoint)
    total = 0
    for idx, layer in _adaptive_layers(ckpt):
        paths = analysis.export_weight_grid(layer.pooling_matrix,
                                            directory=os.path.join(args.out, f"layer{idx}"),
                                            scale=args.scale)
        total += len(paths)
    print(f"wrote {total} images under {args.out}")


def cmd_gen_data(args):
    seed = args.seed or 0
    if args.kind == "digits":
        tr, te = shifted_digits(args.n_train, args.n_test, seed=seed, max_shift=args.max_shift)
    else:
        rng = np.random.default_rng(seed)
        group = make_cyclic_group((8, 8))
        patterns = rng.random((args.classes, 8, 8)) * (rng.random((args.classes, 8, 8)) < 0.3)
        tr = gen_orbit_dataset(patterns, group, max(1, args.n_train // args.classes), seed)
        te = gen_orbit_dataset(patterns, group, max(1, args.n_test // args.classes), seed + 1, "test")
    os.makedirs(args.out, exist_ok=True)
    for ds in (tr, te):
        save_idx(ds, os.path.join(args.out, f"{ds.split}-images.idx"),
                 os.path.join(args.out, f"{ds.split}-labels.idx"))
    print(f"wrote {len(tr)} train and {len(te)} test samples to {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(prog="adapool", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, out=False, checkpoint=False):
        p.add_argument("--seed", type=int)
        if checkpoint:
            p.add_argument("--checkpoint", required=checkpoint == "required")
        if out:
            p.add_argument("--out", required=True)
        if data:
            p.add_argument("--data-images")
            p.add_argument("--data-labels")
            p.add_argument("--data-csv", help="label,pixels... rows instead of IDX files")

    p = sub.add_parser("train", help="train a network and write checkpoint + metrics CSV")
    common(p, data=True, out=True, checkpoint=True)
    p.add_argument("--config")
    p.add_argument("--test-images")
    p.add_argument("--test-labels")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print loss/accuracy of a checkpoint on a split")
    common(p, data=True, checkpoint="required")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("swap", help="replace fixed pooling layers by adaptive pooling")
    common(p, out=True, checkpoint="required")
    p.add_argument("--mode", choices=("adaptive-mean-init", "adaptive-random"),
                   default="adaptive-mean-init")
    p.set_defaults(func=cmd_swap)

    p = sub.add_parser("analyze", help="write the pooling-weight analysis CSV")
    common(p, out=True, checkpoint="required")
    p.add_argument("--config")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("export", help="write pooling weights as PGM images")
    common(p, out=True, checkpoint="required")
    p.add_argument("--scale", type=int, default=4)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("gen-data", help="write a synthetic dataset as IDX files")
    common(p, out=True)
    p.add_argument("--kind", choices=("digits", "orbits"), default="digits")
    p.add_argument("--n-train", type=int, default=5000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--max-shift", type=int, help="digit jitter around the center (default: whole canvas)")
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"adapool {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
