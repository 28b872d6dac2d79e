"""Command-line driver: ``hhe {synth,train,eval,gradcheck,ablate}``.

Output files (all CSV with a fixed header):

* ``train_log.csv``: epoch,loss,L_at,lambda_L_ac,gamma_R_e,S_We,active_triplet_fraction
* ``eval.csv``: metric,value with rows cmc_1..cmc_<k_max>, map, rank1
* ``ablation.csv``: variant,top1,top5,top10,mAP,S_We
* gradcheck prints variant,max_rel_error,checked,skipped,status to stdout
"""

import argparse
import csv
import io
import os
import sys

import numpy as np

from . import gradcheck
from .config import dump_config, load_config, parse_assignments
from .data import generate_synthetic, load_features, save_features, split_query_gallery, split_train_test
from .errors import DimensionMismatch, HHEError
from .evaluation import evaluate, tta_average
from .losses import VARIANTS, orthogonality_score
from .model import forward, load_model, save_model
from .training import LOG_COLUMNS, train

FEATURES_FILE = "features.hhe"
MODEL_FILE = "model.hhem"
LOG_FILE = "train_log.csv"
EVAL_FILE = "eval.csv"
ABLATION_FILE = "ablation.csv"
ABLATION_COLUMNS = ("variant", "top1", "top5", "top10", "mAP", "S_We")


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(buf.getvalue())
    return buf.getvalue()


def _out_dir(config):
    os.makedirs(config.out, exist_ok=True)
    return config.out


def load_dataset(config, features=None):
    """Read ``features`` if given, otherwise synthesize from ``config``."""
    if features is not None:
        return load_features(features)
    return generate_synthetic(config.synth_config())


def split_dataset(config, dataset):
    """Deterministic (train, query, gallery) split for ``config.seed``."""
    train_set, test_set = split_train_test(
        dataset, config.test_fraction, np.random.default_rng([config.seed, 2])
    )
    query, gallery = split_query_gallery(
        test_set, np.random.default_rng([config.seed, 3]), config.query_fraction
    )
    return train_set, query, gallery


def embed(net, dataset, tta=1, sigma_tta=0.0, rng=None):
    """Embed ``dataset``; with ``tta > 1`` average over jittered input copies.

    The original input is always one of the ``tta`` copies.
    """
    if dataset.dim != net.d_in:
        raise DimensionMismatch(f"model expects {net.d_in}-d inputs, features are {dataset.dim}-d")
    outputs = [forward(net, dataset.vectors)]
    for _ in range(tta - 1):
        jitter = rng.normal(0.0, sigma_tta, size=dataset.vectors.shape)
        outputs.append(forward(net, dataset.vectors + jitter))
    return dataset.with_vectors(tta_average(outputs))


def evaluate_model(config, net, query, gallery, tta=None):
    tta = config.tta if tta is None else tta
    rng = np.random.default_rng([config.seed, 4])
    q = embed(net, query, tta, config.sigma_tta, rng)
    g = embed(net, gallery, tta, config.sigma_tta, rng)
    return evaluate(
        q, g, protocol=config.protocol, k_max=config.k_max, repeats=config.repeats,
        seed=config.seed, ap_mode=config.ap_mode,
    )


def cmd_synth(config, out_path=None):
    dataset = generate_synthetic(config.synth_config())
    out_path = out_path or os.path.join(_out_dir(config), FEATURES_FILE)
    save_features(dataset, out_path)
    print(
        f"wrote {out_path}: {len(dataset)} samples, {dataset.identities().size} identities, "
        f"{np.unique(dataset.cameras).size} cameras, dim {dataset.dim}"
    )
    return dataset


def _print_entry(entry):
    print(" ".join(f"{k}={_fmt(v)}" for k, v in entry.items()))


def cmd_train(config, features=None, verbose=False):
    out = _out_dir(config)
    train_set, _, _ = split_dataset(config, load_dataset(config, features))
    callback = _print_entry if verbose else None
    net, log = train(train_set, config.train_config(), config.seed, callback=callback)
    save_model(net, os.path.join(out, MODEL_FILE))
    _write_csv(os.path.join(out, LOG_FILE), LOG_COLUMNS, [[e[c] for c in LOG_COLUMNS] for e in log])
    last = log[-1] if log else None
    if last:
        print(f"trained {config.variant}: final loss {last['loss']:.6f}, S(W_e) {last['S_We']:.4f}")
    return net, log


def report_rows(report):
    rows = [(f"cmc_{k}", v) for k, v in enumerate(report.cmc, start=1)]
    rows += [("map", report.map), ("rank1", report.rank1)]
    return rows


def cmd_eval(config, model_path, features=None):
    net = load_model(model_path)
    _, query, gallery = split_dataset(config, load_dataset(config, features))
    report = evaluate_model(config, net, query, gallery)
    text = _write_csv(os.path.join(_out_dir(config), EVAL_FILE), ("metric", "value"), report_rows(report))
    sys.stdout.write(text)
    return report


def cmd_gradcheck(config, trials=20, corrupt=0.0):
    """Run the finite-difference check for all variants; True when all pass."""
    results = gradcheck.check_all(config.loss_config(), trials=trials, seed=config.seed, corrupt=corrupt)
    print("variant,max_rel_error,checked,skipped,status")
    for r in results:
        print(f"{r.variant},{r.max_rel_error:.3e},{r.checked},{r.skipped},{'pass' if r.passed else 'FAIL'}")
    return results


def cmd_ablate(config, features=None):
    """Train and evaluate every variant on one shared split.

    Returns:
        (rows, nets) where ``rows`` follow :data:`ABLATION_COLUMNS` and
        ``nets`` maps variant name to its trained network.
    """
    out = _out_dir(config)
    train_set, query, gallery = split_dataset(config, load_dataset(config, features))
    rows, nets = [], {}
    for variant in VARIANTS:
        net, _ = train(train_set, config.train_config(variant), config.seed)
        nets[variant] = net
        save_model(net, os.path.join(out, f"model_{variant}.hhem"))
        r = evaluate_model(config, net, query, gallery)
        row = (variant, r.topk(1), r.topk(5), r.topk(10), r.map, orthogonality_score(net.embed))
        rows.append(row)
        print(",".join(_fmt(v) for v in row), flush=True)
    _write_csv(os.path.join(out, ABLATION_FILE), ABLATION_COLUMNS, rows)
    return rows, nets


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hhe", description="Train and evaluate angular embedding models on identity features."
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--variant", choices=VARIANTS)
    common.add_argument("--protocol", choices=("market", "cuhk"))
    common.add_argument("--tta", type=int, help="feature copies averaged at test time")
    common.add_argument("--out", help="output directory")
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic feature file")
    p = sub.add_parser("train", parents=[common], help="train one variant")
    p.add_argument("--features", help="HHE v1 feature file (synthesized when omitted)")
    p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("eval", parents=[common], help="evaluate a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--features")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--corrupt", type=float, default=0.0, help=argparse.SUPPRESS)
    p = sub.add_parser("ablate", parents=[common], help="train and evaluate all five variants")
    p.add_argument("--features")
    sub.add_parser("show-config", parents=[common], help="print the effective configuration")
    return parser


def config_from_args(args):
    overrides = parse_assignments(args.set)
    for key in ("seed", "variant", "protocol", "tta", "out"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        if args.command == "synth":
            cmd_synth(config)
        elif args.command == "train":
            cmd_train(config, args.features, verbose=args.verbose)
        elif args.command == "eval":
            cmd_eval(config, args.model, args.features)
        elif args.command == "gradcheck":
            if args.trials < 1:
                raise HHEError("--trials must be >= 1")
            results = cmd_gradcheck(config, args.trials, args.corrupt)
            return 0 if all(r.passed for r in results) else 1
        elif args.command == "ablate":
            cmd_ablate(config, args.features)
        elif args.command == "show-config":
            sys.stdout.write(dump_config(config))
    except (HHEError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
