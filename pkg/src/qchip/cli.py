"""Command-line pipeline: generate data, train, test, control, sweep, report.

Defaults reproduce the reference simulation study (7000/1000 examples, Adam
lr 0.003 for 3000 iterations, voltage domain [-1,1]); every hyperparameter is
a flag.  All artifacts land in --out-dir with fixed names, and identical flags
plus seeds yield byte-identical files.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import os

# honor the thread cap before numpy spins up its BLAS pools
_THREADS = os.environ.get("QCTRL_THREADS")
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse
import json
import sys

import numpy as np

from . import control, models, simulator
from .errors import (
    ControlOutOfDomain,
    ConvergenceFailure,
    DegenerateMatrix,
    ModelNotTrained,
    NoConvergence,
    NonFiniteLoss,
    NotADistribution,
    NotHermitian,
    NotUnitary,
    ShapeMismatch,
    UnsupportedModel,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_USAGE_ERRORS = (UnsupportedModel, ModelNotTrained, ControlOutOfDomain, ValueError)
_DATA_ERRORS = (OSError, ShapeMismatch, NotADistribution, DegenerateMatrix,
                json.JSONDecodeError, KeyError)
_NUMERIC_ERRORS = (NonFiniteLoss, NoConvergence, ConvergenceFailure, NotHermitian,
                   NotUnitary)


def _gt_from_args(args) -> simulator.ChipGroundTruth:
    return simulator.default_ground_truth(
        linear=getattr(args, "linear", False),
        sigma=getattr(args, "sigma", 0.0),
        seed=args.seed,
    )


def _paths(args) -> dict:
    out = args.out_dir
    return {
        "train": os.path.join(out, "train.jsonl"),
        "test": os.path.join(out, "test.jsonl"),
        "model": lambda kind: os.path.join(out, f"model_{kind}.json"),
        "curves": lambda kind: os.path.join(out, f"curves_{kind}.csv"),
        "eval": lambda kind: os.path.join(out, f"eval_{kind}.json"),
        "control": lambda kind, tk: os.path.join(out, f"control_{kind}_{tk}.csv"),
        "control_summary": lambda kind, tk: os.path.join(
            out, f"control_{kind}_{tk}_summary.json"),
        "sweep": lambda kind, e: os.path.join(out, f"sweep_{kind}_e{e}.csv"),
        "report": os.path.join(out, "report.json"),
    }


def cmd_gen_data(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    gt = _gt_from_args(args)
    train, test = simulator.generate_dataset(
        gt, n_train=args.n_train, n_test=args.n_test, mode=args.mode, seed=args.seed
    )
    paths = _paths(args)
    simulator.write_dataset(train, paths["train"])
    simulator.write_dataset(test, paths["test"])
    print(f"gen-data: n_train={train.n} n_test={test.n} mode={args.mode} "
          f"sigma={gt.sigma} gt_hash={simulator.gt_hash(gt)}")
    return EXIT_OK


def cmd_train(args) -> int:
    paths = _paths(args)
    train = simulator.read_dataset(paths["train"], split="train")
    test = simulator.read_dataset(paths["test"], split="test")
    if args.mode and args.mode != train.mode:
        raise ShapeMismatch(f"--mode {args.mode} but dataset is {train.mode}")
    model = models.create_model(args.model, mode=train.mode, seed=args.seed)
    config = models.TrainConfig(iterations=args.iterations,
                                learning_rate=args.lr, seed=args.seed,
                                batch_size=args.batch_size or None)
    report = models.train_model(model, train, test, config)
    models.save_checkpoint(model, paths["model"](args.model))
    models.save_curves(report, paths["curves"](args.model))
    print(f"train: model={args.model} mode={train.mode} iters={args.iterations} "
          f"final_train_mse={report.final_train_mse:.6e} "
          f"final_test_mse={report.final_test_mse:.6e} "
          f"({report.wall_seconds:.1f}s)")
    return EXIT_OK


def cmd_test(args) -> int:
    paths = _paths(args)
    model = models.load_checkpoint(paths["model"](args.model))
    train = simulator.read_dataset(paths["train"], split="train")
    test = simulator.read_dataset(paths["test"], split="test")
    train_mse = models.evaluate_model(model, train)
    test_mse = models.evaluate_model(model, test)
    doc = {
        "model": args.model,
        "mode": model.mode,
        "train_mse": train_mse,
        "test_mse": test_mse,
        "ratio": test_mse / train_mse if train_mse > 0 else float("inf"),
    }
    with open(paths["eval"](args.model), "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
    print(f"test: model={args.model} train_mse={train_mse:.6e} "
          f"test_mse={test_mse:.6e} ratio={doc['ratio']:.3f}")
    return EXIT_OK


def _control_one(model, gt, kind, master_seed, index, cfg_proto):
    target = control.sample_reachable_target(gt, kind, seed=master_seed, index=index)
    cfg = control.ControllerConfig(
        restarts=cfg_proto.restarts,
        iterations=cfg_proto.iterations,
        learning_rate=cfg_proto.learning_rate,
        seed=(index, master_seed),
    )
    if kind == "unitary":
        res = control.optimize_unitary(model, target.payload, cfg, gt=gt)
    else:
        res = control.optimize_output(model, target.payload, cfg, gt=gt)
    return target, res


def cmd_control(args) -> int:
    if args.kind == "unitary" and args.model == "blackbox":
        raise UnsupportedModel(
            "blackbox provides no unitary access; unitary control needs graybox or whitebox"
        )
    paths = _paths(args)
    model = models.load_checkpoint(paths["model"](args.model))
    gt = _gt_from_args(args)
    cfg_proto = control.ControllerConfig(
        restarts=args.restarts, iterations=args.iterations, learning_rate=args.lr
    )
    jobs = range(args.targets)
    workers = int(_THREADS) if _THREADS else 1
    if workers > 1 and args.targets > 1:
        from concurrent.futures import ProcessPoolExecutor
        from functools import partial

        fn = partial(_control_one, model, gt, args.kind, args.seed,
                     cfg_proto=cfg_proto)
        with ProcessPoolExecutor(max_workers=workers) as ex:
            pairs = list(ex.map(fn, jobs))
    else:
        pairs = [_control_one(model, gt, args.kind, args.seed, i, cfg_proto)
                 for i in jobs]
    targets = [p[0] for p in pairs]
    results = [p[1] for p in pairs]
    report = control.evaluate_controls(gt, results, targets, model_kind=args.model)
    control.write_control_csv(report, paths["control"](args.model, args.kind))
    control.write_control_summary(report, paths["control_summary"](args.model, args.kind))
    s = report.summary
    print(f"control: model={args.model} kind={args.kind} n={s['n_targets']} "
          f"mean_fidelity={s['mean_fidelity']:.6f} "
          f"fraction_gt_99={s['fraction_gt_99']:.3f}")
    return EXIT_OK


def cmd_sweep_hamiltonian(args) -> int:
    paths = _paths(args)
    model = models.load_checkpoint(paths["model"](args.model))
    if model.kind == "blackbox":
        raise UnsupportedModel("blackbox exposes no Hamiltonian to sweep")
    vs = np.linspace(-1.0, 1.0, args.points)
    path = paths["sweep"](args.model, args.electrode)
    labels = [f"H{i+1}{j+1}_{p}" for i in range(3) for j in range(3)
              for p in ("re", "im")]
    with open(path, "w") as fh:
        fh.write("v," + ",".join(labels) + "\n")
        for v in vs:
            V = np.zeros(simulator.N_ELECTRODES)
            V[args.electrode - 1] = v
            H = models.predict_hamiltonian(model, V)
            vals = []
            for i in range(3):
                for j in range(3):
                    vals.append(repr(float(H[i, j].real)))
                    vals.append(repr(float(H[i, j].imag)))
            fh.write(repr(float(v)) + "," + ",".join(vals) + "\n")
    print(f"sweep-hamiltonian: model={args.model} electrode={args.electrode} "
          f"points={args.points} -> {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    paths = _paths(args)
    doc = {"datasets": {}, "evaluations": {}, "control": {}, "sweeps": []}
    for split in ("train", "test"):
        p = paths[split]
        if os.path.exists(p):
            with open(p) as fh:
                doc["datasets"][split] = json.loads(fh.readline())
    for kind in ("graybox", "whitebox", "blackbox"):
        p = paths["eval"](kind)
        if os.path.exists(p):
            with open(p) as fh:
                doc["evaluations"][kind] = json.load(fh)
        for tk in ("distribution", "unitary"):
            p = paths["control_summary"](kind, tk)
            if os.path.exists(p):
                with open(p) as fh:
                    doc["control"][f"{kind}_{tk}"] = json.load(fh)
        for e in range(1, 5):
            p = paths["sweep"](kind, e)
            if os.path.exists(p):
                doc["sweeps"].append(os.path.basename(p))
    with open(paths["report"], "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(f"report: wrote {paths['report']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qchip",
        description="Characterize and control a simulated three-waveguide photonic chip.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", default="runs", help="artifact directory")
        p.add_argument("--seed", type=int, default=0, help="master seed (nonnegative)")

    p = sub.add_parser("gen-data", help="simulate and write train/test datasets")
    common(p)
    p.add_argument("--n-train", type=int, default=7000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--mode", choices=["power", "interferometric"], default="power")
    p.add_argument("--sigma", type=float, default=0.0, help="measurement noise std")
    p.add_argument("--linear", action="store_true",
                   help="drop the quadratic ground-truth terms")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit a model to the generated dataset")
    common(p)
    p.add_argument("--model", choices=["graybox", "whitebox", "blackbox"],
                   default="graybox")
    p.add_argument("--mode", choices=["power", "interferometric"], default=None,
                   help="optional check against the dataset mode")
    p.add_argument("--iterations", type=int, default=3000)
    p.add_argument("--lr", type=float, default=0.003)
    p.add_argument("--batch-size", type=int, default=32,
                   help="minibatch size; 0 trains full-batch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("test", help="evaluate a checkpoint on train and test sets")
    common(p)
    p.add_argument("--model", choices=["graybox", "whitebox", "blackbox"],
                   default="graybox")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("control", help="optimize controls for sampled targets")
    common(p)
    p.add_argument("--model", choices=["graybox", "whitebox", "blackbox"],
                   default="graybox")
    p.add_argument("--kind", choices=["distribution", "unitary"],
                   default="distribution")
    p.add_argument("--targets", type=int, default=1000)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--linear", action="store_true")
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("sweep-hamiltonian",
                       help="predicted Hamiltonian vs one electrode voltage")
    common(p)
    p.add_argument("--model", choices=["graybox", "whitebox", "blackbox"],
                   default="graybox")
    p.add_argument("--electrode", type=int, choices=[1, 2, 3, 4], default=1)
    p.add_argument("--points", type=int, default=101)
    p.set_defaults(func=cmd_sweep_hamiltonian)

    p = sub.add_parser("report", help="aggregate run artifacts into report.json")
    common(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
