#!/usr/bin/env python3
"""Run the reference simulation study end to end and print a summary table.

Two stages share one master seed:

  1. characterization (interferometric readout): simulate a quadratic
     ground-truth dataset, fit the graybox/whitebox/blackbox architectures,
     evaluate generalization, and sweep the predicted Hamiltonians.
  2. control (power readout): fit a power-mode graybox, then drive both
     controllers — output distributions on the power model, unitary gates on
     the interferometric graybox and whitebox — against simulator-sampled
     reachable targets.

Artifacts (datasets, checkpoints, learning curves, control reports, sweeps)
land under --out-dir, one subdirectory per stage.  Everything is seeded, so a
rerun with the same flags reproduces the files byte for byte.

Training is full-batch (one gradient step per iteration), the same protocol
the acceptance suite pins down.  The full study trains four networks for
3000 iterations each and optimizes 100 targets per controller (about half an
hour on a laptop).  --quick shrinks it to a smoke run (about a minute).
"""

import argparse
import json
import os
import sys

from qchip.cli import main as qchip


def run(*argv):
    rc = qchip([str(a) for a in argv])
    if rc != 0:
        sys.exit(f"step failed (exit {rc}): {' '.join(str(a) for a in argv)}")


def stage_characterization(out, seed, n_train, n_test, iters):
    run("gen-data", "--out-dir", out, "--seed", seed, "--mode", "interferometric",
        "--n-train", n_train, "--n-test", n_test)
    for model in ("graybox", "whitebox", "blackbox"):
        run("train", "--out-dir", out, "--seed", seed, "--model", model,
            "--iterations", iters, "--batch-size", 0)
        run("test", "--out-dir", out, "--seed", seed, "--model", model)
    for model in ("graybox", "whitebox"):
        run("sweep-hamiltonian", "--out-dir", out, "--seed", seed,
            "--model", model, "--electrode", 1)
    run("report", "--out-dir", out, "--seed", seed)


def stage_control(out, interf_dir, seed, n_train, n_test, iters, targets):
    run("gen-data", "--out-dir", out, "--seed", seed, "--mode", "power",
        "--n-train", n_train, "--n-test", n_test)
    run("train", "--out-dir", out, "--seed", seed, "--model", "graybox",
        "--iterations", iters, "--batch-size", 0)
    run("control", "--out-dir", out, "--seed", seed, "--model", "graybox",
        "--kind", "distribution", "--targets", targets)
    # gate targets run against the characterization-stage models
    for model in ("graybox", "whitebox"):
        run("control", "--out-dir", interf_dir, "--seed", seed,
            "--model", model, "--kind", "unitary", "--targets", targets)
    run("report", "--out-dir", out, "--seed", seed)
    run("report", "--out-dir", interf_dir, "--seed", seed)


def summarize(interf_dir, power_dir):
    def load(path):
        with open(path) as fh:
            return json.load(fh)

    print("\n--- training (interferometric, quadratic ground truth) ---")
    print(f"{'model':<10} {'train MSE':>12} {'test MSE':>12} {'ratio':>7}")
    for model in ("graybox", "blackbox", "whitebox"):
        doc = load(os.path.join(interf_dir, f"eval_{model}.json"))
        print(f"{model:<10} {doc['train_mse']:>12.3e} {doc['test_mse']:>12.3e} "
              f"{doc['ratio']:>7.2f}")

    print("\n--- control (simulator-evaluated fidelities) ---")
    print(f"{'task':<26} {'mean':>8} {'min':>8} {'>0.99':>7}")
    rows = [
        ("distributions / graybox",
         os.path.join(power_dir, "control_graybox_distribution_summary.json")),
        ("unitaries / graybox",
         os.path.join(interf_dir, "control_graybox_unitary_summary.json")),
        ("unitaries / whitebox",
         os.path.join(interf_dir, "control_whitebox_unitary_summary.json")),
    ]
    for label, path in rows:
        s = load(path)
        print(f"{label:<26} {s['mean_fidelity']:>8.4f} {s['min_fidelity']:>8.4f} "
              f"{s['fraction_gt_99']:>7.2f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="runs/study")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--quick", action="store_true",
                    help="smoke-run sizes (minutes become seconds)")
    args = ap.parse_args()

    if args.quick:
        n_train, n_test, iters, targets = 300, 60, 150, 8
    else:
        n_train, n_test, iters, targets = 7000, 1000, 3000, 100

    interf_dir = os.path.join(args.out_dir, "characterization")
    power_dir = os.path.join(args.out_dir, "control")
    stage_characterization(interf_dir, args.seed, n_train, n_test, iters)
    stage_control(power_dir, interf_dir, args.seed, n_train, n_test, iters,
                  targets)
    summarize(interf_dir, power_dir)


if __name__ == "__main__":
    main()
