"""Command-line entry point: generate, train, eval, export-plot.

Exit codes: 0 success, 2 configuration error, 3 training did not converge,
4 I/O error.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from .cases import ConfigError, load_config
from .datagen import (load_dataset, make_dataset, make_test_samples,
                      rollout_ns, rollout_wave, save_dataset)
from .micronet import MicroNet
from .picard import picard_forward, initial_guess, CONVERGE
from .seeding import substream
from .trainer import train, write_history_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGED = 3
EXIT_IO = 4


def _load_case(args):
    case = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace
        case = replace(case, seed=args.seed).validate()
    return case


def cmd_generate(args):
    case = _load_case(args)
    ds = make_dataset(case)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds.samples)} samples on grid "
          f"{'x'.join(str(n) for n in case.shape)} to {args.out}")
    return EXIT_OK


def cmd_train(args):
    case = _load_case(args)
    ds = load_dataset(args.dataset, case)
    t0 = time.perf_counter()
    result = train(case, ds)
    wall = time.perf_counter() - t0
    result.net.save(args.model)
    history_path = args.history or args.model + ".history.csv"
    write_history_csv(result.history, history_path)
    print(f"final loss {result.final_loss:.6e} after {result.n_evals} "
          f"evaluations in {wall:.1f}s; model -> {args.model}")
    if not result.converged:
        print("training did not reach the case tolerance", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _dump_field(path, case, pred, true):
    shape = "x".join(str(n) for n in case.shape)
    origin = ",".join(f"{v:.17g}" for lo, hi in case.domain for v in [lo])
    lines = [f"grid={case.rank}:{shape}",
             f"origin={origin}",
             f"cell_size={case.cell_size:.17g}",
             "pred:",
             " ".join(f"{v:.17g}" for v in pred),
             "true:",
             " ".join(f"{v:.17g}" for v in true)]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def run_eval(net, case, n_tests, out_dir=None):
    """Fresh seeded test cases (or a rollout for the time-dependent cases)."""
    metrics = {"case": case.equation, "per_test": []}
    dumps = []
    if case.equation == "wave2d":
        mses, preds, frames = rollout_wave(net, case)
        metrics["per_test"] = mses
        metrics["n_tests"] = len(mses)
        for k, n in enumerate(range(case.n_frames + 1,
                                    case.n_frames + case.n_rollout + 1)):
            dumps.append((preds[n], frames[n].values))
    elif case.equation == "ns_projection":
        mses, divs, frames_l, frames_c = rollout_ns(net, case)
        metrics["per_test"] = mses
        metrics["n_tests"] = len(mses)
        metrics["classical_divergence_max"] = max(divs)
        for fl, fc in zip(frames_l, frames_c):
            dumps.append((fl.values[:, 0], fc.values[:, 0]))
    else:
        grid, samples = make_test_samples(case, n_tests)
        for i, s in enumerate(samples):
            x0 = initial_guess(grid, s.bc, substream(case.seed, "eval").integers(2 ** 31), index=i)
            traj = picard_forward(net, s.b, s.bc, x0, 50, epsilon=1e-8,
                                  mode=CONVERGE)
            diff = traj.final - s.clean
            metrics["per_test"].append(float(diff @ diff) / grid.ncells)
            dumps.append((traj.final, s.clean))
        metrics["n_tests"] = n_tests
    metrics["averaged_mse"] = float(np.mean(metrics["per_test"]))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for i, (pred, true) in enumerate(dumps):
            _dump_field(os.path.join(out_dir, f"test_{i:03d}.dump"),
                        case, pred, true)
        with open(os.path.join(out_dir, "metrics.json"), "w") as f:
            json.dump(metrics, f, indent=2)
    return metrics


def cmd_eval(args):
    case = _load_case(args)
    net = MicroNet.load(args.model)
    if tuple(net.layer_sizes) != tuple(case.net_layers):
        raise ConfigError(f"model architecture {net.layer_sizes} does not "
                          f"match configured {case.net_layers}")
    metrics = run_eval(net, case, args.tests, args.out)
    print(f"averaged MSE over {metrics['n_tests']} tests: "
          f"{metrics['averaged_mse']:.6e}")
    return EXIT_OK


def _parse_dump(path):
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if len(lines) < 7:
        raise ValueError(f"dump {path} is empty or truncated")
    header = dict(ln.split("=", 1) for ln in lines[:3])
    rank, shape = header["grid"].split(":")
    shape = tuple(int(t) for t in shape.split("x"))
    origin = [float(t) for t in header["origin"].split(",")]
    cell = float(header["cell_size"])
    blocks = {}
    for label_line, value_line in zip(lines[3::2], lines[4::2]):
        blocks[label_line.rstrip(":")] = np.array(
            [float(t) for t in value_line.split()])
    if "pred" not in blocks or "true" not in blocks or blocks["pred"].size == 0:
        raise ValueError(f"dump {path} has no field data")
    return int(rank), shape, origin, cell, blocks["pred"], blocks["true"]


def cmd_export_plot(args):
    rank, shape, origin, cell, pred, true = _parse_dump(args.dump)
    err = np.abs(pred - true)
    out = []
    if rank == 1:
        out.append("# coordinate predicted true abs_error")
        for i in range(shape[0]):
            out.append(f"{origin[0] + i * cell:.17g} {pred[i]:.17g} "
                       f"{true[i]:.17g} {err[i]:.17g}")
    else:
        for label, mat in (("pred", pred), ("true", true), ("error", err)):
            out.append(f"{label}:")
            M = mat.reshape(shape)
            for row in M:
                out.append(" ".join(f"{v:.17g}" for v in row))
    content = "\n".join(out) + "\n"
    with open(args.out, "w") as f:
        f.write(content)
    print(f"wrote plot data to {args.out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="neuralstencil")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a dataset file for a case config")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--config", required=True)
    t.add_argument("--dataset", required=True)
    t.add_argument("--model", required=True)
    t.add_argument("--history")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained model on fresh cases")
    e.add_argument("--model", required=True)
    e.add_argument("--config", required=True)
    e.add_argument("--tests", type=int, default=16)
    e.add_argument("--out")
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-plot", help="convert a field dump to plot data")
    x.add_argument("--dump", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
