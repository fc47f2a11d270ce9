"""Command-line entry points: train, sweep, verify, eval."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import load_config
from .model_io import load_model
from .models import reshape_for
from .sweeps import AXES, run_sweep
from .tensor import Tensor
from .training import execute_run, load_dataset
from .verify import run_all


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    result, out_dir = execute_run(cfg)
    last = result.records[-1] if result.records else None
    print(f"run written to {out_dir}")
    if last is not None:
        if last.val_acc_l is not None:
            print(f"final epoch {last.epoch}: loss {last.train_loss_total:.6f}, "
                  f"val acc R {last.val_acc_r:.4f} / L {last.val_acc_l:.4f}")
        else:
            print(f"final epoch {last.epoch}: loss {last.train_loss_total:.6f}, "
                  f"val acc {last.val_acc_r:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    ranked, out_dir = run_sweep(cfg, args.axis)
    print(f"sweep written to {out_dir}")
    print(f"{'rank':>4}  {'point':<24} {'best val acc':>12}  epochs to 95%")
    for rank, point in enumerate(ranked, start=1):
        print(f"{rank:>4}  {point.label:<24} {point.best_val_acc:>12.4f}  "
              f"{point.epochs_to_threshold}")
    return 0


def _cmd_verify(_args) -> int:
    results = run_all()
    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return 1 if failed else 0


def _cmd_eval(args) -> int:
    net, meta = load_model(args.model)
    cfg = load_config(args.dataset)
    ds = load_dataset(cfg)
    arch = meta.get("arch", cfg["model.arch"])
    x = Tensor(reshape_for(arch, ds.inputs.data))
    logits = net.forward(x, cache=False)
    acc = float(np.mean(logits.data.argmax(axis=1) == ds.labels))
    print(f"{os.path.basename(args.model)}: accuracy {acc:.4f} "
          f"on {len(ds)} samples ({cfg['data.source']})")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dregnet",
        description="Train and analyze dual-weight (distinctively "
                    "regularized) networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training config")
    p_train.add_argument("config", help="path to a flat key-value config file")
    p_train.set_defaults(fn=_cmd_train)

    p_sweep = sub.add_parser("sweep", help="run a hyperparameter sweep")
    p_sweep.add_argument("config", help="base config file")
    p_sweep.add_argument("--axis", required=True, choices=AXES,
                         help="which hyperparameter to sweep")
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the verification suites")
    p_verify.set_defaults(fn=_cmd_verify)

    p_eval = sub.add_parser("eval", help="evaluate a saved model on a dataset")
    p_eval.add_argument("model", help="path to a saved model file")
    p_eval.add_argument("dataset", help="config file whose data.* keys define "
                                        "the dataset")
    p_eval.set_defaults(fn=_cmd_eval)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
