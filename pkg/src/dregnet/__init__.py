"""Minibatch SGD training engine with a dual-weight regularized layer.

One layer of a small network carries two weight sets trained to stay
distinctive while both classify well; after training, the better path is
kept. The package also ships the experiment harness (config-driven runs,
sweeps, verification suites) and a scikit-learn style classifier facade.
"""

from .data import Batch, Dataset, gen_blobs, gen_two_spirals, load_idx, shard_gradients
from .dreg import (DRegLayer, DRegTrace, attach_dreg, compute_gradients,
                   distinctiveness_decomposition_check, dreg_grad, dreg_loss,
                   dreg_update, init_dreg, select_inference_path)
from .estimator import DRegClassifier
from .models import build_network
from .nn import (AvgPool2d, Conv2d, Dense, Flatten, LossBreakdown, Network,
                 ReLU, ResidualBlock, cross_entropy, finite_diff_grad)
from .optim import MomentumState, TrainConfig, apply_update, momentum_step, sgd_step
from .tensor import NonFiniteError, ShapeError, Tensor, conv2d, frobenius_sq, matmul
from .training import execute_run, run_experiment, train_step

__version__ = "0.1.0"

__all__ = [
    "Batch", "Dataset", "gen_blobs", "gen_two_spirals", "load_idx",
    "shard_gradients", "DRegLayer", "DRegTrace", "attach_dreg",
    "compute_gradients", "distinctiveness_decomposition_check", "dreg_grad",
    "dreg_loss", "dreg_update", "init_dreg", "select_inference_path",
    "DRegClassifier", "build_network", "AvgPool2d", "Conv2d", "Dense",
    "Flatten", "LossBreakdown", "Network", "ReLU", "ResidualBlock",
    "cross_entropy", "finite_diff_grad", "MomentumState", "TrainConfig",
    "apply_update", "momentum_step", "sgd_step", "NonFiniteError",
    "ShapeError", "Tensor", "conv2d", "frobenius_sq", "matmul",
    "run_experiment", "execute_run", "train_step", "__version__",
]
