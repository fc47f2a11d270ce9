"""First-class verification suites behind the CLI's verify command.

Each suite cross-checks an engine behavior against an independent route
(finite differences, the brute-force convolution, the inline vanilla
trainer, or a closed-form identity) and reports its worst residual. The
acceptance tests run the same suites at their full-strength parameters.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import oracle
from .data import Batch, Dataset, epoch_batches, gen_blobs, shard_gradients
from .dreg import (DRegTrace, attach_dreg, collapse_dual, compute_gradients,
                   distinctiveness_decomposition_check, dreg_grad)
from .models import build_network
from .nn import AvgPool2d, Dense, Flatten, Network, finite_diff_grad
from .optim import MomentumState, TrainConfig, apply_update
from .tensor import Tensor, conv2d_raw
from .training import evaluate_losses, train_step

GRAD_RTOL = 1e-5
GRAD_ATOL = 1e-7
EXACT_TOL = 1e-12
IDENTITY_TOL = 1e-10
GROWTH_RTOL = 1e-9

GROWTH_SETTINGS = ((0.1, 0.1), (0.01, 0.1), (1.0, 0.01))


@dataclass
class SuiteResult:
    name: str
    passed: bool
    max_residual: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        out = (f"[{verdict}] {self.name}: max residual {self.max_residual:.3e} "
               f"(tolerance {self.tolerance:.1e})")
        return out + (f"; {self.detail}" if self.detail else "")


def _grad_residual(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst elementwise error normalized to the mixed tolerance (1 = limit)."""
    err = np.abs(analytic - numeric)
    return float((err / (GRAD_ATOL + GRAD_RTOL * np.abs(numeric))).max())


_CASE_KINDS = ("dense", "relu-chain", "conv2d", "avgpool",
               "residual-mlp", "residual-conv", "dreg-mlp", "dreg-conv")

# central differences are invalid across the relu kink, so candidate cases
# whose pre-activations sit closer to zero than this are redrawn
_KINK_MARGIN = 1e-3


def _randomize_biases(net: Network, rng) -> None:
    for key, t in net.param_items():
        if key.split(".")[-1] == "b":
            net.set_param(key, Tensor(0.1 * rng.standard_normal(t.shape)))


def _relu_margin(net: Network, x: Tensor) -> float:
    """Smallest |pre-activation| seen by any relu, over all paths."""
    margin = np.inf

    def walk(layers, h):
        nonlocal margin
        for idx, layer in enumerate(layers):
            if layer.kind == "relu":
                margin = min(margin, float(np.abs(h).min()))
                h = layer.forward(h, cache=False)
            elif layer.kind == "residual":
                walk(layer.body, h)
                h = layer.forward(h, cache=False)
            elif layer.is_dual:
                for which in ("r", "l"):
                    walk_branch = layer.forward_branch(h, which, cache=False)
                    walk(layers[idx + 1:], walk_branch)
                return
            else:
                h = layer.forward(h, cache=False)

    walk(net.layers, x.data)
    return margin


def _make_case(kind: str, rng) -> tuple[Network, Tensor, np.ndarray, float]:
    while True:
        net, x, labels, lam = _draw_case(kind, rng)
        if _relu_margin(net, x) > _KINK_MARGIN:
            return net, x, labels, lam


def _draw_case(kind: str, rng) -> tuple[Network, Tensor, np.ndarray, float]:
    classes = int(rng.integers(2, 4))
    n = int(rng.integers(2, 5))
    if kind in ("dense", "relu-chain", "residual-mlp", "dreg-mlp"):
        dim = int(rng.integers(2, 6))
        width = int(rng.integers(2, 5))
        depth = 2 if kind == "relu-chain" else 1
        net = build_network("mlp", width, depth, kind == "residual-mlp",
                            (dim,), classes, int(rng.integers(1 << 30)))
        x = Tensor(rng.standard_normal((n, dim)))
    else:
        side = int(rng.choice([4, 6]))
        width = int(rng.integers(2, 4))
        net = build_network("conv", width, 2, kind == "residual-conv",
                            (1, side, side), classes, int(rng.integers(1 << 30)))
        if kind == "avgpool":
            head = net.layers[:-2]
            net = Network(head + [AvgPool2d(2), Flatten(),
                                  Dense(width * (side // 2) ** 2, classes,
                                        bias=True, rng=rng)])
        x = Tensor(rng.standard_normal((n, 1, side, side)))
    _randomize_biases(net, rng)
    lam = 0.0
    if kind.startswith("dreg"):
        net = attach_dreg(net, "Block-R1", 0.05, int(rng.integers(1 << 30)))
        lam = float(rng.choice([0.0, 0.1, 0.7]))
    labels = rng.integers(0, classes, size=n)
    return net, x, labels, lam


def gradient_suite(cases_per_kind: int = 2, seed: int = 0) -> SuiteResult:
    """Analytic gradients vs central finite differences, every layer kind."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = 0
    for kind in _CASE_KINDS:
        for _ in range(cases_per_kind):
            net, x, labels, lam = _make_case(kind, rng)
            batch = Batch(x, labels)
            compute_gradients(net, x, labels, lam)
            analytic = {key: np.array(g.data) for key, g in net.grad_items()}
            if net.has_dual:
                i = net.dual_index
                layer = net.layers[i]
                pen_r, pen_l = dreg_grad(Tensor(layer.w_r), Tensor(layer.w_l))
                analytic[f"{i}.w_r"] -= lam * pen_r.data
                analytic[f"{i}.w_l"] -= lam * pen_l.data
            for key in analytic:
                numeric = finite_diff_grad(
                    net, lambda m: evaluate_losses(m, batch, lam).total, key)
                worst = max(worst, _grad_residual(analytic[key], numeric.data))
                checked += 1
    return SuiteResult("gradient-oracle", worst <= 1.0, worst, 1.0,
                       f"{checked} parameter tensors over "
                       f"{cases_per_kind * len(_CASE_KINDS)} configurations, "
                       f"normalized to rtol {GRAD_RTOL:g} / atol {GRAD_ATOL:g}")


def _dual_conv_fixture(seed: int, epsilon: float = 1e-3):
    ds = gen_blobs(3, 40, 5.0, 9, seed)
    x = ds.inputs.data.reshape(-1, 1, 3, 3)
    shaped = Batch(Tensor(x), ds.labels)
    net = build_network("conv", 4, 2, False, (1, 3, 3), 3, seed)
    dual = attach_dreg(net, "Block-R1", epsilon, seed + 1)
    return dual, shaped


def _batch_stream(batch: Batch, batch_size: int, seed: int):
    ds = Dataset(batch.inputs, batch.labels, int(batch.labels.max()) + 1)
    for epoch in itertools.count():
        yield from epoch_batches(ds, batch_size, seed, epoch)


def lambda_zero_suite(steps: int = 30, seed: int = 0) -> SuiteResult:
    """Dual training at lambda=0 with equal weight sets vs the inline

    vanilla trainer at learning rate 2*eta, compared after every step on
    the shared parameters; the weight pair itself must stay bit-identical.
    """
    eta = 0.05
    dual, full = _dual_conv_fixture(seed)
    i = dual.dual_index
    dual.set_param(f"{i}.w_l", Tensor(dual.layers[i].w_r))
    tcfg = TrainConfig(eta=eta, beta=0.0, lam=0.0, batch_size=10, devices=1,
                       epochs=1, seed=seed)
    state = MomentumState(0.0)
    dual_keys = {f"{i}.w_r", f"{i}.w_l"}
    worst = 0.0
    pair_identical = True
    stream = _batch_stream(full, tcfg.batch_size, seed)
    for _ in range(steps):
        batch = next(stream)
        vanilla = collapse_dual(dual, "r")
        compute_gradients(dual, batch.inputs, batch.labels, 0.0)
        apply_update(dual, None, tcfg, state)
        oracle.vanilla_sgd_step(vanilla, batch.inputs, batch.labels, 2.0 * eta)
        layer = dual.layers[i]
        if layer.w_r.tobytes() != layer.w_l.tobytes():
            pair_identical = False
        ref = dict(vanilla.param_items())
        for key, t in dual.param_items():
            if key in dual_keys:
                continue
            worst = max(worst, float(np.abs(t.data - ref[key].data).max()))
    passed = worst <= EXACT_TOL and pair_identical
    detail = f"{steps} steps; weight pair bit-identical: {pair_identical}"
    return SuiteResult("lambda-zero-reduction", passed, worst, EXACT_TOL, detail)


def growth_law_residual(lam: float, eta: float, steps: int = 50,
                        seed: int = 0) -> float:
    """Worst relative error of ||diff_t|| vs (1+4*lam*eta)^t * ||diff_0||

    when every data gradient is forced to zero.
    """
    dual, _ = _dual_conv_fixture(seed, epsilon=1e-2)
    tcfg = TrainConfig(eta=eta, beta=0.0, lam=lam, batch_size=4, devices=1,
                       epochs=1, seed=seed)
    state = MomentumState(0.0)
    zeros = {key: Tensor(np.zeros(t.shape)) for key, t in dual.param_items()}
    i = dual.dual_index
    d0 = float(np.sqrt((dual.layers[i].branch_diff() ** 2).sum()))
    worst = 0.0
    growth = 1.0 + 4.0 * lam * eta
    for t in range(1, steps + 1):
        apply_update(dual, zeros, tcfg, state)
        dt = float(np.sqrt((dual.layers[i].branch_diff() ** 2).sum()))
        expected = growth ** t * d0
        worst = max(worst, abs(dt - expected) / expected)
    return worst


def decomposition_suite(steps: int = 20, seed: int = 0) -> SuiteResult:
    """Per-step difference identity on a real run, plus the pure growth law."""
    lam, eta = 0.1, 0.05
    dual, full = _dual_conv_fixture(seed)
    tcfg = TrainConfig(eta=eta, beta=0.0, lam=lam, batch_size=10, devices=1,
                       epochs=1, seed=seed)
    state = MomentumState(0.0)
    trace = DRegTrace(lam, eta)
    stream = _batch_stream(full, tcfg.batch_size, seed)
    for _ in range(steps):
        batch = next(stream)
        train_step(dual, batch, tcfg, state, trace)
    identity = distinctiveness_decomposition_check(trace)
    growth_worst = max(growth_law_residual(l, e, seed=seed)
                       for l, e in GROWTH_SETTINGS)
    passed = identity <= IDENTITY_TOL and growth_worst <= GROWTH_RTOL
    detail = (f"{steps}-step run; pure growth-law worst relative error "
              f"{growth_worst:.3e} (tolerance {GROWTH_RTOL:.1e})")
    return SuiteResult("decomposition-identity", passed, identity,
                       IDENTITY_TOL, detail)


def conv_case_shapes(rng) -> tuple[int, int, int, int, int, int, int]:
    """Random (n, c_in, c_out, k, stride, pad, side) with exact tiling."""
    n = int(rng.integers(1, 3))
    c_in = int(rng.integers(1, 4))
    c_out = int(rng.integers(1, 4))
    k = int(rng.integers(1, 4))
    stride = int(rng.choice([1, 2]))
    pad = int(rng.choice([0, 1]))
    valid = [h for h in range(1, 9)
             if h + 2 * pad >= k and (h + 2 * pad - k) % stride == 0]
    side = int(rng.choice(valid))
    return n, c_in, c_out, k, stride, pad, side


def conv_oracle_suite(cases: int = 60, seed: int = 0) -> SuiteResult:
    """Strided-view convolution vs the brute-force loop implementation."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        n, c_in, c_out, k, stride, pad, side = conv_case_shapes(rng)
        x = rng.standard_normal((n, c_in, side, side))
        w = rng.standard_normal((c_out, c_in, k, k))
        fast = conv2d_raw(x, w, stride, pad)
        slow = oracle.conv2d_bruteforce(x, w, stride, pad)
        worst = max(worst, float(np.abs(fast - slow).max()))
    return SuiteResult("conv-oracle", worst <= EXACT_TOL, worst, EXACT_TOL,
                       f"{cases} random cases")


def shard_suite(seed: int = 0, devices: tuple[int, ...] = (1, 2, 4, 8)) -> SuiteResult:
    """K-device sharded mean gradients vs the direct full-batch gradient."""
    rng = np.random.default_rng(seed)
    ds = gen_blobs(4, 8, 6.0, 5, seed)
    net = build_network("mlp", 6, 1, False, (5,), 4, seed)
    dual = attach_dreg(net, "Block-R1", 0.01, seed + 1)
    worst = 0.0
    for trial_net in (net, dual):
        idx = rng.permutation(len(ds))[:16]
        batch = Batch(Tensor(ds.inputs.data[idx]), ds.labels[idx])
        reference = trial_net.clone()
        compute_gradients(reference, batch.inputs, batch.labels, 0.1)
        direct = {key: g.data for key, g in reference.grad_items()}
        for k in devices:
            sharded = shard_gradients(trial_net, batch, k, 0.1)
            for key, g in sharded.items():
                worst = max(worst, float(np.abs(g.data - direct[key]).max()))
    return SuiteResult("shard-equivalence", worst <= EXACT_TOL, worst,
                       EXACT_TOL, f"K in {list(devices)}, batch size 16")


def run_all(seed: int = 0) -> list[SuiteResult]:
    return [
        gradient_suite(cases_per_kind=2, seed=seed),
        lambda_zero_suite(steps=30, seed=seed),
        decomposition_suite(steps=20, seed=seed),
        conv_oracle_suite(cases=60, seed=seed),
        shard_suite(seed=seed),
    ]
