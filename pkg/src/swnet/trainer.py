"""From-scratch trainer for sparse-summation networks.

Executes a realized network description with manual forward/backward passes:
every layer sums the outputs of all its incoming sparse connections (its own
conv plus any long-range links) before the nonlinearity bundle, exactly
mirroring the degenerate dense network when no long-range connections exist.
Pruned filter positions hold hard zeros: their gradients are zeroed at the
source, so momentum and weight decay can never resurrect them.

Training is plain minibatch SGD with classical momentum (Nesterov optional),
deterministic given the seed. Held-out accuracy is polled on a fixed
iteration interval and convergence is summarized as iterations-to-threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .arch import LayerDecl, PoolDecl, layer_geometry
from .netgen import SparseConnection, SWNetSpec, count_params_flops


class TrainerError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Training loss left the finite range; carries the partial report."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    max_iterations: int
    seed: int
    momentum: float = 0.9
    nesterov: bool = False
    weight_decay: float = 0.0
    batch_size: int = 32
    eval_interval: int = 64
    thresholds: tuple[float, ...] = (0.8, 0.9, 0.95)
    batchnorm: str = "auto"  # on | off | auto (on only for deep networks)
    stop_at_top_threshold: bool = False
    plateau_decay: float | None = None
    plateau_patience: int = 5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TrainerError("learning rate must be positive")
        if self.batch_size < 1:
            raise TrainerError("batch_size must be >= 1")
        if self.batchnorm not in ("on", "off", "auto"):
            raise TrainerError(f"batchnorm must be on/off/auto, got {self.batchnorm!r}")
        object.__setattr__(self, "thresholds", tuple(sorted(self.thresholds)))

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "max_iterations": self.max_iterations,
            "seed": self.seed,
            "momentum": self.momentum,
            "nesterov": self.nesterov,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "eval_interval": self.eval_interval,
            "thresholds": list(self.thresholds),
            "batchnorm": self.batchnorm,
            "stop_at_top_threshold": self.stop_at_top_threshold,
            "plateau_decay": self.plateau_decay,
            "plateau_patience": self.plateau_patience,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if "thresholds" in doc:
            doc["thresholds"] = tuple(doc["thresholds"])
        return cls(**doc)


# ---------------------------------------------------------------------------
# Execution plan: shapes resolved once at spec-load time
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConnPlan:
    conn: SparseConnection
    src_shape: tuple  # (C, H, W) of the source activation, or (flat,) for fc sources
    weight_shape: tuple
    expanded_mask: np.ndarray  # boolean at weight granularity


@dataclass(frozen=True)
class LayerPlan:
    index: int
    decl: LayerDecl
    bundle: tuple[str, ...]
    pool: PoolDecl | None
    out_units: int  # channels for conv, units for fc
    conv_out: tuple[int, int] | None
    in_conns: tuple[ConnPlan, ...]

    @property
    def is_conv(self) -> bool:
        return self.decl.kind == "conv"


@dataclass(frozen=True)
class NetPlan:
    spec: SWNetSpec
    layers: tuple[LayerPlan, ...]
    batchnorm_enabled: bool

    @property
    def n_layers(self) -> int:
        return len(self.layers)


def _expand_fc_mask(mask: np.ndarray, dst_sizes: list[int], src_widths: list[int]) -> np.ndarray:
    rows = np.repeat(np.arange(mask.shape[0]), dst_sizes)
    cols = np.repeat(np.arange(mask.shape[1]), src_widths)
    return mask[np.ix_(rows, cols)]


def build_plan(spec: SWNetSpec, batchnorm: str = "auto") -> NetPlan:
    """Resolve every connection's shapes and verify they are consistent.

    Shape mismatches are defects of the network description, so they are
    rejected here rather than at batch time. Batch normalization in "auto"
    mode is active only for networks deeper than 6 layers.
    """
    base = spec.base
    geo = layer_geometry(base)
    bn_enabled = batchnorm == "on" or (batchnorm == "auto" and base.layer_count > 6)
    layer_plans = []
    for d in range(1, base.layer_count + 1):
        decl = base.layers[d - 1]
        bundle = decl.effective_bundle()
        if not bn_enabled:
            bundle = tuple(op for op in bundle if op != "batchnorm")
        conns = spec.connections_into(d)
        if not conns:
            raise TrainerError(f"layer {d} has no incoming connections")
        plans = []
        if decl.kind == "conv":
            target = geo[d - 1].conv_out
            for conn in sorted(conns, key=lambda c: c.src_layer):
                kind, n_src, src_spatial, _ = spec.source_shape(conn.src_layer, geo)
                if kind != "conv":
                    raise TrainerError(
                        f"connection {conn.src_layer}->{d}: fc sources cannot feed a conv layer"
                    )
                if conn.mask.shape != (decl.out_channels, n_src):
                    raise TrainerError(
                        f"connection {conn.src_layer}->{d}: mask shape {conn.mask.shape} "
                        f"does not match ({decl.out_channels}, {n_src})"
                    )
                oh = ops.conv_out_dim(src_spatial[0], conn.kernel_size, conn.stride, conn.zero_padding)
                ow = ops.conv_out_dim(src_spatial[1], conn.kernel_size, conn.stride, conn.zero_padding)
                if (oh, ow) != target:
                    raise TrainerError(
                        f"connection {conn.src_layer}->{d}: produces {oh}x{ow}, "
                        f"junction needs {target[0]}x{target[1]}"
                    )
                wshape = (decl.out_channels, n_src, conn.kernel_size, conn.kernel_size)
                plans.append(
                    ConnPlan(conn, (n_src, *src_spatial), wshape, conn.mask[:, :, None, None])
                )
            layer_plans.append(
                LayerPlan(d, decl, bundle, decl.pool, decl.out_channels, target, tuple(plans))
            )
        else:
            dst_sizes = base.node_group_sizes(d - 1)
            units = decl.out_channels
            for conn in sorted(conns, key=lambda c: c.src_layer):
                if conn.kind != "fc":
                    raise TrainerError(f"connection {conn.src_layer}->{d}: expected an fc connection")
                _, n_src, _, src_widths = spec.source_shape(conn.src_layer, geo)
                if conn.mask.shape != (len(dst_sizes), n_src):
                    raise TrainerError(
                        f"connection {conn.src_layer}->{d}: mask shape {conn.mask.shape} "
                        f"does not match ({len(dst_sizes)}, {n_src})"
                    )
                flat = int(sum(src_widths))
                expanded = _expand_fc_mask(conn.mask, dst_sizes, src_widths)
                plans.append(ConnPlan(conn, (flat,), (units, flat), expanded))
            layer_plans.append(LayerPlan(d, decl, bundle, None, units, None, tuple(plans)))
    return NetPlan(spec, tuple(layer_plans), bn_enabled)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass
class Params:
    """weights are keyed by (src_layer, dst_layer); biases and BN state by
    destination layer. Pruned weight positions are exactly zero."""

    weights: dict
    biases: dict
    bn_gamma: dict = field(default_factory=dict)
    bn_beta: dict = field(default_factory=dict)
    bn_mean: dict = field(default_factory=dict)
    bn_var: dict = field(default_factory=dict)

    def copy(self) -> "Params":
        return Params(
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.biases.items()},
            {k: v.copy() for k, v in self.bn_gamma.items()},
            {k: v.copy() for k, v in self.bn_beta.items()},
            {k: v.copy() for k, v in self.bn_mean.items()},
            {k: v.copy() for k, v in self.bn_var.items()},
        )

    def trainable_items(self):
        """(name, array) pairs of everything the optimizer updates."""
        for key in sorted(self.weights):
            yield f"w{key[0]}->{key[1]}", self.weights[key]
        for layer in sorted(self.biases):
            yield f"b{layer}", self.biases[layer]
        for layer in sorted(self.bn_gamma):
            yield f"bn_gamma{layer}", self.bn_gamma[layer]
        for layer in sorted(self.bn_beta):
            yield f"bn_beta{layer}", self.bn_beta[layer]


def init_params(plan: NetPlan, seed: int) -> Params:
    """Fan-in-scaled uniform init. Each output channel's bound uses its true
    (masked) fan-in summed across every incoming connection, so sparse rows
    are not under-scaled. Draw order is fixed: layers ascending, connections
    by source layer."""
    rng = np.random.default_rng((seed, 0))
    params = Params({}, {})
    for lp in plan.layers:
        fan_in = np.zeros(lp.out_units)
        if lp.is_conv:
            for cp in lp.in_conns:
                k2 = cp.conn.kernel_size ** 2
                fan_in += cp.conn.mask.sum(axis=1) * k2
        else:
            for cp in lp.in_conns:
                fan_in += cp.expanded_mask.sum(axis=1)
        bound = np.where(fan_in > 0, np.sqrt(6.0 / np.maximum(fan_in, 1.0)), 0.0)
        for cp in lp.in_conns:
            key = (cp.conn.src_layer, cp.conn.dst_layer)
            w = rng.uniform(-1.0, 1.0, size=cp.weight_shape)
            if lp.is_conv:
                w *= bound[:, None, None, None]
            else:
                w *= bound[:, None]
            w *= cp.expanded_mask
            params.weights[key] = w
        params.biases[lp.index] = np.zeros(lp.out_units)
        if "batchnorm" in lp.bundle:
            params.bn_gamma[lp.index] = np.ones(lp.out_units)
            params.bn_beta[lp.index] = np.zeros(lp.out_units)
            params.bn_mean[lp.index] = np.zeros(lp.out_units)
            params.bn_var[lp.index] = np.ones(lp.out_units)
    return params


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


@dataclass
class ForwardState:
    """Per-layer caches needed by backward: activations of every layer
    (index 0 is the input batch), connection caches, pre-bundle sums, and
    bundle op caches."""

    activations: dict
    conn_caches: dict
    bundle_caches: dict
    batch_size: int


def forward(plan: NetPlan, params: Params, x: np.ndarray, training: bool = True):
    """Run the network on a batch; returns (logits, state)."""
    acts = {0: x}
    conn_caches = {}
    bundle_caches = {}
    for lp in plan.layers:
        z = None
        for cp in lp.in_conns:
            src = acts[cp.conn.src_layer]
            w = params.weights[(cp.conn.src_layer, cp.conn.dst_layer)]
            if lp.is_conv:
                out, cols = ops.conv_forward(src, w, cp.conn.stride, cp.conn.zero_padding)
                conn_caches[(cp.conn.src_layer, lp.index)] = (cols, src.shape)
            else:
                flat = src.reshape(src.shape[0], -1)
                out = flat @ w.T
                conn_caches[(cp.conn.src_layer, lp.index)] = (flat, src.shape)
            z = out if z is None else z + out
        bias = params.biases[lp.index]
        z = z + (bias[None, :, None, None] if lp.is_conv else bias[None, :])
        caches = []
        y = z
        for op in lp.bundle:
            if op == "relu":
                y, mask = ops.relu_forward(y)
                caches.append(("relu", mask))
            elif op == "maxpool":
                pool = lp.pool
                if pool.kind == "max":
                    y, cache = ops.maxpool_forward(y, pool.window, pool.stride)
                else:
                    y, cache = ops.avgpool_forward(y, pool.window, pool.stride)
                caches.append((pool.kind + "pool", cache))
            elif op == "batchnorm":
                y, cache = ops.batchnorm_forward(
                    y, params.bn_gamma[lp.index], params.bn_beta[lp.index],
                    training, params.bn_mean[lp.index], params.bn_var[lp.index],
                )
                caches.append(("batchnorm", cache))
        acts[lp.index] = y
        bundle_caches[lp.index] = caches
    head = acts[plan.n_layers]
    # conv heads (e.g. a global-average-pooled classifier) flatten into scores
    logits = head.reshape(head.shape[0], -1) if head.ndim == 4 else head
    state = ForwardState(acts, conn_caches, bundle_caches, x.shape[0])
    return logits, state


@dataclass
class Grads:
    weights: dict
    biases: dict
    bn_gamma: dict = field(default_factory=dict)
    bn_beta: dict = field(default_factory=dict)


def backward(plan: NetPlan, params: Params, state: ForwardState, dlogits: np.ndarray) -> Grads:
    """Gradients for every trainable array. Pruned weight positions get an
    exact zero; summation junctions fan the incoming gradient out to every
    contributing connection."""
    grads = Grads({}, {})
    head = state.activations[plan.n_layers]
    dacts = {plan.n_layers: dlogits.reshape(head.shape)}
    for lp in reversed(plan.layers):
        dy = dacts.pop(lp.index)
        for op_name, cache in reversed(state.bundle_caches[lp.index]):
            if op_name == "relu":
                dy = ops.relu_backward(dy, cache)
            elif op_name == "maxpool":
                dy = ops.maxpool_backward(dy, cache)
            elif op_name == "averagepool":
                dy = ops.avgpool_backward(dy, cache)
            elif op_name == "batchnorm":
                dy, dg, db = ops.batchnorm_backward(dy, cache)
                grads.bn_gamma[lp.index] = dg
                grads.bn_beta[lp.index] = db
        dz = dy
        grads.biases[lp.index] = dz.sum(axis=(0, 2, 3)) if lp.is_conv else dz.sum(axis=0)
        for cp in lp.in_conns:
            key = (cp.conn.src_layer, cp.conn.dst_layer)
            w = params.weights[key]
            cached, src_shape = state.conn_caches[key]
            if lp.is_conv:
                dw, dx = ops.conv_backward(dz, w, cached, src_shape, cp.conn.stride, cp.conn.zero_padding)
                dw *= cp.expanded_mask
            else:
                dw = dz.T @ cached
                dw *= cp.expanded_mask
                dx = (dz @ w).reshape(src_shape)
            grads.weights[key] = dw
            if cp.conn.src_layer > 0:
                if cp.conn.src_layer in dacts:
                    dacts[cp.conn.src_layer] += dx
                else:
                    dacts[cp.conn.src_layer] = dx
    return grads


class SGD:
    """Classical-momentum SGD with optional Nesterov correction. Weight decay
    applies to connection weights only. Pruned positions stay at zero because
    both their gradient and their value are exactly zero."""

    def __init__(self, config: TrainConfig):
        self.lr = config.learning_rate
        self.momentum = config.momentum
        self.nesterov = config.nesterov
        self.weight_decay = config.weight_decay
        self.velocity = {}

    def _update(self, name, array, grad, decay):
        g = grad + decay * array if decay else grad
        v = self.velocity.get(name)
        if v is None:
            v = np.zeros_like(array)
            self.velocity[name] = v
        v *= self.momentum
        v += g
        step = g + self.momentum * v if self.nesterov else v
        array -= self.lr * step

    def step(self, params: Params, grads: Grads) -> None:
        for key in sorted(grads.weights):
            self._update(("w", key), params.weights[key], grads.weights[key], self.weight_decay)
        for layer in sorted(grads.biases):
            self._update(("b", layer), params.biases[layer], grads.biases[layer], 0.0)
        for layer in sorted(grads.bn_gamma):
            self._update(("bn_g", layer), params.bn_gamma[layer], grads.bn_gamma[layer], 0.0)
        for layer in sorted(grads.bn_beta):
            self._update(("bn_b", layer), params.bn_beta[layer], grads.bn_beta[layer], 0.0)


def batch_schedule(n: int, batch_size: int, iterations: int, seed: int):
    """Deterministic batch index stream: reshuffle each epoch from the
    (seed, 1) stream, drop ragged remainders."""
    rng = np.random.default_rng((seed, 1))
    produced = 0
    while produced < iterations:
        perm = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield perm[start : start + batch_size]
            produced += 1
            if produced >= iterations:
                return


def evaluate(plan: NetPlan, params: Params, x: np.ndarray, y: np.ndarray, batch: int = 512) -> float:
    """Classification accuracy in eval mode."""
    correct = 0
    for start in range(0, x.shape[0], batch):
        logits, _ = forward(plan, params, x[start : start + batch], training=False)
        correct += int((logits.argmax(axis=1) == y[start : start + batch]).sum())
    return correct / x.shape[0]


# ---------------------------------------------------------------------------
# Training loop and reports
# ---------------------------------------------------------------------------


@dataclass
class TrainReport:
    losses: list
    evals: list  # (iteration, test_error)
    iterations_to_threshold: dict  # threshold -> iteration or None
    final_accuracy: float
    param_count: int
    diverged: bool
    config: TrainConfig
    trained_params: Params | None = None  # populated by train(), never serialized

    def to_dict(self) -> dict:
        return {
            "iterations_to_threshold": {f"{t}": it for t, it in self.iterations_to_threshold.items()},
            "final_accuracy": self.final_accuracy,
            "param_count": self.param_count,
            "diverged": self.diverged,
            "evals": [[int(i), e] for i, e in self.evals],
            "losses": [float(v) for v in self.losses],
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainReport":
        return cls(
            losses=[float(v) for v in doc.get("losses", [])],
            evals=[(int(i), float(e)) for i, e in doc.get("evals", [])],
            iterations_to_threshold={
                float(t): (int(it) if it is not None else None)
                for t, it in doc["iterations_to_threshold"].items()
            },
            final_accuracy=float(doc["final_accuracy"]),
            param_count=int(doc["param_count"]),
            diverged=bool(doc.get("diverged", False)),
            config=TrainConfig.from_dict(doc["config"]),
        )

    def save_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)
            f.write("\n")

    @classmethod
    def load_json(cls, path) -> "TrainReport":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save_csv(self, path) -> None:
        """iteration, train_loss, test_error rows; error column only on
        evaluation iterations."""
        errors = dict(self.evals)
        with open(path, "w") as f:
            f.write("iteration,train_loss,test_error\n")
            for i, loss in enumerate(self.losses, start=1):
                err = f"{errors[i]:.17g}" if i in errors else ""
                f.write(f"{i},{loss:.17g},{err}\n")


def train(spec: SWNetSpec, config: TrainConfig, dataset) -> TrainReport:
    """Run SGD for up to max_iterations, polling held-out accuracy every
    eval_interval iterations. Raises DivergenceError (with the partial
    report attached) if the loss leaves the finite range."""
    plan = build_plan(spec, config.batchnorm)
    if dataset.image_shape != tuple(spec.base.input_shape):
        raise TrainerError(
            f"dataset images {dataset.image_shape} do not match network input "
            f"{tuple(spec.base.input_shape)}"
        )
    params = init_params(plan, config.seed)
    optimizer = SGD(config)
    param_count = count_params_flops(spec)[0]
    losses = []
    evals = []
    reached = {t: None for t in config.thresholds}
    lr_best = np.inf
    lr_wait = 0

    def snapshot(diverged: bool) -> TrainReport:
        final_acc = 1.0 - evals[-1][1] if evals else float("nan")
        return TrainReport(losses, evals, dict(reached), final_acc, param_count, diverged, config)

    iteration = 0
    for idx in batch_schedule(dataset.n_train, config.batch_size, config.max_iterations, config.seed):
        iteration += 1
        logits, state = forward(plan, params, dataset.x_train[idx], training=True)
        loss, dlogits = ops.softmax_cross_entropy(logits, dataset.y_train[idx])
        losses.append(float(loss))
        if not np.isfinite(loss):
            raise DivergenceError(
                f"training loss became non-finite at iteration {iteration}", snapshot(True)
            )
        grads = backward(plan, params, state, dlogits)
        optimizer.step(params, grads)
        if iteration % config.eval_interval == 0 or iteration == config.max_iterations:
            acc = evaluate(plan, params, dataset.x_test, dataset.y_test)
            evals.append((iteration, 1.0 - acc))
            for t in config.thresholds:
                if reached[t] is None and acc >= t:
                    reached[t] = iteration
            if config.plateau_decay is not None:
                if 1.0 - acc < lr_best - 1e-12:
                    lr_best = 1.0 - acc
                    lr_wait = 0
                else:
                    lr_wait += 1
                    if lr_wait > config.plateau_patience:
                        optimizer.lr *= config.plateau_decay
                        lr_wait = 0
            if config.stop_at_top_threshold and all(v is not None for v in reached.values()):
                break
    report = snapshot(False)
    report.trained_params = params
    return report


# ---------------------------------------------------------------------------
# Convergence comparison and weight inspection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpeedupTable:
    """Per-threshold convergence speedups relative to one baseline report."""

    thresholds: tuple[float, ...]
    iterations: tuple[tuple, ...]  # per report, per threshold, int or None
    speedups: tuple[tuple, ...]  # per report, per threshold, float or None
    baseline_index: int

    def render(self, labels=None) -> str:
        labels = labels or [f"report {i}" for i in range(len(self.iterations))]
        width = max(len(str(l)) for l in labels) + 2
        head = "accuracy".ljust(width) + "".join(f"{t:>12.2%}" for t in self.thresholds)
        lines = [head]
        for i, (iters, sp) in enumerate(zip(self.iterations, self.speedups)):
            cells = "".join(
                f"{it if it is not None else '-':>12}" for it in iters
            )
            lines.append(f"{labels[i]:<{width}}" + cells)
            if i != self.baseline_index:
                sp_cells = "".join(
                    f"{(f'{s:.2f}x' if s is not None else 'n/a'):>12}" for s in sp
                )
                lines.append(f"{'  speedup':<{width}}" + sp_cells)
        return "\n".join(lines)

    def save_csv(self, path, labels=None) -> None:
        labels = labels or [f"report_{i}" for i in range(len(self.iterations))]
        with open(path, "w") as f:
            f.write("report,role," + ",".join(f"{t:.17g}" for t in self.thresholds) + "\n")
            for i, iters in enumerate(self.iterations):
                role = "baseline" if i == self.baseline_index else "variant"
                f.write(
                    f"{labels[i]},{role},"
                    + ",".join(str(it) if it is not None else "" for it in iters)
                    + "\n"
                )
            for i, sp in enumerate(self.speedups):
                if i == self.baseline_index:
                    continue
                f.write(
                    f"{labels[i]},speedup,"
                    + ",".join(f"{s:.17g}" if s is not None else "" for s in sp)
                    + "\n"
                )


def compare(reports: list[TrainReport], baseline_index: int = 0) -> SpeedupTable:
    """Tabulate iterations-to-threshold and the baseline/variant ratios.

    All reports must share the same threshold set. A threshold a variant
    never reached yields an undefined (None) cell.
    """
    if len(reports) < 2:
        raise TrainerError("compare needs at least two reports")
    if not 0 <= baseline_index < len(reports):
        raise TrainerError(f"baseline index {baseline_index} out of range")
    thresholds = tuple(sorted(reports[0].iterations_to_threshold))
    for r in reports[1:]:
        if tuple(sorted(r.iterations_to_threshold)) != thresholds:
            raise TrainerError(
                f"reports use different threshold sets: {thresholds} vs "
                f"{tuple(sorted(r.iterations_to_threshold))}"
            )
    base = reports[baseline_index].iterations_to_threshold
    iterations = []
    speedups = []
    for r in reports:
        row_it = tuple(r.iterations_to_threshold[t] for t in thresholds)
        row_sp = tuple(
            (base[t] / r.iterations_to_threshold[t])
            if base[t] is not None and r.iterations_to_threshold[t] not in (None, 0)
            else None
            for t in thresholds
        )
        iterations.append(row_it)
        speedups.append(row_sp)
    return SpeedupTable(thresholds, tuple(iterations), tuple(speedups), baseline_index)


def weight_heatmap(params: Params, spec: SWNetSpec) -> np.ndarray:
    """(layer_count x layer_count) matrix over graph layers (row 0 is the
    network input): mean |w| over the true-mask weights of each connection,
    exactly zero where no connection exists."""
    n = spec.graph_layer_count
    geo = layer_geometry(spec.base)
    heat = np.zeros((n, n))
    for conn in spec.connections:
        w = params.weights.get((conn.src_layer, conn.dst_layer))
        if w is None or conn.true_entries == 0:
            continue
        if conn.kind == "conv":
            selected = w[conn.mask]
        else:
            dst_sizes = spec.base.node_group_sizes(conn.dst_layer - 1)
            _, _, _, src_widths = spec.source_shape(conn.src_layer, geo)
            selected = w[_expand_fc_mask(conn.mask, dst_sizes, src_widths)]
        heat[conn.src_layer, conn.dst_layer] = np.abs(selected).mean()
    return heat


def save_heatmap_csv(heat: np.ndarray, path) -> None:
    with open(path, "w") as f:
        for row in heat:
            f.write(",".join(f"{v:.17g}" for v in row) + "\n")


def save_params(params: Params, path) -> None:
    """Flat npz archive of all parameter arrays."""
    arrays = {}
    for key, w in params.weights.items():
        arrays[f"w_{key[0]}_{key[1]}"] = w
    for layer, b in params.biases.items():
        arrays[f"b_{layer}"] = b
    for name, store in (
        ("bng", params.bn_gamma), ("bnb", params.bn_beta),
        ("bnm", params.bn_mean), ("bnv", params.bn_var),
    ):
        for layer, arr in store.items():
            arrays[f"{name}_{layer}"] = arr
    np.savez(path, **arrays)


def load_params(path) -> Params:
    data = np.load(path)
    params = Params({}, {})
    for name in data.files:
        parts = name.split("_")
        if parts[0] == "w":
            params.weights[(int(parts[1]), int(parts[2]))] = data[name]
        elif parts[0] == "b":
            params.biases[int(parts[1])] = data[name]
        elif parts[0] == "bng":
            params.bn_gamma[int(parts[1])] = data[name]
        elif parts[0] == "bnb":
            params.bn_beta[int(parts[1])] = data[name]
        elif parts[0] == "bnm":
            params.bn_mean[int(parts[1])] = data[name]
        elif parts[0] == "bnv":
            params.bn_var[int(parts[1])] = data[name]
    return params
