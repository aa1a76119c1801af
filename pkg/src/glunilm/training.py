"""MAE loss, Adam, the mini-batch training loop and a finite-difference gradient check."""
import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .exceptions import ConfigError, DataError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 10
    seed: int = 0
    validation_fraction: float = 0.1
    max_steps: int = None

    def __post_init__(self):
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ConfigError(f"beta1 and beta2 must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ConfigError("learning_rate and epsilon must be positive")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(f"validation_fraction must lie in [0, 1), got {self.validation_fraction}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")


def mae_loss(pred, target):
    """Mean absolute error and its gradient with respect to ``pred``.

    Works on a single window ``[l_out]`` or a batch ``[N, l_out]``; for a batch
    the loss is the mean over all elements, i.e. the mean of per-window MAEs.
    ``sign(0)`` is taken as 0.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


class AdamState:
    """First/second moment estimates mirroring a parameter dict, plus step count."""

    def __init__(self, params):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_step(params, grads, state, config):
    """One bias-corrected Adam update, applied to ``params`` in place.

    Returns ``(params, state)``.
    """
    if set(grads) != set(state.m):
        raise ShapeError("gradient names do not match optimizer state")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        if g.shape != m.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != state shape {m.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        params[name] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return params, state


@dataclass
class TrainResult:
    network: object
    history: list
    best_epoch: int
    step_losses: list = field(default_factory=list)

    @property
    def steps(self):
        return len(self.step_losses)


def stack_pairs(pairs):
    if len(pairs) == 0:
        raise DataError("training needs at least one window pair")
    x = np.stack([p.x for p in pairs])
    y = np.stack([p.y for p in pairs])
    return x, y


def predict_batches(net, x, batch_size=256):
    out = [net.forward_batch(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0)


def evaluate_mae(net, x, y, batch_size=256):
    if len(x) == 0:
        return float("nan")
    return float(np.mean(np.abs(predict_batches(net, x, batch_size) - y)))


def train(net, pairs, config=TrainConfig()):
    """Train ``net`` in place on window pairs with Adam and MAE.

    The last ``validation_fraction`` of the pairs (in the given, chronological
    order) is held out. Returns a :class:`TrainResult` whose network carries the
    parameters of the epoch with the lowest validation MAE, or the lowest
    training MAE when nothing is held out.
    """
    x, y = stack_pairs(pairs)
    n = len(x)
    n_val = int(math.floor(n * config.validation_fraction))
    if n - n_val < 1:
        n_val = 0
    x_train, y_train = x[:n - n_val], y[:n - n_val]
    x_val, y_val = x[n - n_val:], y[n - n_val:]

    rng = np.random.default_rng(config.seed)
    state = AdamState(net.params)
    history, step_losses = [], []
    best_score, best_epoch, best_params = math.inf, 0, None
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(x_train))
        seen, total = 0, 0.0
        for start in range(0, len(order), config.batch_size):
            if config.max_steps is not None and len(step_losses) >= config.max_steps:
                break
            idx = order[start:start + config.batch_size]
            pred, cache = net.forward_with_cache(x_train[idx])
            loss, grad = mae_loss(pred, y_train[idx])
            grads = net.backward(cache, grad)
            adam_step(net.params, grads, state, config)
            step_losses.append(loss)
            total += loss * len(idx)
            seen += len(idx)
        if seen == 0:
            break
        train_mae = total / seen
        val_mae = evaluate_mae(net, x_val, y_val) if n_val else float("nan")
        history.append({"epoch": epoch, "train_mae": train_mae, "val_mae": val_mae})
        score = val_mae if n_val else train_mae
        logger.info("epoch %d train_mae=%.6f val_mae=%.6f", epoch, train_mae, val_mae)
        if score < best_score:
            best_score, best_epoch = score, epoch
            best_params = {k: v.copy() for k, v in net.params.items()}
    if best_params is not None:
        for k, v in best_params.items():
            net.params[k][...] = v
    return TrainResult(net, history, best_epoch, step_losses)


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_mae", "val_mae"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["train_mae"]), repr(row["val_mae"])])


@dataclass
class GradCheckReport:
    max_relative_error: float
    n_checked: int
    n_skipped: int
    n_kinks: int
    # layer -> (name, flat index, analytic, numeric, relative error) of its worst coordinate
    worst_per_layer: dict

    def format(self):
        lines = [
            f"max_relative_error={self.max_relative_error:.3e} checked={self.n_checked} "
            f"skipped_zero={self.n_skipped} skipped_kink={self.n_kinks}"
        ]
        for layer, (name, index, analytic, numeric, rel) in self.worst_per_layer.items():
            lines.append(
                f"{layer}: worst {name}[{index}] analytic={analytic:.10e} "
                f"numeric={numeric:.10e} rel={rel:.3e}"
            )
        return "\n".join(lines)


def sample_coordinates(params, n_coords, rng):
    """Pick ``>= n_coords`` (name, flat index) pairs touching every tensor."""
    names = list(params)
    per_tensor = math.ceil(n_coords / len(names))
    chosen = []
    for name in names:
        size = params[name].size
        take = min(size, per_tensor)
        chosen += [(name, int(i)) for i in np.sort(rng.choice(size, take, replace=False))]
    if len(chosen) < n_coords:
        taken = set(chosen)
        rest = [(n, i) for n in names for i in range(params[n].size) if (n, i) not in taken]
        extra = rng.choice(len(rest), min(len(rest), n_coords - len(chosen)), replace=False)
        chosen += [rest[i] for i in np.sort(extra)]
    return chosen


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric))


def _kink_pattern(cache, pred, y):
    # which piece of every piecewise-linear op was active
    parts = [argmax for _, _, argmax in cache.stages]
    parts.append(cache.dense1[1] > 0)
    parts += [res_cache[0] > 0 for _, res_cache in cache.residual]
    parts.append(np.sign(pred - y))
    return parts


def _same_pattern(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def _add(a, b):
    if a is None:
        return b
    return a if b is None else a + b


def _affine_delta(op, params, x, dx, dparams):
    """Change in ``op(x, params)`` when x moves by dx and params by dparams.

    Computed as ``op(dx; W) + op(x + dx; dW) + db`` so the result carries rounding
    relative to the change, not to the activations.
    """
    out = None
    if dx is not None:
        out = op(dx, replace(params, bias=np.zeros_like(params.bias)))
    if dparams is not None:
        xx = x if dx is None else x + dx
        out = _add(out, op(xx, dparams))
    return out


def _relu_delta(pre, dpre):
    if dpre is None:
        return None
    both_on = (pre > 0) & (pre + dpre > 0)
    crossed = (pre > 0) != (pre + dpre > 0)
    return np.where(both_on, dpre, np.where(crossed, ops.relu(pre + dpre) - ops.relu(pre), 0.0))


def _sigmoid_delta(s, db):
    # sigmoid(B + d) - sigmoid(B) = (1 - s) * sigmoid(B + d) * (1 - exp(-d)), with s = sigmoid(B)
    if db is None:
        return None
    decay = np.exp(-db)
    shifted = s / (s + (1.0 - s) * decay)
    return (1.0 - s) * shifted * -np.expm1(-db)


def _output_delta(net, cache, name, index, step):
    """Change of the network output, and the kink pattern, when ``name[index]`` moves by ``step``."""
    layer = name.rsplit(".", 1)[0]
    bump = np.zeros_like(net.params[name])
    bump.reshape(-1)[index] = step

    def dparams(prefix, kind):
        if layer != prefix:
            return None
        weights = next(k for k in net.params if k.startswith(prefix + ".") and not k.endswith(".bias"))
        w = bump if name == weights else np.zeros_like(net.params[weights])
        b = bump if name.endswith(".bias") else np.zeros_like(net.params[prefix + ".bias"])
        return kind(w, b)

    pattern, delta = [], None
    for s in range(net.config.n_glu_stages):
        h, (a, sg), argmax = cache.stages[s]
        da = _affine_delta(ops.conv1d_same, net.conv(s, "main"), h, delta,
                           dparams(f"glu{s}.main", ops.ConvParams))
        db = _affine_delta(ops.conv1d_same, net.conv(s, "gate"), h, delta,
                           dparams(f"glu{s}.gate", ops.ConvParams))
        ds = _sigmoid_delta(sg, db)
        dg = _add(_add(None if da is None else da * sg, None if ds is None else a * ds),
                  None if da is None or ds is None else da * ds)
        if dg is None:
            pattern.append(argmax)
            delta = None
            continue
        _, moved = ops.maxpool2(a * sg + dg)
        pattern.append(moved)
        delta = np.take_along_axis(dg, moved, axis=-1)
    flat, pre, _ = cache.dense1
    dflat = None if delta is None else delta.reshape(flat.shape)
    dpre = _affine_delta(ops.dense, net.dense_layer("dense1"), flat, dflat,
                         dparams("dense1", ops.DenseParams))
    pattern.append(pre + (0.0 if dpre is None else dpre) > 0)
    dz = _relu_delta(pre, dpre)
    for r, (z, (rpre, hidden)) in enumerate(cache.residual):
        dp1 = _affine_delta(ops.dense, net.dense_layer(f"res{r}.fc1"), z, dz,
                            dparams(f"res{r}.fc1", ops.DenseParams))
        pattern.append(rpre + (0.0 if dp1 is None else dp1) > 0)
        dhidden = _relu_delta(rpre, dp1)
        dz = _add(_affine_delta(ops.dense, net.dense_layer(f"res{r}.fc2"), hidden, dhidden,
                                dparams(f"res{r}.fc2", ops.DenseParams)), dz)
    dout = _affine_delta(ops.dense, net.dense_layer("output"), cache.output_input, dz,
                         dparams("output", ops.DenseParams))
    return np.zeros(cache.output_input.shape) if dout is None else dout, pattern


def _numeric_direct(net, x, y, name, index, h):
    p = net.params[name].reshape(-1)
    original = p[index]
    p[index] = original + h
    pred_plus, cache_plus = net.forward_with_cache(x)
    p[index] = original - h
    pred_minus, cache_minus = net.forward_with_cache(x)
    p[index] = original
    smooth = _same_pattern(_kink_pattern(cache_plus, pred_plus, y),
                           _kink_pattern(cache_minus, pred_minus, y))
    numeric = float(np.mean(np.abs(pred_plus - y) - np.abs(pred_minus - y))) / (2.0 * h)
    return numeric, smooth


def _numeric_delta(net, cache, pred, y, name, index, h):
    d_plus, pattern_plus = _output_delta(net, cache, name, index, h)
    d_minus, pattern_minus = _output_delta(net, cache, name, index, -h)
    sign_plus, sign_minus = np.sign(pred + d_plus - y), np.sign(pred + d_minus - y)
    smooth = _same_pattern(pattern_plus + [sign_plus], pattern_minus + [sign_minus])
    # with a common sign, |e+| - |e-| = sign * (d+ - d-): no cancellation against pred
    numeric = float(np.mean(sign_plus * (d_plus - d_minus))) / (2.0 * h)
    return numeric, smooth


def gradient_check(net, x, y, h=1e-5, n_coords=500, seed=0, coords=None, method="delta"):
    """Compare analytic MAE-loss gradients with central differences.

    ``numeric = (loss(p + h) - loss(p - h)) / 2h`` for each sampled coordinate.
    With ``method="delta"`` (default) the two loss changes are obtained by
    pushing the parameter step itself through the layers, so rounding error is
    relative to the change rather than to the activations; ``method="direct"``
    runs two ordinary forward passes instead. Coordinates are skipped when both
    gradients are below 1e-12 in magnitude, or when a ReLU, max-pool winner or
    MAE sign changes between ``p - h`` and ``p + h`` (the loss is not
    differentiable across that interval).
    """
    if method not in ("delta", "direct"):
        raise ValueError(f"method must be 'delta' or 'direct', got {method!r}")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    pred, cache = net.forward_with_cache(x)
    _, grad = mae_loss(pred, y)
    analytic = net.backward(cache, grad)
    if coords is None:
        coords = sample_coordinates(net.params, n_coords, np.random.default_rng(seed))

    worst, max_rel, skipped, kinks = {}, 0.0, 0, 0
    for name, index in coords:
        if method == "delta":
            numeric, smooth = _numeric_delta(net, cache, pred, y, name, index, h)
        else:
            numeric, smooth = _numeric_direct(net, x, y, name, index, h)
        if not smooth:
            kinks += 1
            continue
        a = float(analytic[name].reshape(-1)[index])
        if abs(a) < 1e-12 and abs(numeric) < 1e-12:
            skipped += 1
            continue
        rel = relative_error(a, numeric)
        layer = name.rsplit(".", 1)[0]
        if layer not in worst or rel > worst[layer][4]:
            worst[layer] = (name, index, a, numeric, rel)
        max_rel = max(max_rel, rel)
    n_checked = len(coords) - skipped - kinks
    return GradCheckReport(max_rel, n_checked, skipped, kinks, worst)
