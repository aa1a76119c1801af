"""Convolutional sequence-to-sequence network with GLU blocks and residual refinement.

Layer stack::

    x [1, l_in]
      -> (GLU conv block -> maxpool2) x n_glu_stages
      -> flatten -> dense + ReLU (l_out)
      -> residual blocks (dense -> ReLU -> dense, plus shortcut)
      -> linear dense output (l_out)
"""
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import ops
from .exceptions import (
    CheckpointError,
    CheckpointPayloadMissingError,
    CheckpointSizeError,
    CheckpointVersionError,
    ConfigError,
    ShapeError,
)

CHECKPOINT_MAGIC = "# glunilm checkpoint"
CHECKPOINT_VERSION = 1
_PAYLOAD_MARK = b"\n---\n"


@dataclass(frozen=True)
class NetworkConfig:
    l_in: int = 800
    l_out: int = 100
    n_glu_stages: int = 3
    conv_channels: int = 100
    kernel_size: int = 4
    n_res_blocks: int = 2
    res_hidden: int = 50
    rng_seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise ConfigError(f"{f.name} must be an integer, got {value!r}")
        for name in ("l_in", "l_out", "n_glu_stages", "conv_channels", "kernel_size", "res_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_res_blocks < 0:
            raise ConfigError(f"n_res_blocks must be >= 0, got {self.n_res_blocks}")
        if self.l_out % 2:
            raise ConfigError(f"l_out must be even, got {self.l_out}")
        if self.l_in != self.l_out * 2 ** self.n_glu_stages:
            raise ConfigError(
                f"l_in={self.l_in} must equal l_out * 2**n_glu_stages = "
                f"{self.l_out * 2 ** self.n_glu_stages}"
            )

    @property
    def stage_lengths(self):
        """Sequence length entering each stage, then the final pooled length."""
        return [self.l_in // 2 ** s for s in range(self.n_glu_stages + 1)]

    @property
    def flatten_size(self):
        return self.conv_channels * (self.l_in // 2 ** self.n_glu_stages)

    def param_shapes(self):
        """Parameter names and shapes in declaration (serialization) order."""
        shapes = {}
        c, k = self.conv_channels, self.kernel_size
        for s in range(self.n_glu_stages):
            c_in = 1 if s == 0 else c
            for path in ("main", "gate"):
                shapes[f"glu{s}.{path}.kernels"] = (c, c_in, k)
                shapes[f"glu{s}.{path}.bias"] = (c,)
        shapes["dense1.weights"] = (self.l_out, self.flatten_size)
        shapes["dense1.bias"] = (self.l_out,)
        for r in range(self.n_res_blocks):
            shapes[f"res{r}.fc1.weights"] = (self.res_hidden, self.l_out)
            shapes[f"res{r}.fc1.bias"] = (self.res_hidden,)
            shapes[f"res{r}.fc2.weights"] = (self.l_out, self.res_hidden)
            shapes[f"res{r}.fc2.bias"] = (self.l_out,)
        shapes["output.weights"] = (self.l_out, self.l_out)
        shapes["output.bias"] = (self.l_out,)
        return shapes

    def n_params(self):
        return sum(int(np.prod(s)) for s in self.param_shapes().values())


def glorot_limit(name, shape):
    """Glorot-uniform bound for a weight tensor (Keras fan convention)."""
    if name.endswith(".kernels"):
        c_out, c_in, k = shape
        fan_in, fan_out = c_in * k, c_out * k
    else:
        fan_out, fan_in = shape
    return np.sqrt(6.0 / (fan_in + fan_out))


def init_params(config, seed=None):
    """Glorot-uniform weights and zero biases, fully determined by ``seed``."""
    rng = np.random.default_rng(config.rng_seed if seed is None else seed)
    params = {}
    for name, shape in config.param_shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            limit = glorot_limit(name, shape)
            params[name] = rng.uniform(-limit, limit, size=shape)
    return params


def glu_block_forward(x, main, gate):
    """Gated linear unit conv block: ``conv(x, main) * sigmoid(conv(x, gate))``."""
    out, _ = _glu_forward(x, main, gate)
    return out


def _fuse(main, gate):
    # both pathways read the same input, so they share one im2col and one matmul
    return ops.ConvParams(
        np.concatenate([main.kernels, gate.kernels]), np.concatenate([main.bias, gate.bias])
    )


def _glu_forward(x, main, gate):
    c = main.kernels.shape[0]
    ab = ops.conv1d_same(x, _fuse(main, gate))
    a = ab[..., :c, :]
    s = ops.sigmoid(ab[..., c:, :])
    return ops.elementwise_mul(a, s), (a, s)


def glu_block_backward(x, main, gate, cache, grad_out):
    a, s = cache
    c = main.kernels.shape[0]
    grad_a, grad_s = ops.elementwise_mul_backward(a, s, grad_out)
    grad_b = ops.sigmoid_backward(s, grad_s)
    grad_x, g = ops.conv1d_same_backward(
        x, _fuse(main, gate), np.concatenate([grad_a, grad_b], axis=-2)
    )
    g_main = ops.ConvParams(g.kernels[:c], g.bias[:c])
    g_gate = ops.ConvParams(g.kernels[c:], g.bias[c:])
    return grad_x, g_main, g_gate


def residual_block_forward(z, fc1, fc2):
    """``fc2(relu(fc1(z))) + z``; the second layer is linear."""
    out, _ = _residual_forward(z, fc1, fc2)
    return out


def _residual_forward(z, fc1, fc2):
    if z.shape[-1] != fc2.weights.shape[0]:
        raise ShapeError(
            f"residual input length {z.shape[-1]} does not match block output "
            f"{fc2.weights.shape[0]}"
        )
    pre = ops.dense(z, fc1)
    hidden = ops.relu(pre)
    return ops.dense(hidden, fc2) + z, (pre, hidden)


def residual_block_backward(z, fc1, fc2, cache, grad_out):
    pre, hidden = cache
    grad_hidden, g2 = ops.dense_backward(hidden, fc2, grad_out)
    grad_pre = ops.relu_backward(pre, grad_hidden)
    grad_z, g1 = ops.dense_backward(z, fc1, grad_pre)
    return grad_z + grad_out, g1, g2


class ForwardCache:
    """Per-call activations needed by :meth:`Network.backward`."""

    def __init__(self, batch_size):
        self.batch_size = batch_size
        self.stages = []
        self.dense1 = None
        self.residual = []
        self.output_input = None


class Network:
    """Parameters plus forward/backward passes for one configuration.

    ``params`` maps parameter names (see :meth:`NetworkConfig.param_shapes`)
    to float64 arrays and is ordered by declaration.
    """

    def __init__(self, config, params=None):
        self.config = config
        if params is None:
            params = init_params(config)
        expected = config.param_shapes()
        if list(params) != list(expected):
            missing = set(expected) ^ set(params)
            raise ShapeError(f"parameter names disagree with config: {sorted(missing)}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.params = {name: ops.as_tensor(params[name]) for name in expected}

    def __repr__(self):
        return f"Network({self.config!r})"

    def copy(self):
        return Network(self.config, {k: v.copy() for k, v in self.params.items()})

    def conv(self, stage, path):
        p = self.params
        return ops.ConvParams(p[f"glu{stage}.{path}.kernels"], p[f"glu{stage}.{path}.bias"])

    def dense_layer(self, prefix):
        return ops.DenseParams(self.params[f"{prefix}.weights"], self.params[f"{prefix}.bias"])

    def _as_batch(self, x):
        x = ops.as_tensor(x)
        l_in = self.config.l_in
        if x.ndim == 3 and x.shape[1] == 1:
            x = x[:, 0, :]
        if x.ndim != 2 or x.shape[1] != l_in:
            raise ShapeError(f"expected input windows of length {l_in}, got shape {x.shape}")
        return x[:, None, :]

    def forward_with_cache(self, x):
        """Forward a batch ``[N, l_in]``; returns ``(out [N, l_out], cache)``."""
        h = self._as_batch(x)
        cache = ForwardCache(h.shape[0])
        for s in range(self.config.n_glu_stages):
            g, glu_cache = _glu_forward(h, self.conv(s, "main"), self.conv(s, "gate"))
            pooled, argmax = ops.maxpool2(g)
            cache.stages.append((h, glu_cache, argmax))
            h = pooled
        flat = h.reshape(h.shape[0], -1)
        pre = ops.dense(flat, self.dense_layer("dense1"))
        z = ops.relu(pre)
        cache.dense1 = (flat, pre, h.shape)
        for r in range(self.config.n_res_blocks):
            z_next, res_cache = _residual_forward(
                z, self.dense_layer(f"res{r}.fc1"), self.dense_layer(f"res{r}.fc2")
            )
            cache.residual.append((z, res_cache))
            z = z_next
        cache.output_input = z
        return ops.dense(z, self.dense_layer("output")), cache

    def forward_batch(self, x):
        return self.forward_with_cache(x)[0]

    def forward(self, x):
        """Map one input window (``[l_in]`` or ``[1, l_in]``) to ``[l_out]``."""
        x = ops.as_tensor(x).reshape(1, -1)
        return self.forward_batch(x)[0]

    def backward(self, cache, grad_output):
        """Chain-rule gradients for every parameter, summed over the batch."""
        if not isinstance(cache, ForwardCache):
            raise RuntimeError("backward called without a forward cache; run forward_with_cache first")
        grad_output = ops.as_tensor(grad_output)
        if grad_output.shape != (cache.batch_size, self.config.l_out):
            raise ShapeError(
                f"grad_output shape {grad_output.shape} != {(cache.batch_size, self.config.l_out)}"
            )
        grads = {}
        g, gp = ops.dense_backward(cache.output_input, self.dense_layer("output"), grad_output)
        grads["output.weights"], grads["output.bias"] = gp.weights, gp.bias
        for r in reversed(range(self.config.n_res_blocks)):
            z, res_cache = cache.residual[r]
            g, g1, g2 = residual_block_backward(
                z, self.dense_layer(f"res{r}.fc1"), self.dense_layer(f"res{r}.fc2"), res_cache, g
            )
            grads[f"res{r}.fc1.weights"], grads[f"res{r}.fc1.bias"] = g1.weights, g1.bias
            grads[f"res{r}.fc2.weights"], grads[f"res{r}.fc2.bias"] = g2.weights, g2.bias
        flat, pre, pooled_shape = cache.dense1
        g = ops.relu_backward(pre, g)
        g, gp = ops.dense_backward(flat, self.dense_layer("dense1"), g)
        grads["dense1.weights"], grads["dense1.bias"] = gp.weights, gp.bias
        g = g.reshape(pooled_shape)
        for s in reversed(range(self.config.n_glu_stages)):
            h, glu_cache, argmax = cache.stages[s]
            g = ops.maxpool2_backward(argmax, g)
            g, g_main, g_gate = glu_block_backward(
                h, self.conv(s, "main"), self.conv(s, "gate"), glu_cache, g
            )
            grads[f"glu{s}.main.kernels"], grads[f"glu{s}.main.bias"] = g_main.kernels, g_main.bias
            grads[f"glu{s}.gate.kernels"], grads[f"glu{s}.gate.bias"] = g_gate.kernels, g_gate.bias
        return {name: grads[name] for name in self.params}

    def intermediate_lengths(self, x):
        """Sequence lengths observed after the input and each pooling stage."""
        _, cache = self.forward_with_cache(x)
        lengths = [h.shape[-1] for h, _, _ in cache.stages]
        return lengths + [cache.dense1[2][-1]]


def build_network(config=None, **overrides):
    if config is None:
        config = NetworkConfig(**overrides)
    elif overrides:
        config = NetworkConfig(**{**asdict(config), **overrides})
    return Network(config, init_params(config))


@dataclass
class Checkpoint:
    network: Network
    appliance: str = ""
    aggregate_divisor: float = 1000.0
    appliance_divisor: float = 1.0
    # sha256 of the training aggregate, used to refuse evaluating on training data
    train_fingerprint: str = ""

    def save(self, path):
        save_checkpoint(
            self.network,
            path,
            appliance=self.appliance,
            aggregate_divisor=self.aggregate_divisor,
            appliance_divisor=self.appliance_divisor,
            train_fingerprint=self.train_fingerprint,
        )


def save_checkpoint(net, path, appliance="", aggregate_divisor=1000.0, appliance_divisor=1.0,
                    train_fingerprint=""):
    """Write a text header of ``key=value`` lines, a ``---`` line, then every
    parameter as little-endian float64 in declaration order."""
    for value in (appliance, train_fingerprint):
        if "\n" in value or "=" in value:
            raise ValueError(f"header values may not contain newlines or '=': {value!r}")
    lines = [
        CHECKPOINT_MAGIC,
        f"format_version={CHECKPOINT_VERSION}",
        f"appliance={appliance}",
        f"aggregate_divisor={float(aggregate_divisor)!r}",
        f"appliance_divisor={float(appliance_divisor)!r}",
        f"train_fingerprint={train_fingerprint}",
    ]
    lines += [f"{k}={v}" for k, v in asdict(net.config).items()]
    lines.append(f"n_values={net.config.n_params()}")
    payload = b"".join(
        np.ascontiguousarray(net.params[name], dtype="<f8").tobytes() for name in net.params
    )
    Path(path).write_bytes("\n".join(lines).encode("utf-8") + _PAYLOAD_MARK + payload)


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    head, mark, payload = raw.partition(_PAYLOAD_MARK)
    header_lines = head.decode("utf-8").splitlines()
    if not header_lines or header_lines[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a glunilm checkpoint")
    header = {}
    for line in header_lines[1:]:
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"{path}: malformed header line {line!r}")
        header[key] = value
    version = header.get("format_version")
    if version != str(CHECKPOINT_VERSION):
        raise CheckpointVersionError(
            f"{path}: format_version {version!r} unsupported (expected {CHECKPOINT_VERSION})"
        )
    try:
        config = NetworkConfig(**{f.name: int(header[f.name]) for f in fields(NetworkConfig)})
        n_values = int(header["n_values"])
        aggregate_divisor = float(header["aggregate_divisor"])
        appliance_divisor = float(header["appliance_divisor"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad header: {exc}") from exc
    if not mark or not payload:
        raise CheckpointPayloadMissingError(f"{path}: checkpoint has a header but no parameter payload")
    if n_values != config.n_params():
        raise CheckpointSizeError(
            f"{path}: header declares {n_values} values but config implies {config.n_params()}"
        )
    if len(payload) != 8 * n_values:
        raise CheckpointSizeError(
            f"{path}: payload holds {len(payload)} bytes, expected {8 * n_values}"
        )
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    params, offset = {}, 0
    for name, shape in config.param_shapes().items():
        size = int(np.prod(shape))
        params[name] = flat[offset:offset + size].reshape(shape).copy()
        offset += size
    return Checkpoint(
        Network(config, params),
        appliance=header.get("appliance", ""),
        aggregate_divisor=aggregate_divisor,
        appliance_divisor=appliance_divisor,
        train_fingerprint=header.get("train_fingerprint", ""),
    )
