"""The inception ConvNet: declarative architecture spec, parameter store,
forward/backward passes, checkpoint persistence, and a full-model
gradient check.

A model is (ModelSpec, params) where params is a plain ordered dict of
name -> ndarray. Parameters are immutable during inference; training
code owns and mutates its own dict.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops
from .errors import ConfigError, DataFormatError, ShapeError
from .welldata import CHANNELS, N_FACIES, Standardizer

CHECKPOINT_MAGIC = "#fnet v1"

POOL_KERNEL = 2   # between-stage downsampling drops every other sample
POOL_STRIDE = 2
BRANCH_POOL_KERNEL = 3  # inside the inception pool branch: stride 1, same padding


@dataclass(frozen=True)
class InceptionSpec:
    """Channel counts and kernel sizes for the four parallel branches."""

    branch_1x1: int = 8
    reduce_small: int = 8
    small_kernel: int = 3
    small_channels: int = 16
    reduce_large: int = 8
    large_kernel: int = 7
    large_channels: int = 16
    pool_proj: int = 8

    def __post_init__(self):
        counts = (self.branch_1x1, self.reduce_small, self.small_channels,
                  self.reduce_large, self.large_channels, self.pool_proj)
        if min(counts) < 1:
            raise ConfigError(f"all inception channel counts must be >= 1, got {counts}")
        if self.small_kernel % 2 == 0 or self.large_kernel % 2 == 0:
            raise ConfigError("inception kernels must be odd")
        if not self.small_kernel < self.large_kernel:
            raise ConfigError(f"small kernel {self.small_kernel} must be smaller "
                              f"than large kernel {self.large_kernel}")

    @property
    def out_channels(self) -> int:
        return (self.branch_1x1 + self.small_channels
                + self.large_channels + self.pool_proj)


@dataclass(frozen=True)
class ModelSpec:
    """Layer topology: stem conv, inception stages with downsampling, fc head."""

    window: int = 31
    in_channels: int = len(CHANNELS)
    stem_kernel: int = 5        # 0 disables the stem conv
    stem_channels: int = 16
    stages: tuple = (InceptionSpec(), InceptionSpec())
    fc_sizes: tuple = (64,)
    dropout: float = 0.5
    n_classes: int = N_FACIES

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"window must be odd and >= 1, got {self.window}")
        if self.stem_kernel and (self.stem_kernel % 2 == 0 or self.stem_channels < 1):
            raise ConfigError("stem kernel must be odd and stem channels >= 1")
        if not self.stages:
            raise ConfigError("at least one inception stage is required")
        if any(s < 1 for s in self.fc_sizes):
            raise ConfigError(f"fc sizes must be >= 1, got {self.fc_sizes}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.n_classes < 2:
            raise ConfigError(f"need >= 2 output classes, got {self.n_classes}")

    def stage_lengths(self) -> list:
        """Series length entering each stage, plus the final pooled length."""
        lengths = [self.window]
        for _ in self.stages:
            lengths.append(pooled_length(lengths[-1]))
        return lengths

    def flatten_size(self) -> int:
        return self.stages[-1].out_channels * self.stage_lengths()[-1]


def pooled_length(length: int) -> int:
    """Length after the stride-2 downsampling pool (trailing partial window kept)."""
    return -((length - POOL_KERNEL) // -POOL_STRIDE) + 1


def param_shapes(spec: ModelSpec) -> dict:
    """Stable layer ids mapped to parameter shapes, in checkpoint order."""
    shapes = {}

    def conv(name, c_out, c_in, k):
        shapes[f"{name}.kernels"] = (c_out, c_in, k)
        shapes[f"{name}.bias"] = (c_out,)

    c = spec.in_channels
    if spec.stem_kernel:
        conv("stem", spec.stem_channels, c, spec.stem_kernel)
        c = spec.stem_channels
    for i, st in enumerate(spec.stages):
        conv(f"s{i}.b1", st.branch_1x1, c, 1)
        conv(f"s{i}.b2r", st.reduce_small, c, 1)
        conv(f"s{i}.b2", st.small_channels, st.reduce_small, st.small_kernel)
        conv(f"s{i}.b3r", st.reduce_large, c, 1)
        conv(f"s{i}.b3", st.large_channels, st.reduce_large, st.large_kernel)
        conv(f"s{i}.b4", st.pool_proj, c, 1)
        c = st.out_channels
    n = spec.flatten_size()
    for j, size in enumerate(spec.fc_sizes):
        shapes[f"fc{j}.weights"] = (size, n)
        shapes[f"fc{j}.bias"] = (size,)
        n = size
    shapes["out.weights"] = (spec.n_classes, n)
    shapes["out.bias"] = (spec.n_classes,)
    return shapes


def init_params(spec: ModelSpec, seed: int, dtype=np.float32) -> dict:
    """He-initialized parameters, bit-reproducible for a given seed.

    Each weight tensor draws from its own child stream of
    SeedSequence(seed), split in declaration order, so layers never
    share or shift each other's draws. Biases start at zero.
    """
    shapes = param_shapes(spec)
    n_weights = sum(1 for n in shapes if not n.endswith(".bias"))
    streams = iter(np.random.SeedSequence(seed).spawn(n_weights))
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            rng = np.random.default_rng(next(streams))
            scale = np.sqrt(2.0 / fan_in)
            params[name] = (rng.standard_normal(shape) * scale).astype(dtype)
    return params


# ---------------------------------------------------------------------------
# forward / backward

def _conv_relu(params, name, x, padding="same"):
    pre = ops.conv1d(x, params[f"{name}.kernels"], params[f"{name}.bias"], padding)
    return ops.relu(pre), pre


def inception_forward(ispec: InceptionSpec, params: dict, x: np.ndarray,
                      prefix: str = "s0") -> tuple[np.ndarray, dict]:
    """Run the four branches in parallel and concatenate along channels.

    Branch 1: 1x1 conv. Branch 2: 1x1 reduce then small kernel. Branch 3:
    1x1 reduce then large kernel. Branch 4: same-padding max-pool then
    1x1 conv. Every branch is same-padded and ReLU-activated, so the
    output keeps the input length with branch_1x1 + small_channels +
    large_channels + pool_proj channels.
    """
    b1, pre1 = _conv_relu(params, f"{prefix}.b1", x)
    r2, pre2r = _conv_relu(params, f"{prefix}.b2r", x)
    b2, pre2 = _conv_relu(params, f"{prefix}.b2", r2)
    r3, pre3r = _conv_relu(params, f"{prefix}.b3r", x)
    b3, pre3 = _conv_relu(params, f"{prefix}.b3", r3)
    pooled, pool_cache = ops.pool1d(x, BRANCH_POOL_KERNEL, 1, padding="same")
    b4, pre4 = _conv_relu(params, f"{prefix}.b4", pooled)
    out = ops.concat_channels([b1, b2, b3, b4])
    cache = {"x": x, "pre1": pre1, "pre2r": pre2r, "r2": r2, "pre2": pre2,
             "pre3r": pre3r, "r3": r3, "pre3": pre3,
             "pool_cache": pool_cache, "pooled": pooled, "pre4": pre4}
    return out, cache


def inception_backward(ispec: InceptionSpec, params: dict, cache: dict,
                       grad: np.ndarray, prefix: str, grads: dict) -> np.ndarray:
    """Backward through one inception block; fills grads, returns d_input."""
    sizes = [ispec.branch_1x1, ispec.small_channels,
             ispec.large_channels, ispec.pool_proj]
    g1, g2, g3, g4 = ops.split_channels(grad, sizes)

    def conv_back(name, g, pre, x_in):
        g = ops.relu_backward(g, pre)
        d_x, d_k, d_b = ops.conv1d_backward(g, x_in, params[f"{name}.kernels"])
        grads[f"{name}.kernels"] = d_k
        grads[f"{name}.bias"] = d_b
        return d_x

    d_x = conv_back(f"{prefix}.b1", g1, cache["pre1"], cache["x"])
    g2r = conv_back(f"{prefix}.b2", g2, cache["pre2"], cache["r2"])
    d_x += conv_back(f"{prefix}.b2r", g2r, cache["pre2r"], cache["x"])
    g3r = conv_back(f"{prefix}.b3", g3, cache["pre3"], cache["r3"])
    d_x += conv_back(f"{prefix}.b3r", g3r, cache["pre3r"], cache["x"])
    g_pool = conv_back(f"{prefix}.b4", g4, cache["pre4"], cache["pooled"])
    d_x += ops.pool1d_backward(g_pool, cache["pool_cache"])
    return d_x


def model_forward(spec: ModelSpec, params: dict, batch: np.ndarray,
                  training: bool = False,
                  rng: Optional[np.random.Generator] = None) -> tuple[np.ndarray, dict]:
    """Full forward pass on a (B, C, W) batch; returns (logits, caches).

    Dropout fires only in training mode, drawing its masks from `rng`.
    """
    x = np.asarray(batch)
    if x.ndim != 3:
        raise ShapeError(f"batch must be (B, C, W), got rank {x.ndim}")
    if x.shape[1] != spec.in_channels or x.shape[2] != spec.window:
        raise ShapeError(f"batch shape {x.shape[1:]} does not match model input "
                         f"({spec.in_channels}, {spec.window})")
    if training and spec.dropout > 0 and rng is None:
        raise ConfigError("training-mode forward with dropout needs an rng")

    caches = {"stages": [], "head": []}
    if spec.stem_kernel:
        out, pre = _conv_relu(params, "stem", x)
        caches["stem"] = (x, pre)
        x = out
    for i, st in enumerate(spec.stages):
        out, inc_cache = inception_forward(st, params, x, prefix=f"s{i}")
        pooled, pool_cache = ops.pool1d(out, POOL_KERNEL, POOL_STRIDE)
        caches["stages"].append((inc_cache, pool_cache))
        x = pooled

    caches["flat_shape"] = x.shape
    x = x.reshape(x.shape[0], -1)
    for j in range(len(spec.fc_sizes)):
        pre = ops.dense(x, params[f"fc{j}.weights"], params[f"fc{j}.bias"])
        act = ops.relu(pre)
        dropped, drop_cache = ops.dropout(act, spec.dropout, rng, training)
        caches["head"].append((x, pre, drop_cache))
        x = dropped
    caches["out_in"] = x
    logits = ops.dense(x, params["out.weights"], params["out.bias"])
    return logits, caches


def model_backward(spec: ModelSpec, params: dict, caches: dict,
                   logit_grads: np.ndarray) -> dict:
    """Gradients for every parameter, keyed and shaped exactly like params."""
    grads = {}
    g, grads["out.weights"], grads["out.bias"] = ops.dense_backward(
        logit_grads, caches["out_in"], params["out.weights"])

    for j in reversed(range(len(spec.fc_sizes))):
        x_in, pre, drop_cache = caches["head"][j]
        g = ops.dropout_backward(g, drop_cache)
        g = ops.relu_backward(g, pre)
        g, grads[f"fc{j}.weights"], grads[f"fc{j}.bias"] = ops.dense_backward(
            g, x_in, params[f"fc{j}.weights"])

    g = g.reshape(caches["flat_shape"])
    for i in reversed(range(len(spec.stages))):
        inc_cache, pool_cache = caches["stages"][i]
        g = ops.pool1d_backward(g, pool_cache)
        g = inception_backward(spec.stages[i], params, inc_cache, g, f"s{i}", grads)

    if spec.stem_kernel:
        x, pre = caches["stem"]
        g = ops.relu_backward(g, pre)
        _, grads["stem.kernels"], grads["stem.bias"] = ops.conv1d_backward(
            g, x, params["stem.kernels"])
    return grads


# ---------------------------------------------------------------------------
# checkpoints

def _spec_lines(spec: ModelSpec) -> list:
    lines = [
        f"window = {spec.window}",
        f"in_channels = {spec.in_channels}",
        f"stem_kernel = {spec.stem_kernel}",
        f"stem_channels = {spec.stem_channels}",
        f"fc_sizes = {','.join(str(s) for s in spec.fc_sizes)}",
        f"dropout = {spec.dropout!r}",
        f"n_classes = {spec.n_classes}",
        f"n_stages = {len(spec.stages)}",
    ]
    for i, st in enumerate(spec.stages):
        lines.append(f"stage{i} = {st.branch_1x1} {st.reduce_small} {st.small_kernel} "
                     f"{st.small_channels} {st.reduce_large} {st.large_kernel} "
                     f"{st.large_channels} {st.pool_proj}")
    return lines


def _spec_from_manifest(kv: dict) -> ModelSpec:
    try:
        stages = []
        for i in range(int(kv["n_stages"])):
            a, rs, ks, b, rl, kl, c, d = (int(t) for t in kv[f"stage{i}"].split())
            stages.append(InceptionSpec(a, rs, ks, b, rl, kl, c, d))
        return ModelSpec(
            window=int(kv["window"]),
            in_channels=int(kv["in_channels"]),
            stem_kernel=int(kv["stem_kernel"]),
            stem_channels=int(kv["stem_channels"]),
            stages=tuple(stages),
            fc_sizes=tuple(int(s) for s in kv["fc_sizes"].split(",") if s),
            dropout=float(kv["dropout"]),
            n_classes=int(kv["n_classes"]),
        )
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"checkpoint manifest incomplete or malformed: {exc}")


def save_checkpoint(spec: ModelSpec, params: dict, standardizer: Standardizer,
                    path, seed: int = 0) -> None:
    """Write a `.fnet` file: text manifest, then a raw binary32 blob.

    The blob holds every parameter tensor little-endian float32,
    concatenated in manifest order, so identical params produce
    byte-identical files.
    """
    shapes = param_shapes(spec)
    lines = [CHECKPOINT_MAGIC, f"seed = {seed}"]
    lines += _spec_lines(spec)
    for c in CHANNELS:
        lines.append(f"std.{c} = {standardizer.mean[c]!r} {standardizer.std[c]!r}")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise ShapeError(f"param {name} has shape {params[name].shape}, "
                             f"spec requires {shape}")
        lines.append(f"param {name} {' '.join(str(d) for d in shape)}")
    lines.append("[blob]")
    blob = b"".join(np.ascontiguousarray(params[n], dtype="<f4").tobytes()
                    for n in shapes)
    with open(path, "wb") as fh:
        fh.write("\n".join(lines).encode() + b"\n")
        fh.write(blob)


def load_checkpoint(path) -> tuple[ModelSpec, dict, Standardizer]:
    """Read a `.fnet` file back; inverse of save_checkpoint."""
    with open(path, "rb") as fh:
        raw = fh.read()
    marker = b"\n[blob]\n"
    split = raw.find(marker)
    if split < 0 or not raw.startswith(CHECKPOINT_MAGIC.encode()):
        raise DataFormatError(f"{path}: not a faciesnet checkpoint")
    manifest = raw[:split].decode()
    blob = raw[split + len(marker):]

    kv, param_order = {}, []
    for line in manifest.splitlines()[1:]:
        if line.startswith("param "):
            parts = line.split()
            param_order.append((parts[1], tuple(int(d) for d in parts[2:])))
        elif " = " in line:
            key, value = line.split(" = ", 1)
            kv[key] = value

    spec = _spec_from_manifest(kv)
    mean, std = {}, {}
    for c in CHANNELS:
        if f"std.{c}" not in kv:
            raise DataFormatError(f"{path}: manifest missing standardizer for {c}")
        m, s = kv[f"std.{c}"].split()
        mean[c], std[c] = float(m), float(s)

    expected = param_shapes(spec)
    if [n for n, _ in param_order] != list(expected):
        raise DataFormatError(f"{path}: parameter list does not match the model spec")
    total = sum(int(np.prod(s)) for _, s in param_order)
    if len(blob) != 4 * total:
        raise DataFormatError(f"{path}: truncated blob: {len(blob)} bytes "
                              f"for {4 * total} expected")
    params, offset = {}, 0
    for name, shape in param_order:
        if shape != expected[name]:
            raise DataFormatError(f"{path}: param {name} shape {shape} disagrees "
                                  f"with spec {expected[name]}")
        n = int(np.prod(shape))
        params[name] = np.frombuffer(blob, dtype="<f4", count=n,
                                     offset=offset).reshape(shape).copy()
        offset += 4 * n
    return spec, params, Standardizer(mean, std)


@dataclass
class Checkpoint:
    """A trained model bundle: architecture, parameters, input scaling."""

    spec: ModelSpec
    params: dict
    standardizer: Standardizer
    seed: int = 0

    def save(self, path) -> None:
        save_checkpoint(self.spec, self.params, self.standardizer, path, self.seed)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        spec, params, standardizer = load_checkpoint(path)
        return cls(spec, params, standardizer, checkpoint_seed(path))


def checkpoint_seed(path) -> int:
    """Seed recorded in a checkpoint manifest."""
    with open(path, "rb") as fh:
        head = fh.read(4096).decode(errors="replace")
    for line in head.splitlines():
        if line.startswith("seed = "):
            return int(line.split(" = ")[1])
    raise DataFormatError(f"{path}: no seed in manifest")


# ---------------------------------------------------------------------------
# gradient check

TINY_GRADCHECK_SPEC = ModelSpec(
    window=9, stem_kernel=3, stem_channels=4,
    stages=(InceptionSpec(2, 2, 3, 2, 2, 7, 2, 2),),
    fc_sizes=(8,), dropout=0.25,
)


def gradient_check(spec: Optional[ModelSpec] = None, seed: int = 0,
                   batch_size: int = 2, h: float = 1e-5) -> tuple[float, str]:
    """Check every analytic model gradient against central differences.

    Builds a float64 model, draws a random batch, and compares
    model_backward against (L(+h) - L(-h)) / 2h elementwise. The
    dropout mask is replayed from a fixed stream so the loss stays
    deterministic under perturbation. Returns (max relative error,
    worst parameter id).

    Biases get small random offsets instead of the zero-init used for
    training: a zero bias behind an all-zero receptive field puts a
    ReLU pre-activation exactly on its kink, where the analytic
    subgradient and the two-sided difference quotient legitimately
    disagree. The check wants a generic point, not the init point.
    """
    spec = TINY_GRADCHECK_SPEC if spec is None else spec
    params = init_params(spec, seed, dtype=np.float64)
    bias_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(3,)))
    for name, value in params.items():
        if name.endswith(".bias"):
            params[name] = 0.1 * bias_rng.standard_normal(value.shape)
    data_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    x = data_rng.standard_normal((batch_size, spec.in_channels, spec.window))
    labels = data_rng.integers(0, spec.n_classes, size=batch_size)
    mask_seed = np.random.SeedSequence(entropy=seed, spawn_key=(2,))

    def loss_fn(p):
        logits, _ = model_forward(spec, p, x, training=True,
                                  rng=np.random.default_rng(mask_seed))
        return ops.softmax_xent(logits, labels)[0]

    logits, caches = model_forward(spec, params, x, training=True,
                                   rng=np.random.default_rng(mask_seed))
    _, d_logits, _ = ops.softmax_xent(logits, labels)
    grads = model_backward(spec, params, caches, d_logits)
    return ops.finite_diff_check(loss_fn, params, grads, h)
