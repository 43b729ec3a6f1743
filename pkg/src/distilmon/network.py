"""The fixed 1-D CNN: two strided convolutions feeding a three-layer dense head.

Covers parameter initialization, the forward pass to logits, an exact backward
pass to parameter gradients, and a versioned binary model file format. The
default geometry is a single input channel of length 30, conv stacks
(1->16, 16->32) with kernel 3 / stride 2 / padding 1, and dense layers
256->120->84->2. Hidden layers use the rectifier; the output layer is linear.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .numerics import RngStream, fnv1a64

MODEL_MAGIC = b"KDIS"
MODEL_FORMAT_VERSION = 1

DEFAULT_CONV_LAYERS = ((1, 16, 3, 2, 1), (16, 32, 3, 2, 1))
DEFAULT_DENSE_LAYERS = ((256, 120), (120, 84), (84, 2))


class ModelFormatError(ValueError):
    """A model file is malformed or does not match the expected architecture."""


class StaleCacheError(RuntimeError):
    """A forward cache was paired with parameters it was not produced from."""


def conv_output_length(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


@dataclass(frozen=True)
class ArchitectureSpec:
    """Shape contract for the conv-then-dense network.

    Construction fails unless the flattened conv output matches the first
    dense input, so an inconsistent geometry can never reach training code.
    """

    input_channels: int = 1
    input_length: int = 30
    conv_layers: tuple[tuple[int, int, int, int, int], ...] = DEFAULT_CONV_LAYERS
    dense_layers: tuple[tuple[int, int], ...] = DEFAULT_DENSE_LAYERS
    hidden_activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "conv_layers", tuple(tuple(map(int, t)) for t in self.conv_layers))
        object.__setattr__(self, "dense_layers", tuple(tuple(map(int, t)) for t in self.dense_layers))
        if self.hidden_activation != "relu":
            raise ValueError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.input_channels < 1 or self.input_length < 1:
            raise ValueError("input_channels and input_length must be positive")
        if not self.conv_layers or not self.dense_layers:
            raise ValueError("need at least one conv layer and one dense layer")
        channels = self.input_channels
        length = self.input_length
        for i, (c_in, c_out, kernel, stride, padding) in enumerate(self.conv_layers):
            if min(c_in, c_out, kernel, stride) < 1 or padding < 0:
                raise ValueError(f"conv layer {i} has a non-positive dimension")
            if c_in != channels:
                raise ValueError(
                    f"conv layer {i} expects {c_in} input channels but receives {channels}"
                )
            if length + 2 * padding < kernel:
                raise ValueError(f"conv layer {i}: kernel {kernel} exceeds padded length")
            channels = c_out
            length = conv_output_length(length, kernel, stride, padding)
        flatten = channels * length
        if flatten != self.dense_layers[0][0]:
            raise ValueError(
                f"flattened conv output is {channels}x{length}={flatten} but the first "
                f"dense layer expects {self.dense_layers[0][0]}"
            )
        width = flatten
        for j, (d_in, d_out) in enumerate(self.dense_layers):
            if d_in != width:
                raise ValueError(f"dense layer {j} expects {d_in} inputs but receives {width}")
            if d_out < 1:
                raise ValueError(f"dense layer {j} has non-positive output size")
            width = d_out

    @property
    def num_classes(self) -> int:
        return self.dense_layers[-1][1]

    def conv_lengths(self) -> list[int]:
        """Sequence lengths through the conv stack, input first."""
        lengths = [self.input_length]
        for _, _, kernel, stride, padding in self.conv_layers:
            lengths.append(conv_output_length(lengths[-1], kernel, stride, padding))
        return lengths

    @property
    def flatten_size(self) -> int:
        return self.conv_layers[-1][1] * self.conv_lengths()[-1]

    def parameter_count(self) -> int:
        total = 0
        for c_in, c_out, kernel, _, _ in self.conv_layers:
            total += c_out * c_in * kernel + c_out
        for d_in, d_out in self.dense_layers:
            total += d_out * d_in + d_out
        return total

    def descriptor_bytes(self) -> bytes:
        """Little-endian u32 encoding of the layer tuples, used in model files."""
        parts = [struct.pack("<II", self.input_channels, self.input_length)]
        parts.append(struct.pack("<I", len(self.conv_layers)))
        for layer in self.conv_layers:
            parts.append(struct.pack("<5I", *layer))
        parts.append(struct.pack("<I", len(self.dense_layers)))
        for layer in self.dense_layers:
            parts.append(struct.pack("<2I", *layer))
        return b"".join(parts)


@dataclass
class CnnParameters:
    """All weights and biases, shaped to one ArchitectureSpec."""

    spec: ArchitectureSpec
    conv_kernels: list[np.ndarray]  # each (c_out, c_in, kernel)
    conv_biases: list[np.ndarray]  # each (c_out,)
    dense_weights: list[np.ndarray]  # each (d_out, d_in)
    dense_biases: list[np.ndarray]  # each (d_out,)

    def validate(self):
        spec = self.spec
        if len(self.conv_kernels) != len(spec.conv_layers) or len(self.conv_biases) != len(
            spec.conv_layers
        ):
            raise ValueError("conv parameter count does not match the architecture")
        if len(self.dense_weights) != len(spec.dense_layers) or len(self.dense_biases) != len(
            spec.dense_layers
        ):
            raise ValueError("dense parameter count does not match the architecture")
        for i, (c_in, c_out, kernel, _, _) in enumerate(spec.conv_layers):
            if self.conv_kernels[i].shape != (c_out, c_in, kernel):
                raise ValueError(f"conv kernel {i} has shape {self.conv_kernels[i].shape}, "
                                 f"expected {(c_out, c_in, kernel)}")
            if self.conv_biases[i].shape != (c_out,):
                raise ValueError(f"conv bias {i} has shape {self.conv_biases[i].shape}")
        for j, (d_in, d_out) in enumerate(spec.dense_layers):
            if self.dense_weights[j].shape != (d_out, d_in):
                raise ValueError(f"dense weight {j} has shape {self.dense_weights[j].shape}, "
                                 f"expected {(d_out, d_in)}")
            if self.dense_biases[j].shape != (d_out,):
                raise ValueError(f"dense bias {j} has shape {self.dense_biases[j].shape}")
        for arr in self.arrays():
            if not np.all(np.isfinite(arr)):
                raise ValueError("parameters contain non-finite values")

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in the canonical declaration order.

        Conv kernels each followed by their bias, then dense weights
        (row-major) each followed by their bias. Serialization, flattening
        and layer naming all rely on this order.
        """
        out: list[np.ndarray] = []
        for kernel, bias in zip(self.conv_kernels, self.conv_biases):
            out.extend([kernel, bias])
        for weight, bias in zip(self.dense_weights, self.dense_biases):
            out.extend([weight, bias])
        return out

    def array_names(self) -> list[str]:
        names: list[str] = []
        for i in range(len(self.conv_kernels)):
            names.extend([f"conv{i}.kernel", f"conv{i}.bias"])
        for j in range(len(self.dense_weights)):
            names.extend([f"dense{j}.weight", f"dense{j}.bias"])
        return names

    def copy(self) -> "CnnParameters":
        return CnnParameters(
            spec=self.spec,
            conv_kernels=[k.copy() for k in self.conv_kernels],
            conv_biases=[b.copy() for b in self.conv_biases],
            dense_weights=[w.copy() for w in self.dense_weights],
            dense_biases=[b.copy() for b in self.dense_biases],
        )

    def allclose(self, other: "CnnParameters", rtol: float = 0.0, atol: float = 0.0) -> bool:
        return all(
            np.allclose(a, b, rtol=rtol, atol=atol)
            for a, b in zip(self.arrays(), other.arrays())
        )

    def equal_bits(self, other: "CnnParameters") -> bool:
        return self.spec == other.spec and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


@dataclass
class ForwardCache:
    """Per-layer activations retained from one forward pass for backprop."""

    params: CnnParameters
    batch: np.ndarray
    conv_inputs: list[np.ndarray] = field(default_factory=list)  # input to each conv
    conv_windows: list[np.ndarray] = field(default_factory=list)  # padded sliding views
    conv_pre: list[np.ndarray] = field(default_factory=list)  # pre-rectifier conv outputs
    dense_inputs: list[np.ndarray] = field(default_factory=list)  # input to each dense
    dense_pre: list[np.ndarray] = field(default_factory=list)  # pre-activation dense outputs


def _conv_windows(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    # (B, C, L) -> (B, C, L_out, kernel) sliding views over the zero-padded input.
    if padding:
        padded = np.zeros((x.shape[0], x.shape[1], x.shape[2] + 2 * padding))
        padded[:, :, padding : padding + x.shape[2]] = x
        x = padded
    return sliding_window_view(x, kernel, axis=2)[:, :, ::stride, :]


def _conv_forward_batch(
    x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int, padding: int
) -> np.ndarray:
    windows = _conv_windows(x, kernel.shape[2], stride, padding)
    return _conv_apply(windows, kernel, bias)


def _conv_apply(windows: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    # (B, Cin, L', k) x (Cout, Cin, k) -> (B, Cout, L'); tensordot hits BLAS.
    out = np.tensordot(windows, kernel, axes=([1, 3], [1, 2]))  # (B, L', Cout)
    out += bias
    return out.transpose(0, 2, 1)


def conv1d_forward(
    input: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int, padding: int
) -> np.ndarray:
    """Cross-correlation of one (channels, length) sample with zero padding.

    output[o][t] = bias[o] + sum_{i,j} padded[i][t*stride + j] * kernel[o][i][j]
    """
    input = np.asarray(input, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be nonnegative, got {padding}")
    if input.ndim != 2:
        raise ValueError(f"input must be 2-D (channels, length), got shape {input.shape}")
    if kernel.ndim != 3:
        raise ValueError(f"kernel must be 3-D (out, in, k), got shape {kernel.shape}")
    c_out, c_in, k = kernel.shape
    if input.shape[0] != c_in:
        raise ValueError(f"input has {input.shape[0]} channels but kernel expects {c_in}")
    if bias.shape != (c_out,):
        raise ValueError(f"bias has shape {bias.shape}, expected ({c_out},)")
    if input.shape[1] + 2 * padding < k:
        raise ValueError(f"length {input.shape[1]} plus padding is shorter than kernel {k}")
    out = _conv_forward_batch(input[None], kernel, bias, stride, padding)[0]
    if not np.all(np.isfinite(out)):
        raise ValueError("convolution produced non-finite values")
    return out


def forward(params: CnnParameters, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Logits for a (batch, channels, length) input, plus the backprop cache."""
    spec = params.spec
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3:
        raise ValueError(f"batch must be 3-D (batch, channels, length), got shape {batch.shape}")
    if batch.shape[1] != spec.input_channels or batch.shape[2] != spec.input_length:
        raise ValueError(
            f"batch shape {batch.shape[1:]} does not match architecture input "
            f"({spec.input_channels}, {spec.input_length})"
        )
    cache = ForwardCache(params=params, batch=batch)
    x = batch
    for (_, _, kernel, stride, padding), w, b in zip(
        spec.conv_layers, params.conv_kernels, params.conv_biases
    ):
        cache.conv_inputs.append(x)
        windows = _conv_windows(x, kernel, stride, padding)
        cache.conv_windows.append(windows)
        pre = _conv_apply(windows, w, b)
        cache.conv_pre.append(pre)
        x = np.maximum(pre, 0.0)
    h = x.reshape(batch.shape[0], -1)
    last = len(spec.dense_layers) - 1
    for j, (w, b) in enumerate(zip(params.dense_weights, params.dense_biases)):
        cache.dense_inputs.append(h)
        pre = h @ w.T + b
        cache.dense_pre.append(pre)
        h = np.maximum(pre, 0.0) if j < last else pre
    logits = h
    if not np.all(np.isfinite(logits)):
        raise ValueError("forward pass produced non-finite logits")
    return logits, cache


def backward(
    params: CnnParameters, cache: ForwardCache, dloss_dlogits: np.ndarray
) -> CnnParameters:
    """Exact parameter gradient of the scalar loss whose logit gradient is given.

    The chain rule sums over the batch; any 1/B mean convention belongs to the
    supplied logit gradient, so the result is exactly what finite differences
    of that same scalar loss produce.
    """
    if cache.params is not params:
        raise StaleCacheError("cache was produced by a different parameter set")
    spec = params.spec
    dlogits = np.asarray(dloss_dlogits, dtype=np.float64)
    if dlogits.shape != cache.dense_pre[-1].shape:
        raise ValueError(
            f"dloss_dlogits has shape {dlogits.shape}, expected {cache.dense_pre[-1].shape}"
        )

    n_dense = len(spec.dense_layers)
    dense_weight_grads: list[np.ndarray] = [None] * n_dense  # type: ignore[list-item]
    dense_bias_grads: list[np.ndarray] = [None] * n_dense  # type: ignore[list-item]
    g = dlogits
    for j in range(n_dense - 1, -1, -1):
        dense_weight_grads[j] = g.T @ cache.dense_inputs[j]
        dense_bias_grads[j] = g.sum(axis=0)
        g = g @ params.dense_weights[j]
        if j > 0:
            g = g * (cache.dense_pre[j - 1] > 0.0)

    batch_size = cache.batch.shape[0]
    n_conv = len(spec.conv_layers)
    conv_kernel_grads: list[np.ndarray] = [None] * n_conv  # type: ignore[list-item]
    conv_bias_grads: list[np.ndarray] = [None] * n_conv  # type: ignore[list-item]
    last_conv = cache.conv_pre[-1]
    g = g.reshape(last_conv.shape) * (last_conv > 0.0)
    for i in range(n_conv - 1, -1, -1):
        _, _, kernel, stride, padding = spec.conv_layers[i]
        x = cache.conv_inputs[i]
        windows = cache.conv_windows[i]
        # ('b o l', 'b i l k') summed over b, l -> (Cout, Cin, k)
        conv_kernel_grads[i] = np.tensordot(g, windows, axes=([0, 2], [0, 2]))
        conv_bias_grads[i] = g.sum(axis=(0, 2))
        if i == 0:
            break
        length_out = g.shape[2]
        padded_len = x.shape[2] + 2 * padding
        dx_padded = np.zeros((batch_size, x.shape[1], padded_len))
        # ('b o l', 'o i k') -> (B, L', Cin, k): upstream grad through the kernel.
        contrib = np.tensordot(g.transpose(0, 2, 1), params.conv_kernels[i], axes=([2], [0]))
        for j in range(kernel):
            dx_padded[:, :, j : j + stride * length_out : stride] += contrib[:, :, :, j].transpose(
                0, 2, 1
            )
        dx = dx_padded[:, :, padding : padding + x.shape[2]] if padding else dx_padded
        g = dx * (cache.conv_pre[i - 1] > 0.0)
    return CnnParameters(
        spec=spec,
        conv_kernels=conv_kernel_grads,
        conv_biases=conv_bias_grads,
        dense_weights=dense_weight_grads,
        dense_biases=dense_bias_grads,
    )


def init_params(spec: ArchitectureSpec, rng: RngStream) -> CnnParameters:
    """Fan-in-scaled uniform weights (bound sqrt(6/fan_in)) and zero biases.

    Draw order is fixed: conv kernels in layer order, then dense weights in
    layer order, each filled row-major, so a given stream always produces the
    same parameters.
    """
    conv_kernels, conv_biases = [], []
    for c_in, c_out, kernel, _, _ in spec.conv_layers:
        bound = np.sqrt(6.0 / (c_in * kernel))
        u = rng.uniforms(c_out * c_in * kernel).reshape(c_out, c_in, kernel)
        conv_kernels.append((2.0 * u - 1.0) * bound)
        conv_biases.append(np.zeros(c_out))
    dense_weights, dense_biases = [], []
    for d_in, d_out in spec.dense_layers:
        bound = np.sqrt(6.0 / d_in)
        u = rng.uniforms(d_out * d_in).reshape(d_out, d_in)
        dense_weights.append((2.0 * u - 1.0) * bound)
        dense_biases.append(np.zeros(d_out))
    return CnnParameters(spec, conv_kernels, conv_biases, dense_weights, dense_biases)


def params_to_vector(params: CnnParameters) -> np.ndarray:
    """Flatten all parameters into one vector in declaration order."""
    return np.concatenate([a.ravel() for a in params.arrays()])


def params_from_vector(spec: ArchitectureSpec, vector: np.ndarray) -> CnnParameters:
    """Inverse of params_to_vector for the given architecture."""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.size != spec.parameter_count():
        raise ValueError(
            f"vector has {vector.size} entries, architecture needs {spec.parameter_count()}"
        )
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        out = vector[pos : pos + size].reshape(shape).copy()
        pos += size
        return out

    conv_kernels, conv_biases = [], []
    for c_in, c_out, kernel, _, _ in spec.conv_layers:
        conv_kernels.append(take((c_out, c_in, kernel)))
        conv_biases.append(take((c_out,)))
    dense_weights, dense_biases = [], []
    for d_in, d_out in spec.dense_layers:
        dense_weights.append(take((d_out, d_in)))
        dense_biases.append(take((d_out,)))
    return CnnParameters(spec, conv_kernels, conv_biases, dense_weights, dense_biases)


def serialize(params: CnnParameters) -> bytes:
    """Versioned binary encoding of a parameter set.

    Layout: magic "KDIS", u16 format version, architecture descriptor
    (layer tuples as little-endian u32s), u64 FNV-1a hash of the descriptor,
    all parameters as little-endian f64 in declaration order, and a CRC32 of
    that parameter payload. Everything little-endian.
    """
    params.validate()
    descriptor = params.spec.descriptor_bytes()
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    return b"".join(
        [
            MODEL_MAGIC,
            struct.pack("<H", MODEL_FORMAT_VERSION),
            descriptor,
            struct.pack("<Q", fnv1a64(descriptor)),
            payload,
            struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF),
        ]
    )


def _read_descriptor(data: bytes, pos: int) -> tuple[ArchitectureSpec, int]:
    def need(n):
        if pos + n > len(data):
            raise ModelFormatError("model file truncated inside the architecture descriptor")

    need(12)
    input_channels, input_length, n_conv = struct.unpack_from("<III", data, pos)
    pos += 12
    if n_conv > 64:
        raise ModelFormatError(f"descriptor declares an implausible {n_conv} conv layers")
    conv_layers = []
    for _ in range(n_conv):
        need(20)
        conv_layers.append(struct.unpack_from("<5I", data, pos))
        pos += 20
    need(4)
    (n_dense,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if n_dense > 64:
        raise ModelFormatError(f"descriptor declares an implausible {n_dense} dense layers")
    dense_layers = []
    for _ in range(n_dense):
        need(8)
        dense_layers.append(struct.unpack_from("<II", data, pos))
        pos += 8
    try:
        spec = ArchitectureSpec(
            input_channels=input_channels,
            input_length=input_length,
            conv_layers=tuple(conv_layers),
            dense_layers=tuple(dense_layers),
        )
    except ValueError as exc:
        raise ModelFormatError(f"descriptor encodes an invalid architecture: {exc}") from exc
    return spec, pos


def deserialize(data: bytes, expected_spec: ArchitectureSpec | None = None) -> CnnParameters:
    """Decode serialize() output, verifying magic, version, hashes and shapes."""
    if len(data) < 6:
        raise ModelFormatError("model file truncated before the header")
    if data[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {data[:4]!r}, expected {MODEL_MAGIC!r}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported format version {version}, expected {MODEL_FORMAT_VERSION}"
        )
    spec, pos = _read_descriptor(data, 6)
    descriptor = spec.descriptor_bytes()
    if pos + 8 > len(data):
        raise ModelFormatError("model file truncated before the descriptor hash")
    (stored_hash,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if stored_hash != fnv1a64(descriptor):
        raise ModelFormatError("architecture descriptor hash mismatch")
    if expected_spec is not None and spec != expected_spec:
        raise ModelFormatError("model architecture does not match the expected spec")
    payload_size = spec.parameter_count() * 8
    if pos + payload_size + 4 != len(data):
        raise ModelFormatError(
            f"model file has {len(data) - pos - 4} payload bytes, expected {payload_size}"
        )
    payload = data[pos : pos + payload_size]
    (stored_crc,) = struct.unpack_from("<I", data, pos + payload_size)
    if stored_crc != zlib.crc32(payload) & 0xFFFFFFFF:
        raise ModelFormatError("parameter payload CRC32 mismatch")
    vector = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    params = params_from_vector(spec, vector)
    params.validate()
    return params
