"""Small dense softmax classifier with explicit forward/backward passes.

Weights live in one flat vector (per layer: the weight matrix, then the
bias row) so the whole model quantizes as a single tensor. Training is
quantized-weight training: the gradient is taken at the current grid-valued
weights, the SGD step is applied in full precision, and the result is
rounded back to the client's format. Activations and gradients stay in
float64 throughout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DatasetFormatError, TrainingDivergenceError
from .quantize import QuantSpec, QuantizedTensor, dequantize, quantize_tensor

CHECKPOINT_MAGIC = b"AFC1"


@dataclass(frozen=True)
class Architecture:
    """Layer widths of the classifier: (input, hidden..., classes).

    Hidden activations are ReLU; the output layer feeds a softmax trained
    with cross-entropy.
    """

    layer_dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if len(self.layer_dims) < 2:
            raise ConfigurationError("an architecture needs at least input and output dims")
        if any(d < 1 for d in self.layer_dims):
            raise ConfigurationError(f"layer dims must be positive, got {self.layer_dims}")

    @property
    def param_count(self) -> int:
        dims = self.layer_dims
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in zip(dims, dims[1:]))

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]


@dataclass(frozen=True)
class ModelParams:
    """A flat parameter vector bound to its architecture."""

    flat: np.ndarray
    arch: Architecture

    def __post_init__(self):
        flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)
        if flat.ndim != 1 or flat.size != self.arch.param_count:
            raise ConfigurationError(
                f"expected {self.arch.param_count} parameters, got {flat.size}"
            )


def _layer_views(flat: np.ndarray, arch: Architecture) -> list[tuple[np.ndarray, np.ndarray]]:
    """(weights, bias) pairs sliced out of the flat vector."""
    out = []
    offset = 0
    dims = arch.layer_dims
    for fan_in, fan_out in zip(dims, dims[1:]):
        w = flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = flat[offset:offset + fan_out]
        offset += fan_out
        out.append((w, b))
    return out


def init_params(arch: Architecture, rng: np.random.Generator) -> ModelParams:
    """Uniform Xavier weights, zero biases; deterministic per generator state."""
    chunks = []
    dims = arch.layer_dims
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return ModelParams(flat=np.concatenate(chunks), arch=arch)


def _forward_cached(params: ModelParams, batch: np.ndarray):
    """Probabilities plus the post-activation inputs of every layer."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.arch.input_dim:
        raise ConfigurationError(
            f"batch width {batch.shape[-1] if batch.ndim == 2 else batch.shape} "
            f"does not match input dim {params.arch.input_dim}"
        )
    layers = _layer_views(params.flat, params.arch)
    inputs = [batch]
    a = batch
    for i, (w, b) in enumerate(layers):
        z = a @ w + b
        a = np.maximum(z, 0.0) if i < len(layers) - 1 else z
        inputs.append(a)
    logits = inputs[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    probs = expz / expz.sum(axis=1, keepdims=True)
    return probs, inputs


def forward(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per sample, rows summing to one."""
    probs, _ = _forward_cached(params, batch)
    return probs


def loss_and_grad(params: ModelParams, batch: np.ndarray,
                  labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the flat parameter vector."""
    labels = np.asarray(labels, dtype=np.int64)
    probs, inputs = _forward_cached(params, batch)
    n = batch.shape[0]
    logits = inputs[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    # log-sum-exp keeps the loss finite even when the softmax saturates
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-np.mean(log_probs[np.arange(n), labels]))

    layers = _layer_views(params.flat, params.arch)
    grad = np.empty_like(params.flat)
    views = _layer_views(grad, params.arch)

    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw, gb = views[i]
        gw[...] = inputs[i].T @ delta
        gb[...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ w.T) * (inputs[i] > 0.0)
    return loss, grad


def train_step(params: ModelParams, batch: np.ndarray, labels: np.ndarray,
               lr: float, spec: QuantSpec) -> ModelParams:
    """One SGD step at the current grid-valued weights, re-rounded to ``spec``."""
    if not lr >= 0:
        raise ConfigurationError(f"learning rate must be non-negative, got {lr}")
    loss, grad = loss_and_grad(params, batch, labels)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise TrainingDivergenceError("non-finite loss or gradient during local step")
    updated = params.flat - lr * grad
    snapped = dequantize(quantize_tensor(updated, spec))
    return ModelParams(flat=snapped, arch=params.arch)


def evaluate(params: ModelParams, dataset) -> float:
    """Top-1 accuracy of the model on ``dataset`` (anything with features/labels)."""
    probs = forward(params, dataset.features)
    predicted = probs.argmax(axis=1)
    return float(np.mean(predicted == dataset.labels))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
#
# Flat little-endian layout, round-trips exactly:
#
#   bytes 0..3   magic "AFC1"
#   u32          number of layer dims D
#   u32 * D      layer dims
#   u16          length S of the format string
#   S bytes      format string (UTF-8, e.g. "fx4")
#   f64          scale
#   u64          code count C
#   i64 * C      codes

def save_checkpoint(path, arch: Architecture, tensor: QuantizedTensor) -> None:
    """Write a quantized model to ``path`` in the documented binary layout."""
    spec_str = tensor.spec.to_string().encode("utf-8")
    dims = arch.layer_dims
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        fh.write(struct.pack("<H", len(spec_str)))
        fh.write(spec_str)
        fh.write(struct.pack("<d", tensor.scale))
        fh.write(struct.pack("<Q", tensor.size))
        fh.write(np.ascontiguousarray(tensor.codes, dtype="<i8").tobytes())


def load_checkpoint(path) -> tuple[Architecture, QuantizedTensor]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        if raw[:4] != CHECKPOINT_MAGIC:
            raise DatasetFormatError(f"bad checkpoint magic {raw[:4]!r}")
        off = 4
        (n_dims,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = struct.unpack_from(f"<{n_dims}I", raw, off)
        off += 4 * n_dims
        (spec_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        spec = QuantSpec.from_string(raw[off:off + spec_len].decode("utf-8"))
        off += spec_len
        (scale,) = struct.unpack_from("<d", raw, off)
        off += 8
        (count,) = struct.unpack_from("<Q", raw, off)
        off += 8
        if off + 8 * count != len(raw):
            raise DatasetFormatError("checkpoint length does not match header")
        codes = np.frombuffer(raw, dtype="<i8", count=count, offset=off)
    except struct.error as exc:
        raise DatasetFormatError(f"truncated checkpoint: {exc}") from exc
    arch = Architecture(layer_dims=dims)
    tensor = QuantizedTensor(codes=codes.astype(np.int64), scale=scale,
                             spec=spec, shape=(count,))
    if tensor.size != arch.param_count:
        raise DatasetFormatError(
            f"checkpoint has {tensor.size} codes for a {arch.param_count}-parameter model"
        )
    return arch, tensor
