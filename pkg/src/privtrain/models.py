"""Shallow private classifiers and their per-sample gradients.

Two architectures: a 1-layer linear softmax classifier and a 2-layer MLP
with Tanh hidden units and Sigmoid outputs. Gradients are analytic and per
sample (that is what gets clipped), with vectorized batch versions used by
the trainers. Direct-feedback-alignment update directions replace the
backpropagated hidden error with a fixed random feedback projection; the
output-layer block is the true gradient either way.

Parameter flattening order is fixed as (W1 row-major, b1, W2 row-major,
b2) so joint L2 clipping of a per-sample gradient is well defined.

Checkpoint format (little-endian): magic "PVTM", version u16, arch u16
(1 = linear_1layer, 2 = mlp_2layer), in_dim u32, hidden u32 (0 for
linear), classes u32, flags u16 (bit 0: feedback matrix appended), then
float32 parameter payload in flattening order, then the feedback matrix
row-major if flagged.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import special

from .mechanisms import ClipSpec, clip_l2

ARCH_LINEAR = "linear_1layer"
ARCH_MLP = "mlp_2layer"
LOSS_SOFTMAX_CE = "softmax_ce"
LOSS_SIGMOID_BCE = "sigmoid_bce"

_ARCH_CODES = {ARCH_LINEAR: 1, ARCH_MLP: 2}
_CODE_ARCHS = {v: k for k, v in _ARCH_CODES.items()}

CHECKPOINT_MAGIC = b"PVTM"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sHHIIIH")
_FLAG_FEEDBACK = 1


class CheckpointFormatError(ValueError):
    """Raised when a checkpoint file is malformed."""


@dataclass
class ModelParams:
    arch: str
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray | None = None
    b2: np.ndarray | None = None

    def __post_init__(self):
        if self.arch not in _ARCH_CODES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        self.W1 = np.asarray(self.W1, dtype=float)
        self.b1 = np.asarray(self.b1, dtype=float)
        if self.W1.ndim != 2 or self.b1.shape != (self.W1.shape[0],):
            raise ValueError("W1 must be 2-D with b1 matching its rows")
        if self.arch == ARCH_MLP:
            if self.W2 is None or self.b2 is None:
                raise ValueError("mlp_2layer requires W2 and b2")
            self.W2 = np.asarray(self.W2, dtype=float)
            self.b2 = np.asarray(self.b2, dtype=float)
            if self.W2.ndim != 2 or self.W2.shape[1] != self.W1.shape[0]:
                raise ValueError("W2 columns must match hidden width")
            if self.b2.shape != (self.W2.shape[0],):
                raise ValueError("b2 must match W2 rows")
        elif self.W2 is not None or self.b2 is not None:
            raise ValueError("linear_1layer takes no second layer")
        for block in self._blocks():
            if not np.all(np.isfinite(block)):
                raise ValueError("model parameters must be finite")

    def _blocks(self) -> list[np.ndarray]:
        if self.arch == ARCH_LINEAR:
            return [self.W1, self.b1]
        return [self.W1, self.b1, self.W2, self.b2]

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int | None:
        return self.W1.shape[0] if self.arch == ARCH_MLP else None

    @property
    def classes(self) -> int:
        return self.W1.shape[0] if self.arch == ARCH_LINEAR else self.W2.shape[0]

    @property
    def num_params(self) -> int:
        return int(sum(b.size for b in self._blocks()))

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.arch,
            self.W1.copy(),
            self.b1.copy(),
            None if self.W2 is None else self.W2.copy(),
            None if self.b2 is None else self.b2.copy(),
        )


@dataclass(frozen=True)
class FeedbackMatrix:
    """Fixed random error-transport matrix B (hidden x classes).

    Drawn once per training run and never updated; treat the array as
    immutable.
    """

    B: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        if B.ndim != 2:
            raise ValueError("feedback matrix must be 2-D (hidden x classes)")
        if not np.all(np.isfinite(B)):
            raise ValueError("feedback matrix must be finite")
        object.__setattr__(self, "B", B)

    @property
    def spectral_norm(self) -> float:
        return float(np.linalg.norm(self.B, ord=2))

    def scaled_to(self, target_spectral_norm: float) -> "FeedbackMatrix":
        if target_spectral_norm <= 0:
            raise ValueError("target spectral norm must be > 0")
        current = self.spectral_norm
        if current == 0:
            raise ValueError("cannot rescale an all-zero feedback matrix")
        return FeedbackMatrix(self.B * (target_spectral_norm / current))


def init_linear(in_dim: int, classes: int, rng: np.random.Generator) -> ModelParams:
    """Uniform(-s, s) init with s = 1/sqrt(fan_in)."""
    s = 1.0 / np.sqrt(in_dim)
    return ModelParams(
        ARCH_LINEAR,
        rng.uniform(-s, s, size=(classes, in_dim)),
        np.zeros(classes),
    )


def init_mlp(
    in_dim: int, hidden: int, classes: int, rng: np.random.Generator
) -> ModelParams:
    s1 = 1.0 / np.sqrt(in_dim)
    s2 = 1.0 / np.sqrt(hidden)
    return ModelParams(
        ARCH_MLP,
        rng.uniform(-s1, s1, size=(hidden, in_dim)),
        np.zeros(hidden),
        rng.uniform(-s2, s2, size=(classes, hidden)),
        np.zeros(classes),
    )


def draw_feedback(
    hidden: int,
    classes: int,
    rng: np.random.Generator,
    entry_std: float | None = None,
) -> FeedbackMatrix:
    """Normal(0, entry_std^2) feedback entries; default std 1/sqrt(classes)."""
    std = 1.0 / np.sqrt(classes) if entry_std is None else entry_std
    if std <= 0:
        raise ValueError("feedback entry std must be > 0")
    return FeedbackMatrix(std * rng.standard_normal((hidden, classes)))


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return special.expit(z)


def _onehot(label: int | np.ndarray, classes: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(label, dtype=int))
    if np.any(labels < 0) or np.any(labels >= classes):
        raise ValueError(f"label out of range for {classes} classes")
    out = np.zeros((labels.size, classes))
    out[np.arange(labels.size), labels] = 1.0
    return out if np.ndim(label) else out[0]


def linear_logits(params: ModelParams, X: np.ndarray) -> np.ndarray:
    return X @ params.W1.T + params.b1


def mlp_hidden_and_logits(
    params: ModelParams, X: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    H = np.tanh(X @ params.W1.T + params.b1)
    return H, H @ params.W2.T + params.b2


def output_logits(params: ModelParams, X: np.ndarray) -> np.ndarray:
    if params.arch == ARCH_LINEAR:
        return linear_logits(params, X)
    return mlp_hidden_and_logits(params, X)[1]


def linear_forward(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Class probabilities softmax(W1 x + b1) of the linear classifier."""
    if params.arch != ARCH_LINEAR:
        raise ValueError("linear_forward requires a linear_1layer model")
    x = np.asarray(features, dtype=float)
    if x.shape[-1] != params.in_dim:
        raise ValueError(f"expected feature dim {params.in_dim}, got {x.shape[-1]}")
    return softmax(linear_logits(params, x))


def mlp_forward(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Per-class sigmoid outputs of the 2-layer Tanh/Sigmoid MLP."""
    if params.arch != ARCH_MLP:
        raise ValueError("mlp_forward requires an mlp_2layer model")
    x = np.asarray(features, dtype=float)
    if x.shape[-1] != params.in_dim:
        raise ValueError(f"expected feature dim {params.in_dim}, got {x.shape[-1]}")
    return sigmoid(mlp_hidden_and_logits(params, x)[1])


def predict(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Predicted labels: argmax of the output layer (monotone in logits)."""
    return np.argmax(output_logits(params, np.asarray(X, dtype=float)), axis=-1)


def _per_example_loss(logits: np.ndarray, Y: np.ndarray, loss: str) -> np.ndarray:
    onehot = _onehot(Y, logits.shape[-1])
    if loss == LOSS_SOFTMAX_CE:
        lse = special.logsumexp(logits, axis=-1)
        picked = np.sum(logits * onehot, axis=-1)
        return lse - picked
    if loss == LOSS_SIGMOID_BCE:
        # one-vs-all BCE summed over classes; softplus keeps it finite for
        # logits up to +-1e3
        softplus = np.logaddexp(0.0, logits)
        return np.sum(softplus - onehot * logits, axis=-1)
    raise ValueError(f"unknown loss {loss!r}")


def batch_loss(params: ModelParams, X: np.ndarray, Y: np.ndarray, loss: str) -> float:
    """Mean per-sample loss over a batch."""
    logits = output_logits(params, np.asarray(X, dtype=float))
    return float(np.mean(_per_example_loss(logits, np.asarray(Y), loss)))


def per_sample_loss(
    params: ModelParams, features: np.ndarray, label: int, loss: str
) -> float:
    logits = output_logits(params, np.asarray(features, dtype=float))
    return float(_per_example_loss(logits[None, :], np.asarray([label]), loss)[0])


def batch_accuracy(params: ModelParams, X: np.ndarray, Y: np.ndarray) -> float:
    return float(np.mean(predict(params, X) == np.asarray(Y)))


def _output_error(logits: np.ndarray, Y: np.ndarray, loss: str) -> np.ndarray:
    # dL/dz for both losses: activation(z) - onehot(y)
    onehot = _onehot(Y, logits.shape[-1])
    if loss == LOSS_SOFTMAX_CE:
        return softmax(logits) - onehot
    if loss == LOSS_SIGMOID_BCE:
        return sigmoid(logits) - onehot
    raise ValueError(f"unknown loss {loss!r}")


def grad_factors(
    params: ModelParams, X: np.ndarray, Y: np.ndarray, loss: str
) -> list[tuple[np.ndarray, np.ndarray | None]]:
    """Per-sample gradient factors for a batch, in flattening order.

    Each entry is (left, right) with the sample-i gradient block equal to
    outer(left[i], right[i]), or (left, None) for bias blocks. Keeping the
    rank-1 factors avoids materializing per-sample gradients; clipped sums
    and norms are assembled from the factors.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_1d(np.asarray(Y, dtype=int))
    if params.arch == ARCH_LINEAR:
        dz = _output_error(linear_logits(params, X), Y, loss)
        return [(dz, X), (dz, None)]
    H, Z2 = mlp_hidden_and_logits(params, X)
    dz2 = _output_error(Z2, Y, loss)
    dz1 = (dz2 @ params.W2) * (1.0 - H * H)
    return [(dz1, X), (dz1, None), (dz2, H), (dz2, None)]


def dfa_factors(
    params: ModelParams,
    feedback: FeedbackMatrix,
    X: np.ndarray,
    Y: np.ndarray,
    activation_clip: float | None = None,
    error_clip: float | None = None,
) -> list[tuple[np.ndarray, np.ndarray | None]]:
    """Per-sample DFA update-direction factors for the 2-layer MLP.

    The output error e = sigmoid(z2) - onehot(y) and the hidden activations
    are L2-clipped per sample (when thresholds are given) right after the
    forward pass; the hidden direction is (B e) * tanh'(z1) in place of the
    backpropagated error. The output-layer blocks use the clipped factors.
    """
    if params.arch != ARCH_MLP:
        raise ValueError("DFA directions require an mlp_2layer model")
    if feedback.B.shape != (params.W1.shape[0], params.classes):
        raise ValueError("feedback matrix shape must be (hidden, classes)")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_1d(np.asarray(Y, dtype=int))
    H, Z2 = mlp_hidden_and_logits(params, X)
    E = _output_error(Z2, Y, LOSS_SIGMOID_BCE)
    H_c = _clip_rows(H, activation_clip)
    E_c = _clip_rows(E, error_clip)
    dz1 = (E_c @ feedback.B.T) * (1.0 - H * H)
    return [(dz1, X), (dz1, None), (E_c, H_c), (E_c, None)]


def _clip_rows(M: np.ndarray, threshold: float | None) -> np.ndarray:
    if threshold is None:
        return M
    if threshold <= 0:
        raise ValueError(f"clip threshold must be > 0, got {threshold}")
    norms = np.linalg.norm(M, axis=1)
    scale = np.minimum(1.0, threshold / np.maximum(norms, 1e-300))
    return M * scale[:, None]


def clip_activations_and_error(
    hidden_activations: np.ndarray,
    error_signal: np.ndarray,
    thresholds: tuple[float, float],
) -> tuple[np.ndarray, np.ndarray]:
    """Independently L2-clip a hidden-activation and an error vector."""
    act_thr, err_thr = thresholds
    return (
        clip_l2(hidden_activations, ClipSpec(act_thr)),
        clip_l2(error_signal, ClipSpec(err_thr)),
    )


def factor_norms(blocks: list[tuple[np.ndarray, np.ndarray | None]]) -> np.ndarray:
    """Joint per-sample L2 norms over all blocks: ||outer(a,b)||_F = ||a|| ||b||."""
    total = None
    for left, right in blocks:
        sq = np.sum(left * left, axis=1)
        if right is not None:
            sq = sq * np.sum(right * right, axis=1)
        total = sq if total is None else total + sq
    return np.sqrt(total)


def assemble_scaled_sum(
    blocks: list[tuple[np.ndarray, np.ndarray | None]], scales: np.ndarray
) -> np.ndarray:
    """Flat sum over samples of scaled per-sample gradients.

    sum_i s_i outer(a_i, b_i) = (s * a)^T b, assembled block by block in
    flattening order without materializing per-sample gradients.
    """
    parts = []
    for left, right in blocks:
        scaled = left * scales[:, None]
        if right is None:
            parts.append(np.sum(scaled, axis=0))
        else:
            parts.append((scaled.T @ right).ravel())
    return np.concatenate(parts)


def per_sample_grad(
    params: ModelParams, features: np.ndarray, label: int, loss: str
) -> np.ndarray:
    """Exact analytic gradient of one sample's loss, flattened.

    Ordering (W1 row-major, b1, W2 row-major, b2); this is the vector the
    clipping threshold constrains.
    """
    blocks = grad_factors(params, features[None, :], np.asarray([label]), loss)
    return _flatten_blocks(blocks)


def dfa_directions(
    params: ModelParams,
    feedback: FeedbackMatrix,
    features: np.ndarray,
    label: int,
    activation_clip: float | None = None,
    error_clip: float | None = None,
) -> np.ndarray:
    """One sample's DFA update direction, flattened like per_sample_grad."""
    blocks = dfa_factors(
        params, feedback, features[None, :], np.asarray([label]),
        activation_clip, error_clip,
    )
    return _flatten_blocks(blocks)


def _flatten_blocks(blocks: list[tuple[np.ndarray, np.ndarray | None]]) -> np.ndarray:
    parts = []
    for left, right in blocks:
        if right is None:
            parts.append(left[0])
        else:
            parts.append(np.outer(left[0], right[0]).ravel())
    return np.concatenate(parts)


def flatten_params(params: ModelParams) -> np.ndarray:
    return np.concatenate([b.ravel() for b in params._blocks()])


def unflatten_params(template: ModelParams, flat: np.ndarray) -> ModelParams:
    if flat.shape != (template.num_params,):
        raise ValueError(f"expected flat vector of length {template.num_params}")
    out = []
    offset = 0
    for block in template._blocks():
        out.append(flat[offset : offset + block.size].reshape(block.shape))
        offset += block.size
    if template.arch == ARCH_LINEAR:
        return ModelParams(template.arch, out[0], out[1])
    return ModelParams(template.arch, out[0], out[1], out[2], out[3])


def save_checkpoint(
    params: ModelParams, path, feedback: FeedbackMatrix | None = None
) -> None:
    hidden = params.hidden_dim or 0
    flags = _FLAG_FEEDBACK if feedback is not None else 0
    header = _HEADER.pack(
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        _ARCH_CODES[params.arch],
        params.in_dim,
        hidden,
        params.classes,
        flags,
    )
    payload = flatten_params(params).astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        if feedback is not None:
            fh.write(feedback.B.astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, FeedbackMatrix | None]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise CheckpointFormatError("checkpoint truncated before header")
    magic, version, arch_code, in_dim, hidden, classes, flags = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    if arch_code not in _CODE_ARCHS:
        raise CheckpointFormatError(f"unknown architecture code {arch_code}")
    arch = _CODE_ARCHS[arch_code]
    if arch == ARCH_LINEAR:
        shapes = [(classes, in_dim), (classes,)]
    else:
        shapes = [(hidden, in_dim), (hidden,), (classes, hidden), (classes,)]
    n_params = sum(int(np.prod(s)) for s in shapes)
    expected = _HEADER.size + 4 * n_params
    if flags & _FLAG_FEEDBACK:
        expected += 4 * hidden * classes
    if len(raw) != expected:
        raise CheckpointFormatError(
            f"checkpoint length {len(raw)} does not match header (want {expected})"
        )
    flat = np.frombuffer(
        raw, dtype="<f4", count=n_params, offset=_HEADER.size
    ).astype(float)
    blocks = []
    offset = 0
    for s in shapes:
        size = int(np.prod(s))
        blocks.append(flat[offset : offset + size].reshape(s))
        offset += size
    if arch == ARCH_LINEAR:
        params = ModelParams(arch, blocks[0], blocks[1])
    else:
        params = ModelParams(arch, blocks[0], blocks[1], blocks[2], blocks[3])
    feedback = None
    if flags & _FLAG_FEEDBACK:
        fb = np.frombuffer(
            raw, dtype="<f4", count=hidden * classes,
            offset=_HEADER.size + 4 * n_params,
        ).astype(float)
        feedback = FeedbackMatrix(fb.reshape(hidden, classes))
    return params, feedback
