"""DP training loops: DPSGD, DPSGLD, DPDFA, and PATE.

All four couple the shallow models, the clipping/noise/sampling
primitives, and the RDP accountant, and emit a per-epoch trace of
(train loss, test accuracy, cumulative epsilon at the configured delta).

One run owns one base seed (``config.noise.seed``); every random draw
comes from a named substream of it (``batch``/``noise`` per step,
``feedback``, ``shards``, ``teacher``, ``agg``, ``student``), so runs are
reproducible bit-for-bit and empty Poisson batches never shift stream
positions. Per-sample work inside a step is vectorized; sums reduce in a
fixed order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import models
from .accountant import (
    DEFAULT_ALPHAS,
    GAUSSIAN_NOISY_MAX,
    SUBSAMPLED_GAUSSIAN,
    MechanismEvent,
    compose,
    to_eps_delta,
)
from .dataio import FeatureDataset
from .mechanisms import ClipSpec, NoiseSpec, gaussian_perturb, poisson_sample, \
    noisy_argmax, VoteHistogram
from .rng import substream

FRAMEWORK_DPSGD = "dpsgd"
FRAMEWORK_DPSGLD = "dpsgld"
FRAMEWORK_DPDFA = "dpdfa"
FRAMEWORK_PATE = "pate"
FRAMEWORKS = (FRAMEWORK_DPSGD, FRAMEWORK_DPSGLD, FRAMEWORK_DPDFA, FRAMEWORK_PATE)

# Clipping presets: C = 0.1 everywhere, enlarged to 1.0 for large-scale runs.
CLIP_PRESETS = {"default": 0.1, "large_dataset": 1.0}

# Non-private teacher recipe for PATE (fixed, not configurable).
TEACHER_EPOCHS = 50
TEACHER_LR = 0.1


@dataclass(frozen=True)
class DfaConfig:
    """DPDFA extras: activation/error clip thresholds and feedback scaling.

    ``feedback_scale`` is the target spectral norm of the error-transport
    matrix (None keeps the raw draw). ``sync_feedback_to_output`` is a
    diagnostic mode that re-synchronizes B = W2^T every step, reducing DFA
    to backpropagation.
    """

    activation_clip: float | None = 1.0
    error_clip: float | None = 1.0
    feedback_scale: float | None = 1.0
    sync_feedback_to_output: bool = False

    def __post_init__(self):
        for name in ("activation_clip", "error_clip", "feedback_scale"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be > 0 or None, got {value}")


@dataclass(frozen=True)
class PateConfig:
    """PATE extras: ensemble size, query budget, aggregation noise std.

    ``agg_noise`` is the absolute std of the Gaussian added to each vote
    count (L2 sensitivity of the histogram is sqrt(2)); zero is the
    noiseless test mode with epsilon = +inf.
    """

    teachers: int = 16
    queries: int = 256
    agg_noise: float = 10.0

    def __post_init__(self):
        if self.teachers < 2:
            raise ValueError("PATE needs at least 2 teachers")
        if self.queries < 1:
            raise ValueError("PATE needs at least 1 query")
        if self.agg_noise < 0:
            raise ValueError("agg_noise must be >= 0")


@dataclass(frozen=True)
class TrainerConfig:
    framework: str
    clip: ClipSpec = field(default_factory=lambda: ClipSpec(CLIP_PRESETS["default"]))
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec(sigma=1.0, seed=0))
    lr: float = 1.0
    expected_batch: int = 256
    epochs: int = 10
    delta: float = 1e-5
    dfa: DfaConfig | None = None
    pate: PateConfig | None = None

    def __post_init__(self):
        if self.framework not in FRAMEWORKS:
            raise ValueError(f"unknown framework {self.framework!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if self.expected_batch < 1:
            raise ValueError("expected_batch must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.framework == FRAMEWORK_DPDFA and self.dfa is None:
            object.__setattr__(self, "dfa", DfaConfig())
        if self.framework == FRAMEWORK_PATE and self.pate is None:
            object.__setattr__(self, "pate", PateConfig())

    @property
    def seed(self) -> int:
        return self.noise.seed


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    test_accuracy: float
    epsilon: float


@dataclass
class TrainingTrace:
    delta: float
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epsilon < self.records[-1].epsilon:
            raise ValueError("epsilon must be non-decreasing across epochs")
        self.records.append(record)

    @property
    def final_epsilon(self) -> float:
        return self.records[-1].epsilon if self.records else 0.0

    def best_accuracy(self, max_epsilon: float | None = None) -> float:
        accs = [
            r.test_accuracy
            for r in self.records
            if max_epsilon is None or r.epsilon <= max_epsilon
        ]
        return max(accs) if accs else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch,loss,test_acc,epsilon\n")
            for r in self.records:
                fh.write(
                    f"{r.epoch},{r.train_loss!r},{r.test_accuracy!r},{r.epsilon!r}\n"
                )

    def to_json(self) -> dict:
        return {
            "delta": self.delta,
            "records": [
                {
                    "epoch": r.epoch,
                    "loss": r.train_loss,
                    "test_acc": r.test_accuracy,
                    "epsilon": r.epsilon,
                }
                for r in self.records
            ],
        }


class StepStats(NamedTuple):
    """Per-step instrumentation payload (test hook)."""

    epoch: int
    step: int
    batch_size: int
    contribution_norms: np.ndarray  # post-clip per-sample L2 norms


Instrument = Callable[[StepStats], None]


class SgldMappedParams(NamedTuple):
    lr: float
    sigma: float
    clip: float


def sgld_param_map(
    eta_sgld: float, clip: float, batch: int, n: int
) -> SgldMappedParams:
    """DPSGD parameters equivalent to DPSGLD(eta, C) on N samples.

    lr_sgd = eta * N, sigma_sgd = |B| / (N sqrt(eta) C), clip unchanged.
    """
    if eta_sgld <= 0 or clip <= 0 or batch <= 0 or n <= 0:
        raise ValueError("sgld_param_map inputs must be positive")
    if batch > n:
        raise ValueError("batch size cannot exceed the dataset size")
    return SgldMappedParams(
        lr=eta_sgld * n,
        sigma=batch / (n * math.sqrt(eta_sgld) * clip),
        clip=clip,
    )


def _loss_for_arch(arch: str) -> str:
    return models.LOSS_SOFTMAX_CE if arch == models.ARCH_LINEAR else \
        models.LOSS_SIGMOID_BCE


def _check_dataset(dataset: FeatureDataset, params: models.ModelParams) -> None:
    if not dataset.labeled:
        raise ValueError("training requires a labeled dataset")
    if dataset.dim != params.in_dim:
        raise ValueError(
            f"dataset dim {dataset.dim} does not match model dim {params.in_dim}"
        )
    if dataset.classes != params.classes:
        raise ValueError(
            f"dataset classes {dataset.classes} do not match model {params.classes}"
        )


def _steps_per_epoch(n: int, batch: int) -> int:
    return max(1, math.ceil(n / batch))


def _epsilon_schedule(
    q: float, sigma: float, delta: float
) -> Callable[[int], float]:
    """Map executed step count -> converted epsilon, caching the step profile."""
    zero = to_eps_delta(compose([], DEFAULT_ALPHAS), delta).epsilon
    if sigma == 0:
        return lambda steps: zero if steps == 0 else math.inf
    event = MechanismEvent(
        kind=SUBSAMPLED_GAUSSIAN, sigma=sigma, sampling_rate=q, count=1
    )
    step_eps = np.asarray(compose([event], DEFAULT_ALPHAS).eps_at_alpha)
    alphas = np.asarray(DEFAULT_ALPHAS, dtype=float)
    log_inv_delta = math.log(1.0 / delta)

    def eps_at(steps: int) -> float:
        if steps == 0:
            return zero
        return float(np.min(steps * step_eps + log_inv_delta / (alphas - 1.0)))

    return eps_at


def _eval_record(
    epoch: int,
    params: models.ModelParams,
    dataset: FeatureDataset,
    test_set: FeatureDataset,
    loss: str,
    epsilon: float,
) -> EpochRecord:
    train_loss = models.batch_loss(params, dataset.features, dataset.labels, loss)
    if not math.isfinite(train_loss):
        raise RuntimeError(
            f"non-finite training loss at epoch {epoch}; "
            "lower the learning rate or raise sigma"
        )
    acc = models.batch_accuracy(params, test_set.features, test_set.labels)
    return EpochRecord(epoch, train_loss, acc, epsilon)


def _clip_scales(norms: np.ndarray, clip: float) -> np.ndarray:
    return np.minimum(1.0, clip / np.maximum(norms, 1e-300))


def _dp_sum_step(
    blocks: list,
    clip: float,
    instrument: Instrument | None,
    epoch: int,
    step: int,
) -> np.ndarray:
    norms = models.factor_norms(blocks)
    scales = _clip_scales(norms, clip)
    if instrument is not None:
        instrument(
            StepStats(epoch, step, norms.size, np.minimum(norms, clip))
        )
    return models.assemble_scaled_sum(blocks, scales)


def _check_finite(flat: np.ndarray, framework: str, epoch: int, step: int) -> None:
    if not np.all(np.isfinite(flat)):
        raise RuntimeError(
            f"{framework}: non-finite parameters at epoch {epoch} step {step}; "
            "lower the learning rate or raise sigma"
        )


def train_dpsgd(
    dataset: FeatureDataset,
    model: models.ModelParams,
    config: TrainerConfig,
    test_set: FeatureDataset,
    instrument: Instrument | None = None,
) -> tuple[models.ModelParams, TrainingTrace]:
    """Poisson batches, per-sample clipping to C, Gaussian noise std sigma*C,
    update w <- w - (lr/|B|) * noisy sum."""
    if config.framework != FRAMEWORK_DPSGD:
        raise ValueError("config.framework must be 'dpsgd'")
    return _gradient_perturbation_loop(
        dataset, model, config, test_set,
        lr_eff=config.lr, sigma_eff=config.noise.sigma,
        factors=None, instrument=instrument, framework=FRAMEWORK_DPSGD,
    )


def train_dpsgld(
    dataset: FeatureDataset,
    model: models.ModelParams,
    config: TrainerConfig,
    test_set: FeatureDataset,
    instrument: Instrument | None = None,
) -> tuple[models.ModelParams, TrainingTrace]:
    """Native DP Langevin update with per-sample clipping.

    w <- w - (lr N / |B|) * sum_i clip(g_i, C) + sqrt(lr) * xi with
    xi ~ Normal(0, I). Privacy is accounted exactly as the mapped DPSGD
    run (sigma from sgld_param_map), which this trajectory reproduces
    step for step under shared streams.
    """
    if config.framework != FRAMEWORK_DPSGLD:
        raise ValueError("config.framework must be 'dpsgld'")
    params = model.copy()
    _check_dataset(dataset, params)
    _check_dataset(test_set, params)
    n = dataset.n
    if config.expected_batch > n:
        raise ValueError("expected_batch cannot exceed the dataset size")
    mapped = sgld_param_map(config.lr, config.clip.threshold, config.expected_batch, n)
    loss = _loss_for_arch(params.arch)
    q = config.expected_batch / n
    spe = _steps_per_epoch(n, config.expected_batch)
    eps_at = _epsilon_schedule(q, mapped.sigma, config.delta)
    seed = config.seed
    clip = config.clip.threshold
    lr_step = config.lr * n / config.expected_batch
    langevin_std = math.sqrt(config.lr)
    trace = TrainingTrace(config.delta)
    trace.append(_eval_record(0, params, dataset, test_set, loss, eps_at(0)))
    steps_done = 0
    flat = models.flatten_params(params)
    for epoch in range(1, config.epochs + 1):
        for step in range(1, spe + 1):
            idx = poisson_sample(n, q, substream(seed, "batch", epoch, step))
            steps_done += 1
            if idx.size == 0:
                continue  # skipped but accounted
            blocks = models.grad_factors(
                params, dataset.features[idx], dataset.labels[idx], loss
            )
            total = _dp_sum_step(blocks, clip, instrument, epoch, step)
            # Langevin noise drawn as the negative of the stream draw so a
            # shared-stream run coincides with the mapped DPSGD trajectory
            # (the distribution is symmetric either way).
            u = substream(seed, "noise", epoch, step).standard_normal(flat.size)
            flat = flat - lr_step * total - langevin_std * u
            _check_finite(flat, FRAMEWORK_DPSGLD, epoch, step)
            params = models.unflatten_params(params, flat)
        trace.append(
            _eval_record(epoch, params, dataset, test_set, loss, eps_at(steps_done))
        )
    return params, trace


def train_dpdfa(
    dataset: FeatureDataset,
    model: models.ModelParams,
    config: TrainerConfig,
    test_set: FeatureDataset,
    feedback: models.FeedbackMatrix | None = None,
    instrument: Instrument | None = None,
) -> tuple[models.ModelParams, TrainingTrace]:
    """DFA directions with activation/error clipping and a scaled fixed
    feedback matrix; per-sample directions jointly clipped to C and the
    summed direction perturbed once per step (accounted like DPSGD)."""
    if config.framework != FRAMEWORK_DPDFA:
        raise ValueError("config.framework must be 'dpdfa'")
    if model.arch != models.ARCH_MLP:
        raise ValueError("DPDFA requires an mlp_2layer model")
    dfa = config.dfa
    if feedback is None:
        feedback = models.draw_feedback(
            model.W1.shape[0], model.classes, substream(config.seed, "feedback")
        )
    if dfa.feedback_scale is not None and not dfa.sync_feedback_to_output:
        feedback = feedback.scaled_to(dfa.feedback_scale)

    def factors(params, X, Y):
        fb = (
            models.FeedbackMatrix(params.W2.T)
            if dfa.sync_feedback_to_output
            else feedback
        )
        return models.dfa_factors(
            params, fb, X, Y, dfa.activation_clip, dfa.error_clip
        )

    return _gradient_perturbation_loop(
        dataset, model, config, test_set,
        lr_eff=config.lr, sigma_eff=config.noise.sigma,
        factors=factors, instrument=instrument, framework=FRAMEWORK_DPDFA,
    )


def _gradient_perturbation_loop(
    dataset: FeatureDataset,
    model: models.ModelParams,
    config: TrainerConfig,
    test_set: FeatureDataset,
    *,
    lr_eff: float,
    sigma_eff: float,
    factors,
    instrument: Instrument | None,
    framework: str,
) -> tuple[models.ModelParams, TrainingTrace]:
    params = model.copy()
    _check_dataset(dataset, params)
    _check_dataset(test_set, params)
    n = dataset.n
    if config.expected_batch > n:
        raise ValueError("expected_batch cannot exceed the dataset size")
    loss = _loss_for_arch(params.arch)
    if factors is None:
        def factors(p, X, Y):
            return models.grad_factors(p, X, Y, loss)
    q = config.expected_batch / n
    spe = _steps_per_epoch(n, config.expected_batch)
    eps_at = _epsilon_schedule(q, sigma_eff, config.delta)
    seed = config.seed
    clip = config.clip.threshold
    noise = NoiseSpec(sigma=sigma_eff, seed=seed)
    trace = TrainingTrace(config.delta)
    trace.append(_eval_record(0, params, dataset, test_set, loss, eps_at(0)))
    steps_done = 0
    flat = models.flatten_params(params)
    for epoch in range(1, config.epochs + 1):
        for step in range(1, spe + 1):
            idx = poisson_sample(n, q, substream(seed, "batch", epoch, step))
            steps_done += 1
            if idx.size == 0:
                continue  # skipped but accounted
            blocks = factors(params, dataset.features[idx], dataset.labels[idx])
            total = _dp_sum_step(blocks, clip, instrument, epoch, step)
            noisy = gaussian_perturb(
                total, noise, clip, substream(seed, "noise", epoch, step)
            )
            flat = flat - (lr_eff / config.expected_batch) * noisy
            _check_finite(flat, framework, epoch, step)
            params = models.unflatten_params(params, flat)
        trace.append(
            _eval_record(epoch, params, dataset, test_set, loss, eps_at(steps_done))
        )
    return params, trace


def _train_plain_linear(
    X: np.ndarray,
    Y: np.ndarray,
    classes: int,
    rng: np.random.Generator,
    epochs: int = TEACHER_EPOCHS,
    lr: float = TEACHER_LR,
    on_epoch: Callable[[int, models.ModelParams], None] | None = None,
) -> models.ModelParams:
    """Non-private full-batch softmax regression (teachers and student)."""
    params = models.init_linear(X.shape[1], classes, rng)
    onehot = np.zeros((Y.size, classes))
    onehot[np.arange(Y.size), Y] = 1.0
    W, b = params.W1, params.b1
    for epoch in range(1, epochs + 1):
        P = models.softmax(X @ W.T + b)
        G = (P - onehot) / X.shape[0]
        W = W - lr * (G.T @ X)
        b = b - lr * G.sum(axis=0)
        if on_epoch is not None:
            on_epoch(epoch, models.ModelParams(models.ARCH_LINEAR, W, b))
    return models.ModelParams(models.ARCH_LINEAR, W, b)


def pate_shards(n: int, teachers: int, seed: int) -> list[np.ndarray]:
    """Disjoint equal teacher shards (seeded shuffle, remainder dropped)."""
    if teachers < 2:
        raise ValueError("PATE needs at least 2 teachers")
    if teachers > n:
        raise ValueError("more teachers than private samples")
    perm = substream(seed, "shards").permutation(n)
    size = n // teachers
    return [np.sort(perm[t * size : (t + 1) * size]) for t in range(teachers)]


def pate_aggregate(
    votes: np.ndarray, classes: int, agg_noise: float, seed: int
) -> np.ndarray:
    """Noisy-argmax label release from a (teachers, queries) vote matrix."""
    votes = np.asarray(votes, dtype=int)
    released = np.empty(votes.shape[1], dtype=int)
    for i in range(votes.shape[1]):
        hist = VoteHistogram(tuple(np.bincount(votes[:, i], minlength=classes)))
        released[i] = noisy_argmax(hist, agg_noise, substream(seed, "agg", i))
    return released


def pate_epsilon(queries: int, agg_noise: float, delta: float) -> float:
    """Budget of `queries` Gaussian noisy-max aggregations (sensitivity sqrt 2)."""
    if queries == 0:
        return to_eps_delta(compose([], DEFAULT_ALPHAS), delta).epsilon
    event = MechanismEvent(
        kind=GAUSSIAN_NOISY_MAX,
        sigma=agg_noise / math.sqrt(2.0),
        sensitivity=math.sqrt(2.0),
        count=queries,
    )
    return to_eps_delta(compose([event], DEFAULT_ALPHAS), delta).epsilon


def train_pate(
    private: FeatureDataset,
    public_unlabeled: FeatureDataset | np.ndarray,
    config: TrainerConfig,
    test_set: FeatureDataset,
) -> tuple[models.ModelParams, TrainingTrace]:
    """Teacher ensemble on disjoint shards, noisy-argmax label release,
    non-private student on the released labels.

    Privacy is spent only by the `queries` aggregations; teachers and the
    student train non-privately. The trace has one row per student epoch
    with the (constant) aggregation budget.
    """
    if config.framework != FRAMEWORK_PATE:
        raise ValueError("config.framework must be 'pate'")
    pate = config.pate
    public = (
        public_unlabeled.features
        if isinstance(public_unlabeled, FeatureDataset)
        else np.asarray(public_unlabeled, dtype=np.float32)
    )
    if not private.labeled:
        raise ValueError("the private dataset must be labeled")
    if public.ndim != 2 or public.shape[1] != private.dim:
        raise ValueError("public features must be (M, D) with the private D")
    if pate.queries > public.shape[0]:
        raise ValueError(
            f"{pate.queries} queries exceed the {public.shape[0]} public samples"
        )
    seed = config.seed
    classes = private.classes
    shards = pate_shards(private.n, pate.teachers, seed)
    teachers = [
        _train_plain_linear(
            private.features[shard],
            private.labels[shard],
            classes,
            substream(seed, "teacher", t),
        )
        for t, shard in enumerate(shards)
    ]
    queries = public[: pate.queries]
    votes = np.stack([models.predict(t, queries) for t in teachers])
    released = pate_aggregate(votes, classes, pate.agg_noise, seed)
    epsilon = pate_epsilon(pate.queries, pate.agg_noise, config.delta)

    trace = TrainingTrace(config.delta)
    loss = models.LOSS_SOFTMAX_CE

    def record(epoch: int, params: models.ModelParams) -> None:
        train_loss = models.batch_loss(params, queries, released, loss)
        acc = models.batch_accuracy(params, test_set.features, test_set.labels)
        trace.append(EpochRecord(epoch, train_loss, acc, epsilon))

    init = models.init_linear(private.dim, classes, substream(seed, "student"))
    record(0, init)
    student = _train_plain_linear(
        queries,
        released,
        classes,
        substream(seed, "student"),
        epochs=config.epochs,
        lr=config.lr,
        on_epoch=record,
    )
    return student, trace
