"""Differentially private training of shallow classifiers on fixed features."""

__version__ = "0.1.0"

from .accountant import (
    DEFAULT_ALPHAS,
    MechanismEvent,
    PrivacyBudget,
    RdpProfile,
    account_training,
    compose,
    rdp_gaussian,
    rdp_subsampled_gaussian,
    sigma_for_epsilon,
    to_eps_delta,
)
from .dataio import FeatureDataset, read_features, write_features
from .features import (
    AugmentSpec,
    DctFilterBank,
    augment_single_image,
    build_dct_bank,
    extract_batch,
    harmonic_extract,
)
from .mechanisms import (
    ClipSpec,
    NoiseSpec,
    VoteHistogram,
    clip_l2,
    gaussian_perturb,
    noisy_argmax,
    poisson_sample,
)
from .models import (
    FeedbackMatrix,
    ModelParams,
    clip_activations_and_error,
    dfa_directions,
    draw_feedback,
    init_linear,
    init_mlp,
    linear_forward,
    load_checkpoint,
    mlp_forward,
    per_sample_grad,
    predict,
    save_checkpoint,
)
from .rng import derive_seed, substream
from .trainers import (
    DfaConfig,
    PateConfig,
    TrainerConfig,
    TrainingTrace,
    sgld_param_map,
    train_dpdfa,
    train_dpsgd,
    train_dpsgld,
    train_pate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
