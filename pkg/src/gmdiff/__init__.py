"""gmdiff: categorical sequence generation by diffusion over Gaussian-mixture latents.

Pipeline: pack K category means on the unit hypersphere (geometry), encode
symbol sequences into a continuous latent space (codec), train a
time-conditioned predictor on the collapsed diffusion objective (diffusion,
predictor, training), draw new sequences by ancestral sampling through the
structured mixture denoiser (sampling), and score them against exact or
empirical ground truth (synthdata, metrics).
"""

from .geometry import (
    PackingConfig,
    PackingResult,
    encoder_sigma,
    load_packing,
    pack_sphere,
    packing_energy,
    perturb,
    save_packing,
)
from .codec import (
    Alphabet,
    decode_map,
    decode_probs,
    encode,
    load_alphabet,
    load_dataset,
    save_alphabet,
    save_dataset,
)
from .diffusion import (
    GaussianParams,
    NoiseSchedule,
    augmentation_dist,
    category_posterior,
    denoise_log_density,
    forward_posterior,
    forward_sample,
    gaussian_kl_isotropic,
    linear_schedule,
    mixture_weights,
)
from .predictor import (
    PredictorConfig,
    PredictorParams,
    init_params,
    loss_and_grad,
    predict,
    time_embed,
    update,
)
from .training import TrainConfig, TrainReport, fit, overfit_monitor, train_step, validation_loss
from .sampling import SampleRequest, SampleResult, entropy_trajectory, sample_many, sample_one
from .synthdata import GroundTruth, partition_of, sample_truth, truth_partition_masses, truth_pmf
from .metrics import (
    EmpiricalPmf,
    MetricsReport,
    PatternSpec,
    evaluate_patterns,
    evaluate_synthetic,
    hellinger,
    partition_mass,
    pattern_covariation,
    pearson,
    poissonized_empirical,
    select_patterns,
    tv_distance,
    tv_restricted,
)
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"
