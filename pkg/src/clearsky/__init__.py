"""Continual all-in-one adverse-weather image restoration with knowledge replay."""

from .backbone import (
    BackboneConfig,
    FeatureMap,
    RestorationModel,
    build_model,
    clone_model,
    extract_features,
    restore,
    restore_image,
)
from .config import RunConfig, PRESETS
from .imaging import (
    Dataset,
    DegradationParams,
    Image,
    SamplePair,
    crop_patches,
    load_dataset,
    save_dataset,
    synthesize_haze,
    synthesize_rain,
    synthesize_snow,
)
from .losses import (
    ContrastiveConfig,
    LossWeights,
    contrastive_loss,
    knowledge_replay_loss,
    l1_loss,
    principal_kd_loss,
    single_weather_loss,
    total_loss,
)
from .metrics import MetricRow, aggregate, psnr, ssim
from .perceptual import PerceptualPyramid, extract_pyramid
from .projector import (
    PrincipalProjector,
    ProjectorConfig,
    build_projector,
    decode,
    mhta_encode,
    train_autoencoder,
)
from .replay import ReplayBuffer
from .trainer import TaskReport, evaluate, run_sequence

__version__ = "0.1.0"
