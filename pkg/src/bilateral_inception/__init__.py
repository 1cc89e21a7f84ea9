"""Multi-scale Gaussian bilateral filtering between superpixels, with the
SLIC and clustering machinery needed to run toy segmentation experiments."""

from .bilateral import (
    BilateralGradients,
    BilateralKernel,
    build_kernel,
    filter_backward,
    filter_forward,
    pairwise_sq_dists,
)
from .errors import (
    BilateralInceptionError,
    ChecksumError,
    FileFormatError,
    InvalidArgumentError,
    TrainingDivergedError,
    VerificationError,
)
from .inception import (
    InceptionParams,
    inception_backward,
    inception_forward,
    inception_pair,
    init_params,
    load_params,
    save_params,
    theta_ladder,
)
from .network import REGIMES, Adam, DenseLayer, InceptionLayer, ToyNet, grad_check, softmax_xent
from .slic import slic
from .superpixel import (
    FeatureKind,
    LabelMap,
    Partition,
    agglomerative_merge,
    majority_labels,
    mean_features,
    mean_iou,
    project_labels,
    quantization_error,
)
from .training import (
    cluster_sweep,
    evaluate,
    load_checkpoint,
    regime_comparison,
    save_checkpoint,
    train_toy,
)

__version__ = "0.1.0"
