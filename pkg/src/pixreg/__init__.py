"""Graph-based smoothing, graph Laplacian and Euler-characteristic regularizers
for binary pixel segmentation, with a small numpy U-Net to train them on."""

from .grid_graph import Connectivity, GridShape, build_grid_edges, laplacian_from_edges, quadratic_form
from .metrics import MetricsReport, metrics_report
from .regularizers import (
    EcDirection,
    Normalize,
    ObjectiveKind,
    RegularizerConfig,
    bce_value_grad,
    ec_regularizer,
    euler_characteristic_hard,
    euler_characteristic_soft,
    gbs_value_grad,
    glrdn_value_grad,
    objective,
)
from .segnet import NetworkSpec
from .trainer import TrainConfig, evaluate, train, train_on_samples

__version__ = "0.1.0"
