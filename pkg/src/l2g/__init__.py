"""Local-to-global attention transfer for weakly supervised segmentation,
trained and evaluated end to end on a deterministic synthetic shapes dataset.
"""

from .attention import AttentionMaps, aggregate_windows, cam, multi_scale_attention
from .config import RunConfig
from .data import GenConfig, Sample, build_dataset, gen_sample, read_dataset, write_dataset
from .labels import IoUReport, confusion_matrix, miou, pseudo_labels
from .losses import (LossReport, attention_transfer_loss, classification_loss,
                     global_softmax, shape_transfer_loss, total_loss)
from .model import Network, NetworkConfig, build_network, forward_features
from .optim import OptimState, make_sgd, sgd_step
from .rng import Rng, stream
from .tensor import Tensor, backward, no_grad
from .views import Rect, ViewSet, sliding_window_rects

__version__ = "0.1.0"
