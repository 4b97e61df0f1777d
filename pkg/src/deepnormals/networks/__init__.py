from .architecture import WINDOW, HeadSpec, NetworkKind, NetworkSpec, build_network
from .estimators import (BaselineRegressionNetwork, BottomUpNetwork, FusionNetwork,
                         TopDownNetwork, infer_topdown, preprocess_image, resize_image)
from .model import Network, baseline_regression_loss
from .sliding import WindowGrid, infer_sliding
from .training import TrainConfig, TrainingError, TrainResult, train_joint

__all__ = ["BaselineRegressionNetwork", "BottomUpNetwork", "FusionNetwork", "HeadSpec", "Network",
           "NetworkKind", "NetworkSpec", "TopDownNetwork", "TrainConfig", "TrainResult",
           "TrainingError", "WINDOW", "WindowGrid", "baseline_regression_loss", "build_network",
           "infer_sliding", "infer_topdown", "preprocess_image", "resize_image", "train_joint"]
