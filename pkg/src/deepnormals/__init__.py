"""Surface normal estimation from single images with coarse, local and fused networks."""
from .coding import EdgeLabel, LayoutCodebook, NormalCodebook
from .config import PipelineConfig
from .fusion import FeatureStack, assemble, fuse_predict
from .metrics import EvalSummary, evaluate, summarize
from .networks import BottomUpNetwork, FusionNetwork, TopDownNetwork, build_network
from .normalmap import NormalMap
from .pipeline import Study, StudyConfig

__version__ = "0.1.0"

__all__ = ["BottomUpNetwork", "EdgeLabel", "EvalSummary", "FeatureStack", "FusionNetwork",
           "LayoutCodebook", "NormalCodebook", "NormalMap", "PipelineConfig", "Study", "StudyConfig",
           "TopDownNetwork", "assemble", "build_network", "evaluate", "fuse_predict", "summarize"]
