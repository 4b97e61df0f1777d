from .edges import N_EDGE_LABELS, EdgeLabel
from .layouts import LayoutCodebook, build_layout_codebook, layout_distances
from .normals import NormalCodebook, build_normal_codebook

__all__ = [
    "EdgeLabel",
    "N_EDGE_LABELS",
    "LayoutCodebook",
    "NormalCodebook",
    "build_layout_codebook",
    "build_normal_codebook",
    "layout_distances",
]
