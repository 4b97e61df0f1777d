"""Layer layouts of the top-down, bottom-up, fusion and baseline networks."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..engine import LayerSpec, conv, fc, lrn, maxpool, output_shape

WINDOW = 55
TINY_DIVISOR = 8


class NetworkKind(str, enum.Enum):
    TOPDOWN = "topdown"
    BOTTOMUP = "bottomup"
    FUSION = "fusion"
    BASELINE = "baseline"


@dataclass(frozen=True)
class HeadSpec:
    name: str
    layers: tuple[LayerSpec, ...]
    output_shape: tuple[int, ...]
    loss: str = "softmax"          # "softmax" or "neg_dot"
    multiplier: float = 1.0

    @property
    def size(self) -> int:
        n = 1
        for d in self.output_shape:
            n *= d
        return n


@dataclass(frozen=True)
class NetworkSpec:
    kind: NetworkKind
    input_shape: tuple[int, int, int]
    trunk: tuple[LayerSpec, ...]
    heads: tuple[HeadSpec, ...]
    tiny: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def head(self, name: str) -> HeadSpec:
        for h in self.heads:
            if h.name == name:
                return h
        raise KeyError(name)

    def trunk_output_shape(self) -> tuple[int, ...]:
        shape = self.input_shape
        for spec in self.trunk:
            shape = output_shape(spec, shape)
        return shape


def trunk_layers(tiny: bool = False) -> tuple[LayerSpec, ...]:
    d = TINY_DIVISOR if tiny else 1
    return (
        conv(64 // d, 5, name="conv1"),
        maxpool(name="pool1"),
        lrn(name="norm1"),
        conv(192 // d, 3, name="conv2"),
        maxpool(name="pool2"),
        lrn(name="norm2"),
        conv(384 // d, 3, name="conv3"),
        conv(256 // d, 3, name="conv4"),
    )


def build_network(kind, tiny: bool = False, *, n_layouts: int = 300, coarse_grid: int = 20,
                  coarse_classes: int = 20, local_grid: int = 13, local_classes: int = 40,
                  n_edges: int = 4, secondary_multiplier: float = 50.0) -> NetworkSpec:
    """Return the layer layout for one of the four networks.

    Head output sizes are never scaled by ``tiny``; only channel and hidden
    widths are.
    """
    kind = NetworkKind(kind)
    hidden = 4096 // (TINY_DIVISOR if tiny else 1)
    channels = 18 if kind is NetworkKind.FUSION else 3
    trunk = trunk_layers(tiny)
    if kind is NetworkKind.TOPDOWN:
        normal_shape = (coarse_grid, coarse_grid, coarse_classes)
        heads = (
            HeadSpec("normals", (fc(_prod(normal_shape), name="fc_normals"),), normal_shape),
            HeadSpec("layout", (fc(n_layouts, name="fc_layout"),), (n_layouts,),
                     multiplier=secondary_multiplier),
        )
    elif kind is NetworkKind.BOTTOMUP:
        normal_shape = (local_grid, local_grid, local_classes)
        heads = (
            HeadSpec("normals", (fc(hidden, relu=True, name="fc6_normals"),
                                 fc(_prod(normal_shape), name="fc7_normals")), normal_shape),
            HeadSpec("edges", (fc(hidden, relu=True, name="fc6_edges"),
                               fc(n_edges, name="fc7_edges")), (n_edges,),
                     multiplier=secondary_multiplier),
        )
    elif kind is NetworkKind.FUSION:
        normal_shape = (local_grid, local_grid, local_classes)
        heads = (
            HeadSpec("normals", (fc(hidden, relu=True, name="fc6_normals"),
                                 fc(_prod(normal_shape), name="fc7_normals")), normal_shape),
        )
    else:
        normal_shape = (coarse_grid, coarse_grid, 3)
        heads = (HeadSpec("normals", (fc(_prod(normal_shape), name="fc_normals"),), normal_shape,
                          loss="neg_dot"),)
    return NetworkSpec(kind, (WINDOW, WINDOW, channels), trunk, heads, tiny)


def _prod(shape) -> int:
    n = 1
    for d in shape:
        n *= d
    return n
