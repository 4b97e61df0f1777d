from .edges import analytic_edge_labels, derive_edge_labels, region_edge_label
from .render import (Camera, SceneConfig, SceneError, SceneSample, generate_scene, look_rotation,
                     pixel_rays, raycast, render_layout)

__all__ = ["Camera", "SceneConfig", "SceneError", "SceneSample", "analytic_edge_labels",
           "derive_edge_labels", "generate_scene", "look_rotation", "pixel_rays", "raycast",
           "region_edge_label", "render_layout"]
