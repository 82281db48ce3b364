"""luxmix: a relightable light-stack engine.

Decomposes, stores, refits and interactively remixes per-light HDR
contributions of indoor scenes, with an analytic box-room renderer as the
ground-truth oracle.
"""

from .camera import Camera, Pose, rotation_from_angles
from .image import (
    ExposureBracket,
    HdrImage,
    LdrImage,
    ToneCurve,
    apply_exposure,
    merge_brackets,
    simulate_bracket,
    tonemap_agx,
    tonemap_curve,
)
from .scene import BoxScene, Light, generate_scene, load_scene, save_scene, temperature_to_rgb
from .stack import (
    LightMasks,
    LightStack,
    RemixWeights,
    augment_compose,
    compose_input,
    convex_hull_mask,
    dilate_small_mask,
    one_light_off,
    remix,
    solve_scales,
)

__version__ = "0.1.0"
