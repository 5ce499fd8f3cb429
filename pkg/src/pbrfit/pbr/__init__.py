"""Physically based shading: cubemaps, BRDF, split-sum prefiltering."""

from .brdf import diffuse_weight, fresnel, fresnel_f0
from .cubemap import (Cubemap, cubemap_to_equirect, equirect_to_cubemap,
                      sample_cubemap, sample_faces)
from .lut import SplitSumLUT, bake_lut
from .prefilter import PrefilteredEnvironment, PrefilterOperator, prefilter_environment
from .shade import (SurfacePoint, shade_reference_mc, shade_splitsum,
                    tonemap_srgb)

__all__ = [
    "Cubemap", "PrefilteredEnvironment", "PrefilterOperator", "SplitSumLUT",
    "SurfacePoint", "bake_lut", "cubemap_to_equirect", "diffuse_weight",
    "equirect_to_cubemap", "fresnel", "fresnel_f0", "prefilter_environment",
    "sample_cubemap", "sample_faces", "shade_reference_mc", "shade_splitsum",
    "tonemap_srgb",
]
