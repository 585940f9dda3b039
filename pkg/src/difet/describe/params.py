from __future__ import annotations

import math
from dataclasses import dataclass, fields

from difet.errors import InvalidParameterError


@dataclass(frozen=True)
class DescriptorParams:
    orb_n_features: int = 500
    orb_n_levels: int = 8
    orb_scale_factor: float = 1.2
    orb_fast_threshold: float = 20 / 255
    # compared against determinant responses on the 0-255 intensity scale
    surf_hessian_threshold: float = 400.0
    surf_octaves: int = 1
    sift_contrast_threshold: float = 0.03
    sift_edge_ratio: float = 10.0
    brief_blur_sigma: float = 2.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParameterError(f"{f.name} must be positive, got {value}")
        if self.orb_scale_factor <= 1:
            raise InvalidParameterError("orb_scale_factor must be > 1")
        for name in ("orb_n_features", "orb_n_levels", "surf_octaves"):
            if int(getattr(self, name)) != getattr(self, name):
                raise InvalidParameterError(f"{name} must be an integer")
