"""Feature descriptors: BRIEF, ORB, upright SURF and SIFT."""

from difet.describe.brief import (
    DEFAULT_PATTERN,
    SamplingPattern,
    brief_describe,
    centroid_angle,
    hamming_distance,
    l2_distance,
    steered_brief,
)
from difet.describe.orb import orb_extract
from difet.describe.params import DescriptorParams
from difet.describe.sift import sift_describe, sift_describe_many, sift_detect
from difet.describe.surf import surf_describe, surf_detect

__all__ = [
    "DEFAULT_PATTERN",
    "DescriptorParams",
    "SamplingPattern",
    "brief_describe",
    "centroid_angle",
    "hamming_distance",
    "l2_distance",
    "orb_extract",
    "sift_describe",
    "sift_describe_many",
    "sift_detect",
    "steered_brief",
    "surf_describe",
    "surf_detect",
]
