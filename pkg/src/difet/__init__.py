"""difet: distributed image feature extraction.

Images are packed into a bundle file, and each one becomes an independent
extraction task (corner detection plus an optional descriptor). Tasks run
on a local pool or on remote workers over TCP; the merged output does not
depend on how the work was split.
"""

from difet.bundle import Bundle, bundle_create, bundle_fetch, bundle_id, bundle_read
from difet.detect import DetectorParams, Keypoint
from difet.describe import DescriptorParams
from difet.engine import Algorithm, JobReport, JobSpec, LocalRunner, Task, TaskResult, execute_task, run_job
from difet.errors import DifetError
from difet.featio import format_result, parse_result, read_result, render_overlay, write_result
from difet.netpbm import decode_image, read_image, write_netpbm
from difet.raster import PixelImage, to_grayscale

__version__ = "0.1.0"

__all__ = [
    "Algorithm",
    "Bundle",
    "DescriptorParams",
    "DetectorParams",
    "DifetError",
    "JobReport",
    "JobSpec",
    "Keypoint",
    "LocalRunner",
    "PixelImage",
    "Task",
    "TaskResult",
    "bundle_create",
    "bundle_fetch",
    "bundle_id",
    "bundle_read",
    "decode_image",
    "execute_task",
    "format_result",
    "parse_result",
    "read_image",
    "read_result",
    "render_overlay",
    "run_job",
    "to_grayscale",
    "write_netpbm",
    "write_result",
]
