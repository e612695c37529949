"""Rendered frame container shared by the splat and analytic renderers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camera import Intrinsics, Pose


@dataclass
class RenderedFrame:
    """One rendered view.

    ``depth`` and ``object_ids`` are produced by the analytic oracle only;
    depth uses 0 as the no-hit sentinel (never a valid metric depth) and
    object ids use -1 for background.
    """

    rgb: np.ndarray  # (H, W, 3) uint8
    intrinsics: Intrinsics
    pose: Pose
    depth: np.ndarray | None = None  # (H, W) float32
    object_ids: np.ndarray | None = None  # (H, W) int16
    skipped_elements: int = 0

    def __post_init__(self):
        h, w = self.intrinsics.height, self.intrinsics.width
        if self.rgb.shape != (h, w, 3):
            raise ValueError(f"rgb shape {self.rgb.shape} != intrinsics {h}x{w}")
        if self.depth is not None and self.depth.shape != (h, w):
            raise ValueError("depth shape does not match intrinsics")
        if self.object_ids is not None and self.object_ids.shape != (h, w):
            raise ValueError("object_ids shape does not match intrinsics")
