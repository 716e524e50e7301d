"""Layout bookkeeping: activation NCHW/NHWC permutations, weight layouts,
and module-specific custom weight orders (stored as axis permutations of the
canonical OIHW order, so they stay invertible and self-describing).
"""

from __future__ import annotations

import numpy as np

from .ir import NCHW, NHWC, OIHW, OHWI

# axis order of each weight layout relative to canonical (K, C, FY, FX)
WEIGHT_AXES = {OIHW: (0, 1, 2, 3), OHWI: (0, 2, 3, 1)}
WEIGHT_DIMS = {OIHW: ("K", "C", "FY", "FX"), OHWI: ("K", "FY", "FX", "C")}

NCHW_TO_NHWC = (0, 2, 3, 1)
NHWC_TO_NCHW = (0, 3, 1, 2)


def transpose_activation(arr: np.ndarray, src: str, dst: str) -> np.ndarray:
    if src == dst:
        return arr
    return np.transpose(arr, NCHW_TO_NHWC if dst == NHWC else NHWC_TO_NCHW)


def activation_shape(shape: tuple[int, ...], src: str, dst: str) -> tuple[int, ...]:
    if src == dst or len(shape) != 4:
        return shape
    perm = NCHW_TO_NHWC if dst == NHWC else NHWC_TO_NCHW
    return tuple(shape[p] for p in perm)


def default_weight_layout(act_layout: str) -> str:
    return OIHW if act_layout == NCHW else OHWI


def weight_axes(layout: str | None, custom_layouts: dict) -> tuple[int, ...]:
    if layout is None:
        return WEIGHT_AXES[OIHW]
    if layout in WEIGHT_AXES:
        return WEIGHT_AXES[layout]
    if layout in custom_layouts:
        return tuple(custom_layouts[layout])
    raise KeyError(f"unknown weight layout {layout!r}")


def weight_dims(layout: str | None, custom_layouts: dict) -> tuple[str, ...]:
    """Workload dimension names in the layout's storage-major order."""
    canon = ("K", "C", "FY", "FX")
    return tuple(canon[a] for a in weight_axes(layout, custom_layouts))


def weight_to_oihw(arr: np.ndarray, layout: str | None, custom_layouts: dict) -> np.ndarray:
    axes = weight_axes(layout, custom_layouts)
    if axes == (0, 1, 2, 3):
        return arr
    inverse = tuple(int(i) for i in np.argsort(axes))
    return np.transpose(arr, inverse)


def weight_from_oihw(arr: np.ndarray, layout: str | None, custom_layouts: dict) -> np.ndarray:
    axes = weight_axes(layout, custom_layouts)
    return np.transpose(arr, axes) if axes != (0, 1, 2, 3) else arr
