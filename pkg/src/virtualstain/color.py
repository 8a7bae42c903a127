"""BT.601 full-range RGB <-> YCbCr on [0, 1] values (chroma offset 0.5)."""

import numpy as np

RGB_TO_YCBCR = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
YCBCR_TO_RGB = np.linalg.inv(RGB_TO_YCBCR)
CHROMA_OFFSET = np.array([0.0, 0.5, 0.5])


def rgb_to_ycbcr(rgb):
    rgb = np.asarray(rgb)
    dtype = rgb.dtype if rgb.dtype.kind == "f" else np.float64
    return rgb @ RGB_TO_YCBCR.T.astype(dtype) + CHROMA_OFFSET.astype(dtype)


def ycbcr_to_rgb(ycc):
    ycc = np.asarray(ycc)
    dtype = ycc.dtype if ycc.dtype.kind == "f" else np.float64
    return (ycc - CHROMA_OFFSET.astype(dtype)) @ YCBCR_TO_RGB.T.astype(dtype)


def luminance(rgb):
    """BT.601 luma of an (..., 3) RGB array."""
    return np.asarray(rgb) @ RGB_TO_YCBCR[0]
