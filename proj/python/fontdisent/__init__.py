"""Python bindings for the fontdisent toolkit.

Images are float32 arrays with ink = 1 and background = 0; masks are uint8
arrays; point sets are (N, 2) float arrays of (x, y).
"""

from ._core import (
    FontDisentError,
    canny_edges,
    chamfer,
    fit_pca,
    generate,
    hausdorff,
    iou,
    load_feature_table,
    otsu_binarize,
    otsu_threshold,
    rasterize_glyph,
    run_pipeline,
    version,
)

__all__ = [
    "FontDisentError",
    "canny_edges",
    "chamfer",
    "fit_pca",
    "generate",
    "hausdorff",
    "iou",
    "load_feature_table",
    "otsu_binarize",
    "otsu_threshold",
    "rasterize_glyph",
    "run_pipeline",
    "version",
]
