"""Lung-patch nodule workbench: segmentation, patch grids, labels, metrics and the patch classifier."""

from ._core import (
    CxrError,
    Model,
    assign_patch_labels,
    aupr,
    auroc,
    build_grid,
    generate_synthetic,
    iou,
    load_pgm,
    lr_at,
    lung_boxes,
    otsu_threshold,
    save_pgm,
    segment_lungs,
    sens_spec,
)

__all__ = [
    "CxrError",
    "Model",
    "assign_patch_labels",
    "aupr",
    "auroc",
    "build_grid",
    "generate_synthetic",
    "iou",
    "load_pgm",
    "lr_at",
    "lung_boxes",
    "otsu_threshold",
    "save_pgm",
    "segment_lungs",
    "sens_spec",
]
