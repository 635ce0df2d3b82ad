# Copyright 2026 The mudet Authors
# SPDX-License-Identifier: Apache-2.0
"""Multimodal oriented vehicle detection toolkit (native core)."""

from ._core import (
    BoxEncoding,
    ConfigError,
    IoError,
    MudetError,
    NumericalError,
    Obb,
    ParseError,
    ShapeError,
    ValidationError,
    average_precision,
    build_masks,
    canonicalize,
    decode_obb,
    encode_obb,
    focal_loss,
    format_annotations,
    gamma_transform,
    gradcheck,
    grayscale_slice,
    hbb_iou_from_distances,
    nms,
    obb_regression_loss,
    parse_annotations,
    polygon_iou,
    run_cli,
    tile_origins,
)

__version__ = "0.1.0"
