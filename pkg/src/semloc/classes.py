"""Unified semantic class set shared by maps, masks, and confusion matrices."""

from __future__ import annotations

import numpy as np

ANIMAL = 0
BUILDING = 1
IMPERVIOUS_SURFACE = 2
PERVIOUS_SURFACE = 3
TREE_VEGETATION = 4
LOW_VEGETATION = 5
WATER = 6
VEHICLE = 7

CLASS_NAMES = (
    "animal",
    "building",
    "impervious_surface",
    "pervious_surface",
    "tree_vegetation",
    "low_vegetation",
    "water",
    "vehicle",
)

NUM_CLASSES = len(CLASS_NAMES)

# Label value reserved for "no information" pixels/points. Never a valid class.
IGNORE_LABEL = 255


def class_name(class_id: int) -> str:
    return CLASS_NAMES[class_id]


def validate_labels(labels: np.ndarray, num_classes: int = NUM_CLASSES, allow_ignore: bool = True) -> None:
    """Raise ValueError if any label is outside [0, num_classes) plus the ignore value."""
    arr = np.asarray(labels)
    if arr.size == 0:
        return
    valid = arr < num_classes
    if allow_ignore:
        valid |= arr == IGNORE_LABEL
    if not bool(np.all(valid)):
        bad = np.unique(arr[~valid])
        raise ValueError(f"invalid class labels {bad.tolist()}; expected ids < {num_classes}"
                         + (f" or {IGNORE_LABEL}" if allow_ignore else ""))
