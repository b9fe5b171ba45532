import numpy as np
import pytest

from semloc.classes import (CLASS_NAMES, IGNORE_LABEL, NUM_CLASSES, WATER,
                            class_name, validate_labels)


def test_class_table_is_frozen():
    assert NUM_CLASSES == 8
    assert len(CLASS_NAMES) == 8
    assert len(set(CLASS_NAMES)) == 8
    assert IGNORE_LABEL == 255
    assert class_name(WATER) == "water"
    assert class_name(0) == "animal"


def test_validate_labels_accepts_valid_and_ignore():
    validate_labels(np.array([0, 7, IGNORE_LABEL], dtype=np.uint8))
    validate_labels(np.array([], dtype=np.uint8))
    validate_labels(np.array([[0, 1], [2, 3]], dtype=np.uint8))


def test_validate_labels_rejects_out_of_range():
    with pytest.raises(ValueError, match=r"\[8\]"):
        validate_labels(np.array([0, 8], dtype=np.uint8))


def test_validate_labels_ignore_can_be_disallowed():
    labels = np.array([0, IGNORE_LABEL], dtype=np.uint8)
    validate_labels(labels)
    with pytest.raises(ValueError):
        validate_labels(labels, allow_ignore=False)


def test_validate_labels_custom_class_count():
    validate_labels(np.array([0, 1], dtype=np.uint8), num_classes=2)
    with pytest.raises(ValueError):
        validate_labels(np.array([2], dtype=np.uint8), num_classes=2)
