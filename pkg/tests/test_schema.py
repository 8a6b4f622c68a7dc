"""Test: shared enums and error types."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import pytest

from config_io.schema import (
    BOX_CLASSES,
    IGNORE_LABEL,
    ConfigurationError,
    MissingDatasetError,
    SemanticClass,
    Split,
    Task,
    TrainingDivergedError,
)


def test_class_ids():
    assert [int(c) for c in SemanticClass] == [0, 1, 2, 3, 4, 5]
    assert IGNORE_LABEL not in {int(c) for c in SemanticClass}
    assert SemanticClass.EMPTY not in BOX_CLASSES
    assert SemanticClass.ROAD not in BOX_CLASSES


def test_task_from_string():
    assert Task("occ") == Task.OCC
    assert Split("val") == Split.VAL


def test_invalid_task():
    with pytest.raises(ValueError):
        Task("flow")


def test_error_hierarchy():
    assert issubclass(ConfigurationError, ValueError)
    assert issubclass(MissingDatasetError, FileNotFoundError)


def test_divergence_carries_diagnostics():
    err = TrainingDivergedError("nan at step 3", diagnostics={"step": 3})
    assert err.diagnostics == {"step": 3}
    assert TrainingDivergedError("x").diagnostics == {}
