from __future__ import annotations

import math

import pytest

from bloomforge.errors import ConfigError
from bloomforge.qtypes import (
    ALL_CODES,
    COGNITIVE_LEVELS,
    DEFAULT_QTYPE_MIX,
    HIGHER_ORDER_CODES,
    QUESTION_TYPES,
    get_question_type,
    validate_registry,
)


def test_registry_holds_nine_types():
    assert ALL_CODES == tuple(f"Q{i}" for i in range(1, 10))
    assert set(QUESTION_TYPES) == set(ALL_CODES)
    validate_registry()


def test_every_type_is_fully_described():
    for qt in QUESTION_TYPES.values():
        assert qt.code and qt.name and qt.objective
        assert qt.design_hint and qt.example_prefix and qt.answer_guideline
        assert qt.cognitive_levels
        assert set(qt.cognitive_levels) <= set(COGNITIVE_LEVELS)


def test_all_six_levels_reachable():
    covered = {
        level for qt in QUESTION_TYPES.values() for level in qt.cognitive_levels
    }
    assert covered == set(COGNITIVE_LEVELS)


def test_level_assignments():
    levels = {code: QUESTION_TYPES[code].cognitive_levels for code in ALL_CODES}
    assert levels["Q1"] == ("Remember", "Understand")
    assert levels["Q2"] == ("Understand",)
    assert levels["Q3"] == ("Understand", "Apply")
    assert levels["Q4"] == ("Apply",)
    assert levels["Q5"] == ("Apply", "Analyze")
    assert levels["Q6"] == ("Analyze",)
    assert levels["Q7"] == ("Analyze", "Create")
    assert levels["Q8"] == ("Evaluate",)
    assert levels["Q9"] == ("Evaluate", "Create")


def test_default_mix_weights_and_mass():
    for code in ("Q1", "Q2", "Q3", "Q4"):
        assert DEFAULT_QTYPE_MIX[code] == 0.10
    for code in HIGHER_ORDER_CODES:
        assert DEFAULT_QTYPE_MIX[code] == 0.12
    assert math.isclose(sum(DEFAULT_QTYPE_MIX.values()), 1.0, abs_tol=1e-12)
    higher = sum(DEFAULT_QTYPE_MIX[c] for c in HIGHER_ORDER_CODES)
    assert math.isclose(higher, 0.60, abs_tol=1e-12)


def test_lookup_and_unknown_code():
    assert get_question_type("Q5").name == "Algorithm Implementation"
    with pytest.raises(ConfigError, match="Q12"):
        get_question_type("Q12")
    with pytest.raises(ConfigError):
        get_question_type("q1")
