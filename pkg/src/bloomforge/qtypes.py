"""The nine cognitively layered question types.

Each type pins an assessment objective, a design hint for the generator, an
example question prefix, and an answer guideline. Types ladder up a
six-level cognitive scale (Remember through Create); the registry self-check
asserts every level is reachable. The default sampling mix puts 60% of the
mass on the five higher-order types Q5-Q9.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError

COGNITIVE_LEVELS = (
    "Remember",
    "Understand",
    "Apply",
    "Analyze",
    "Evaluate",
    "Create",
)


@dataclass(frozen=True)
class QuestionType:
    code: str
    name: str
    cognitive_levels: tuple[str, ...]
    objective: str
    design_hint: str
    example_prefix: str
    answer_guideline: str


QUESTION_TYPES: dict[str, QuestionType] = {
    qt.code: qt
    for qt in (
        QuestionType(
            code="Q1",
            name="Concept Discrimination",
            cognitive_levels=("Remember", "Understand"),
            objective="Accurate understanding and differentiation of core concepts.",
            design_hint="Ask for comparison, distinction, or definition of key professional concepts.",
            example_prefix="Distinguish between ... and ...",
            answer_guideline=(
                "Define each concept clearly; compare across multiple dimensions; "
                "link to practical use; use a table when helpful."
            ),
        ),
        QuestionType(
            code="Q2",
            name="Principle Explanation",
            cognitive_levels=("Understand",),
            objective="Explain fundamental principles and mechanisms.",
            design_hint="Ask to explain how a system/phenomenon works or why it behaves so.",
            example_prefix="Explain the working principle of ...",
            answer_guideline=(
                "Describe the core principle and mechanism; explain key "
                "physical/technical processes and causality; optionally use formulas."
            ),
        ),
        QuestionType(
            code="Q3",
            name="Formula Derivation",
            cognitive_levels=("Understand", "Apply"),
            objective="Mathematical modeling and derivation.",
            design_hint="Ask for derivation of key formulas, model formulation, or proof-like reasoning.",
            example_prefix="Derive the mathematical expression for ...",
            answer_guideline=(
                "State assumptions and boundary conditions; derive step-by-step; "
                "explain variable meanings; specify validity range."
            ),
        ),
        QuestionType(
            code="Q4",
            name="Parameter Calculation",
            cognitive_levels=("Apply",),
            objective="Compute and analyze specific parameters.",
            design_hint="Ask for numerical computation or parameter estimation/analysis.",
            example_prefix="Compute the numerical value of ...",
            answer_guideline=(
                "List knowns/unknowns; choose formulas; show detailed calculations; "
                "interpret the physical meaning of results."
            ),
        ),
        QuestionType(
            code="Q5",
            name="Algorithm Implementation",
            cognitive_levels=("Apply", "Analyze"),
            objective="Algorithm design, implementation, and optimization.",
            design_hint="Ask for algorithm steps, pseudocode, or implementation details.",
            example_prefix="Design an algorithmic workflow for ...",
            answer_guideline=(
                "Provide the overall idea; list detailed steps; give pseudocode; "
                "analyze complexity and performance."
            ),
        ),
        QuestionType(
            code="Q6",
            name="Performance Analysis",
            cognitive_levels=("Analyze",),
            objective="Analyze and evaluate system performance.",
            design_hint="Ask about metrics, bottlenecks, pros/cons, and trade-offs.",
            example_prefix="Analyze the performance characteristics of ...",
            answer_guideline=(
                "Define metrics; analyze influencing factors; compare "
                "advantages/limitations and scenarios; propose optimizations."
            ),
        ),
        QuestionType(
            code="Q7",
            name="Process Design",
            cognitive_levels=("Analyze", "Create"),
            objective="Engineering process planning and workflow design.",
            design_hint="Ask for an end-to-end workflow, processing steps, or system procedure.",
            example_prefix="Design the processing workflow for ...",
            answer_guideline=(
                "Provide a complete framework; describe key steps; specify "
                "inputs/outputs; discuss exception handling."
            ),
        ),
        QuestionType(
            code="Q8",
            name="Solution Decision-Making",
            cognitive_levels=("Evaluate",),
            objective="Integrated solution design and decision analysis.",
            design_hint="Ask for option comparison, trade-off reasoning, and final recommendation.",
            example_prefix="How to choose the optimal solution for ...",
            answer_guideline=(
                "Analyze background and constraints; propose alternatives; build an "
                "evaluation framework; recommend with justification."
            ),
        ),
        QuestionType(
            code="Q9",
            name="Comprehensive Evaluation",
            cognitive_levels=("Evaluate", "Create"),
            objective="Cross-aspect, system-level analysis and evaluation.",
            design_hint="Ask for multi-dimensional assessment, subsystem contributions, and improvement directions.",
            example_prefix="Comprehensively evaluate the overall effectiveness of ...",
            answer_guideline=(
                "Build a multi-dimensional framework; analyze subsystem "
                "contributions; synthesize overall effectiveness; propose improvements."
            ),
        ),
    )
}

ALL_CODES = tuple(f"Q{i}" for i in range(1, 10))
HIGHER_ORDER_CODES = ("Q5", "Q6", "Q7", "Q8", "Q9")

# Q1-Q4 carry 0.10 each, Q5-Q9 carry 0.12 each: 60% higher-order mass.
DEFAULT_QTYPE_MIX: dict[str, float] = {
    **{code: 0.10 for code in ("Q1", "Q2", "Q3", "Q4")},
    **{code: 0.12 for code in HIGHER_ORDER_CODES},
}


def get_question_type(code: str) -> QuestionType:
    if code not in QUESTION_TYPES:
        raise ConfigError(f"unknown question type: {code!r}")
    return QUESTION_TYPES[code]


def validate_registry() -> None:
    """Nine codes Q1-Q9, known levels only, all six levels covered."""
    if tuple(sorted(QUESTION_TYPES)) != ALL_CODES:
        raise ConfigError(f"registry must hold exactly {ALL_CODES}")
    covered: set[str] = set()
    for qt in QUESTION_TYPES.values():
        for level in qt.cognitive_levels:
            if level not in COGNITIVE_LEVELS:
                raise ConfigError(f"{qt.code} names unknown level {level!r}")
            covered.add(level)
    missing = set(COGNITIVE_LEVELS) - covered
    if missing:
        raise ConfigError(f"cognitive levels never exercised: {sorted(missing)}")


validate_registry()
