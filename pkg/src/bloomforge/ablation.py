"""Retrieval-parameter sweep: judge question quality over an (alpha, K) grid.

Each cell draws anchors, assembles contexts with that cell's fusion weight
and support count, generates questions, and has a judge score them on a
four-part integration rubric totalling clamp(sum, 0, 10). Artifacts are a
CSV of cell means, a dependency-free SVG heatmap with marginal bars, and a
JSON summary. Every byte of the SVG is assembled by hand with fixed float
formatting so reruns are identical.
"""
from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, replace
from typing import Mapping

from . import formats
from .errors import ConfigError, GenerationError, ScoringError
from .gateway import ChatRequest, Gateway, chat_request
from .generation import (
    MultiSourceContext,
    assemble_context,
    generate_question,
    sample_qtype,
)
from .indexing import RetrievalConfig, Retriever
from .quality import JUDGE_SYSTEM_PROMPT, judged_scores
from .qtypes import DEFAULT_QTYPE_MIX
from .seeds import derive_seed

DEFAULT_ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)
DEFAULT_KS = (1, 3, 5, 7, 9)
DEFAULT_SAMPLES_PER_CELL = 40

ABLATION_FIELDS: tuple[tuple[str, float, float, str], ...] = (
    (
        "multisource_integration",
        0.0,
        5.0,
        "how much the question genuinely weaves together several sources",
    ),
    (
        "question_complexity",
        0.0,
        3.0,
        "cognitive demand of the question",
    ),
    (
        "answer_integration",
        0.0,
        3.0,
        "how well the answer synthesizes the sources",
    ),
    (
        "penalty",
        -2.0,
        0.0,
        "deductions for errors, redundancy, or incoherence",
    ),
)
ABLATION_TOTAL_MIN = 0.0
ABLATION_TOTAL_MAX = 10.0


def ablation_total(scores: Mapping[str, float]) -> float:
    total = sum(scores[name] for name, _, _, _ in ABLATION_FIELDS)
    return min(max(total, ABLATION_TOTAL_MIN), ABLATION_TOTAL_MAX)


@dataclass(frozen=True)
class AblationGrid:
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    ks: tuple[int, ...] = DEFAULT_KS
    samples_per_cell: int = DEFAULT_SAMPLES_PER_CELL

    def __post_init__(self):
        if not self.alphas or not self.ks:
            raise ConfigError("ablation grid needs at least one alpha and one k")
        if list(self.alphas) != sorted(set(self.alphas)):
            raise ConfigError("alphas must be strictly increasing")
        if list(self.ks) != sorted(set(self.ks)):
            raise ConfigError("ks must be strictly increasing")
        if any(not (0.0 <= a <= 1.0) for a in self.alphas):
            raise ConfigError("alphas must lie in [0, 1]")
        if any(k < 1 for k in self.ks):
            raise ConfigError("ks must be >= 1")
        if self.samples_per_cell < 1:
            raise ConfigError("samples_per_cell must be >= 1")

    def cells(self) -> list[tuple[float, int]]:
        return [(a, k) for a in self.alphas for k in self.ks]


def build_ablation_request(
    question: str, answer: str, ctx: MultiSourceContext, *, seed: int | None = None
) -> ChatRequest:
    # the retrieval snapshot line lets scripted judges key on the grid cell
    user = (
        "Score this generated question and answer for multi-source quality.\n\n"
        f"Retrieval snapshot: alpha={ctx.alpha:.2f}, top_k={ctx.top_k}\n\n"
        "Scores to assign:\n"
        f"{formats.score_range_lines(ABLATION_FIELDS)}\n\n"
        f"Question:\n{question}\n\n"
        f"Answer:\n{answer}\n\n"
        f"Sources:\n{ctx.rendered_text}\n\n"
        f"{formats.SCORES_FORMAT_INSTRUCTION}"
    )
    return chat_request(user, JUDGE_SYSTEM_PROMPT, seed=seed)


@dataclass(frozen=True)
class AblationScore:
    scores: dict[str, float]
    total: float
    judge_id: str
    rationale: str


def score_generated(
    question: str,
    answer: str,
    ctx: MultiSourceContext,
    gw: Gateway,
    *,
    seed: int = 0,
    label: str = "",
) -> AblationScore:
    scores, rationale, judge_id = judged_scores(
        ABLATION_FIELDS,
        lambda s: build_ablation_request(question, answer, ctx, seed=s),
        gw,
        seed=seed,
        label=label or "ablation",
    )
    return AblationScore(
        scores=scores,
        total=ablation_total(scores),
        judge_id=judge_id,
        rationale=rationale,
    )


@dataclass
class AblationResult:
    cell_means: dict[tuple[float, int], float]
    cell_counts: dict[tuple[float, int], int]
    missing_cells: list[tuple[float, int]]
    marginal_alpha: dict[float, float]
    marginal_k: dict[int, float]
    argmax_cell: tuple[float, int]
    failures: int = 0

    def to_record(self) -> dict:
        return {
            "cells": [
                {
                    "alpha": alpha,
                    "k": k,
                    "mean": self.cell_means[(alpha, k)],
                    "count": self.cell_counts[(alpha, k)],
                }
                for alpha, k in sorted(self.cell_means)
            ],
            "missing_cells": [list(c) for c in self.missing_cells],
            "marginal_alpha": {f"{a:.2f}": m for a, m in self.marginal_alpha.items()},
            "marginal_k": {str(k): m for k, m in self.marginal_k.items()},
            "argmax": {
                "alpha": self.argmax_cell[0],
                "k": self.argmax_cell[1],
                "mean": self.cell_means[self.argmax_cell],
            },
            "failures": self.failures,
        }


def summarize_cells(
    cell_means: Mapping[tuple[float, int], float],
    cell_counts: Mapping[tuple[float, int], int],
    grid: AblationGrid,
    failures: int = 0,
) -> AblationResult:
    """Marginals (unweighted means of present cell means) and the argmax.

    Argmax ties break toward smaller k, then smaller alpha. Cells with no
    scored samples are flagged missing and excluded from marginals.
    """
    present = {cell: m for cell, m in cell_means.items() if cell_counts.get(cell, 0) > 0}
    if not present:
        raise ConfigError("no ablation cell produced any scored sample")
    missing = [c for c in grid.cells() if c not in present]
    marginal_alpha = {}
    for alpha in grid.alphas:
        row = [present[(alpha, k)] for k in grid.ks if (alpha, k) in present]
        if row:
            marginal_alpha[alpha] = sum(row) / len(row)
    marginal_k = {}
    for k in grid.ks:
        col = [present[(alpha, k)] for alpha in grid.alphas if (alpha, k) in present]
        if col:
            marginal_k[k] = sum(col) / len(col)
    argmax = min(present, key=lambda cell: (-present[cell], cell[1], cell[0]))
    return AblationResult(
        cell_means=dict(present),
        cell_counts={c: cell_counts[c] for c in present},
        missing_cells=missing,
        marginal_alpha=marginal_alpha,
        marginal_k=marginal_k,
        argmax_cell=argmax,
        failures=failures,
    )


def run_ablation(
    grid: AblationGrid,
    retriever: Retriever,
    teacher: Gateway,
    judge: Gateway,
    *,
    seed: int = 0,
    base_cfg: RetrievalConfig = RetrievalConfig(),
    qtype_mix: Mapping[str, float] | None = None,
) -> AblationResult:
    """Sweep the grid; per-sample failures shrink the cell, never abort it."""
    mix = dict(qtype_mix or DEFAULT_QTYPE_MIX)
    chunk_ids = sorted(retriever.chunk_ids())
    sums: dict[tuple[float, int], float] = {}
    counts: dict[tuple[float, int], int] = {}
    failures = 0
    for alpha, k in grid.cells():
        cfg = replace(base_cfg, alpha=alpha, top_k=k)
        cell_seed = derive_seed(seed, "ablation", f"{alpha:.2f}", k)
        picker = random.Random(cell_seed)
        anchors = [
            chunk_ids[picker.randrange(len(chunk_ids))]
            for _ in range(grid.samples_per_cell)
        ]
        for i, anchor_id in enumerate(anchors):
            anchor = retriever.chunk(anchor_id)
            try:
                ctx = assemble_context(anchor, retriever, cfg)
                qtype = sample_qtype(mix, derive_seed(cell_seed, "qtype", i))
                draft = generate_question(
                    qtype, ctx, teacher, seed=derive_seed(cell_seed, "question", i)
                )
                scored = score_generated(
                    draft.question,
                    draft.answer,
                    ctx,
                    judge,
                    seed=derive_seed(cell_seed, "score", i),
                    label=f"cell-{alpha:.2f}-{k}-{i}",
                )
            except (GenerationError, ScoringError):
                failures += 1
                continue
            cell = (alpha, k)
            sums[cell] = sums.get(cell, 0.0) + scored.total
            counts[cell] = counts.get(cell, 0) + 1
    means = {cell: sums[cell] / counts[cell] for cell in sums}
    return summarize_cells(means, counts, grid, failures=failures)


# --- artifacts ---------------------------------------------------------------

CSV_HEADER = "alpha,k,mean,count"


def write_csv(result: AblationResult, path: str) -> None:
    """Rows sorted by (alpha, k); means carry four decimals."""
    lines = [CSV_HEADER]
    for alpha, k in sorted(result.cell_means):
        lines.append(
            f"{alpha:.2f},{k},{result.cell_means[(alpha, k)]:.4f},"
            f"{result.cell_counts[(alpha, k)]}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _heat_color(value: float, lo: float, hi: float) -> str:
    """White at the low end toward a deep blue at the high end."""
    frac = 0.0 if hi == lo else (value - lo) / (hi - lo)
    r = round(255 - frac * (255 - 31))
    g = round(255 - frac * (255 - 99))
    b = round(255 - frac * (255 - 167))
    return f"rgb({r},{g},{b})"


def render_svg(result: AblationResult, grid: AblationGrid) -> str:
    """Hand-assembled heatmap: K columns, alpha rows, marginal bars, max mark.

    The marginal bar over each column shows the K marginal; the bar right of
    each row shows the alpha marginal. The argmax cell gets a thick outline
    and a data-max attribute.
    """
    cell = 64
    left, top_pad, bar = 70, 90, 56
    gap = 8
    width = left + len(grid.ks) * cell + gap + bar + 40
    height = top_pad + len(grid.alphas) * cell + 50
    values = list(result.cell_means.values())
    lo, hi = min(values), max(values)
    mean_lo, mean_hi = (min(lo, 0.0), max(hi, 1e-9))
    parts: list[str] = []
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    parts.append(
        '<style>text{font-family:monospace;font-size:12px}.lab{font-size:11px}</style>'
    )
    parts.append(
        f'<text x="{left}" y="20">question quality by fusion weight and support count</text>'
    )
    # top marginal bars: one per K column
    bar_area_top = 34
    for col, k in enumerate(grid.ks):
        if k not in result.marginal_k:
            continue
        value = result.marginal_k[k]
        frac = 0.0 if mean_hi == mean_lo else (value - mean_lo) / (mean_hi - mean_lo)
        bh = round(frac * (bar - 12), 1)
        x = left + col * cell + 10
        y = bar_area_top + (bar - 12) - bh
        parts.append(
            f'<rect class="kbar" data-k="{k}" x="{x}" y="{y:.1f}" '
            f'width="{cell - 20}" height="{bh:.1f}" fill="rgb(120,150,190)"/>'
        )
        parts.append(
            f'<text class="lab" x="{x}" y="{bar_area_top + bar + 2}">{value:.2f}</text>'
        )
    # grid cells
    for row, alpha in enumerate(grid.alphas):
        y = top_pad + row * cell
        parts.append(
            f'<text class="lab" x="8" y="{y + cell // 2 + 4}">a={alpha:.2f}</text>'
        )
        for col, k in enumerate(grid.ks):
            x = left + col * cell
            key = (alpha, k)
            if key not in result.cell_means:
                parts.append(
                    f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                    'fill="none" stroke="rgb(200,200,200)" stroke-dasharray="4 3"/>'
                )
                parts.append(
                    f'<text class="lab" x="{x + 18}" y="{y + cell // 2 + 4}">n/a</text>'
                )
                continue
            value = result.cell_means[key]
            is_max = key == result.argmax_cell
            fill = _heat_color(value, lo, hi)
            extra = ' data-max="true" stroke="rgb(20,20,20)" stroke-width="3"' if is_max else ' stroke="rgb(255,255,255)" stroke-width="1"'
            parts.append(
                f'<rect data-alpha="{alpha:.2f}" data-k="{k}" x="{x}" y="{y}" '
                f'width="{cell}" height="{cell}" fill="{fill}"{extra}/>'
            )
            text_fill = "rgb(255,255,255)" if value > (lo + hi) / 2 else "rgb(20,20,20)"
            label = f"{value:.2f}" + ("*" if is_max else "")
            parts.append(
                f'<text x="{x + 10}" y="{y + cell // 2 + 4}" fill="{text_fill}">{label}</text>'
            )
    # right marginal bars: one per alpha row
    bar_x = left + len(grid.ks) * cell + gap
    for row, alpha in enumerate(grid.alphas):
        if alpha not in result.marginal_alpha:
            continue
        value = result.marginal_alpha[alpha]
        frac = 0.0 if mean_hi == mean_lo else (value - mean_lo) / (mean_hi - mean_lo)
        bw = round(frac * bar, 1)
        y = top_pad + row * cell + 14
        parts.append(
            f'<rect class="abar" data-alpha="{alpha:.2f}" x="{bar_x}" y="{y}" '
            f'width="{bw:.1f}" height="{cell - 28}" fill="rgb(150,120,190)"/>'
        )
        parts.append(
            f'<text class="lab" x="{bar_x}" y="{y + cell - 18}">{value:.2f}</text>'
        )
    # K axis labels under the grid
    axis_y = top_pad + len(grid.alphas) * cell + 18
    for col, k in enumerate(grid.ks):
        parts.append(
            f'<text class="lab" x="{left + col * cell + 24}" y="{axis_y}">K={k}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_artifacts(
    result: AblationResult, grid: AblationGrid, out_dir: str
) -> dict[str, str]:
    """Write ablation.csv, ablation.svg, ablation_summary.json; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "ablation.csv")
    svg_path = os.path.join(out_dir, "ablation.svg")
    summary_path = os.path.join(out_dir, "ablation_summary.json")
    write_csv(result, csv_path)
    with open(svg_path, "w", encoding="utf-8") as fh:
        fh.write(render_svg(result, grid))
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(result.to_record(), fh, sort_keys=True, ensure_ascii=False, indent=2)
        fh.write("\n")
    return {"csv": csv_path, "svg": svg_path, "summary": summary_path}
