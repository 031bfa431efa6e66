"""Corpus ingestion: block parsing, chunking, terminology, knowledge tree.

Documents arrive as Markdown-like text. Parsing keeps structure (headings,
paragraphs, tables, fenced code, display formulas) so segmentation never cuts
through a table, code fence, or formula. Chunks carry a three-tier tree path
(system_task/subsystem/technical_unit) assigned from a corpus manifest.
"""
from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass, field

import yaml

from .errors import CorpusError

BLOCK_KINDS = ("heading", "paragraph", "table", "code", "formula")
CHUNK_KINDS = ("paragraph", "table", "code", "formula", "mixed")
TREE_TIERS = ("system_task", "subsystem", "technical_unit")

_WORD_RE = re.compile(r"\w+", re.UNICODE)
_HEADING_RE = re.compile(r"^#{1,6}\s+\S")


def count_tokens(text: str) -> int:
    """Count word tokens; punctuation and whitespace both separate."""
    return len(_WORD_RE.findall(text))


@dataclass(frozen=True)
class Block:
    kind: str
    text: str
    line: int  # 1-based source line of the block start


@dataclass
class Document:
    id: str
    title: str
    source_path: str
    body: list[Block]
    tree_path: str = ""


@dataclass
class Chunk:
    id: str
    doc_id: str
    text: str
    kind: str
    tree_path: str
    token_count: int
    oversized: bool = False
    # leading text copied from the previous chunk; empty for the first chunk
    overlap_text: str = ""

    @property
    def core_text(self) -> str:
        """Chunk text with the copied overlap prefix removed."""
        if not self.overlap_text:
            return self.text
        return self.text[len(self.overlap_text):].lstrip()

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "doc_id": self.doc_id,
            "text": self.text,
            "kind": self.kind,
            "tree_path": self.tree_path,
            "token_count": self.token_count,
            "oversized": self.oversized,
            "overlap_text": self.overlap_text,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Chunk":
        return cls(
            id=rec["id"],
            doc_id=rec["doc_id"],
            text=rec["text"],
            kind=rec["kind"],
            tree_path=rec["tree_path"],
            token_count=rec["token_count"],
            oversized=rec.get("oversized", False),
            overlap_text=rec.get("overlap_text", ""),
        )


@dataclass(frozen=True)
class ChunkPolicy:
    target_tokens: int = 512
    max_tokens: int = 768
    overlap_tokens: int = 64

    def __post_init__(self):
        if self.target_tokens <= 0:
            raise CorpusError("target_tokens must be positive")
        if not (0 <= self.overlap_tokens < self.target_tokens <= self.max_tokens):
            raise CorpusError(
                "chunk policy requires 0 <= overlap < target <= max, got "
                f"overlap={self.overlap_tokens} target={self.target_tokens} "
                f"max={self.max_tokens}"
            )


def _is_structural(stripped: str) -> bool:
    return (
        stripped.startswith("```")
        or stripped.startswith("$$")
        or stripped.startswith("|")
        or bool(_HEADING_RE.match(stripped))
    )


def parse_blocks(raw: str) -> list[Block]:
    """Split Markdown-like text into typed blocks, preserving order."""
    lines = raw.split("\n")
    blocks: list[Block] = []
    i = 0
    n = len(lines)
    while i < n:
        stripped = lines[i].strip()
        if not stripped:
            i += 1
            continue
        if stripped.startswith("```"):
            start = i
            fence = [lines[i]]
            i += 1
            closed = False
            while i < n:
                fence.append(lines[i])
                if lines[i].strip().startswith("```"):
                    closed = True
                    i += 1
                    break
                i += 1
            if not closed:
                raise CorpusError(f"unclosed code fence opened at line {start + 1}")
            blocks.append(Block("code", "\n".join(fence), start + 1))
            continue
        if stripped.startswith("$$"):
            start = i
            if len(stripped) > 2 and stripped.endswith("$$"):
                blocks.append(Block("formula", lines[i].strip(), start + 1))
                i += 1
                continue
            formula = [lines[i]]
            i += 1
            closed = False
            while i < n:
                formula.append(lines[i])
                if lines[i].strip().endswith("$$"):
                    closed = True
                    i += 1
                    break
                i += 1
            if not closed:
                raise CorpusError(f"unclosed formula block opened at line {start + 1}")
            blocks.append(Block("formula", "\n".join(formula), start + 1))
            continue
        if stripped.startswith("|"):
            start = i
            rows = []
            while i < n and lines[i].strip().startswith("|"):
                rows.append(lines[i].strip())
                i += 1
            blocks.append(Block("table", "\n".join(rows), start + 1))
            continue
        if _HEADING_RE.match(stripped):
            blocks.append(Block("heading", stripped, i + 1))
            i += 1
            continue
        # paragraph: run of plain lines up to a blank line or structural marker
        start = i
        para: list[str] = []
        while i < n:
            s = lines[i].strip()
            if not s or _is_structural(s):
                break
            para.append(s)
            i += 1
        blocks.append(Block("paragraph", "\n".join(para), start + 1))
    return blocks


def ingest_document(
    raw: str,
    *,
    title: str = "",
    source_path: str = "",
    tree_path: str = "",
    doc_id: str = "",
) -> Document:
    """Parse one raw document into typed blocks with a content-addressed id.

    Ids hash the source path and raw text so re-ingesting an unchanged corpus
    reproduces them exactly.
    """
    if raw is None or not raw.strip():
        raise CorpusError(f"empty document: {source_path or title or '<unnamed>'}")
    blocks = parse_blocks(raw)
    if not blocks:
        raise CorpusError(f"no content blocks in {source_path or title}")
    if not doc_id:
        digest = hashlib.sha256(
            (source_path + "\x00" + raw).encode("utf-8")
        ).hexdigest()
        doc_id = "d" + digest[:12]
    return Document(
        id=doc_id,
        title=title,
        source_path=source_path,
        body=blocks,
        tree_path=tree_path,
    )


@dataclass(frozen=True)
class _Piece:
    """An indivisible packing unit: a block, or one window of a split paragraph."""

    kind: str
    text: str
    tokens: int
    overlap_prefix: str = ""  # window overlap carried inside a split paragraph


def _split_words(text: str) -> list[str]:
    return text.split()


def _take_tail(words: list[str], budget: int) -> list[str]:
    """Trailing words whose token count first reaches budget."""
    tail: list[str] = []
    total = 0
    for word in reversed(words):
        if total >= budget:
            break
        tail.append(word)
        total += count_tokens(word)
    tail.reverse()
    return tail


def _split_paragraph(block: Block, policy: ChunkPolicy) -> list[_Piece]:
    """Window an oversized paragraph at target_tokens with word overlap."""
    words = _split_words(block.text)
    pieces: list[_Piece] = []
    start = 0
    prev_window: list[str] = []
    while start < len(words):
        overlap_words = _take_tail(prev_window, policy.overlap_tokens) if pieces else []
        window: list[str] = list(overlap_words)
        total = sum(count_tokens(w) for w in window)
        end = start
        added = 0
        # always take at least one fresh word so windows make progress
        while end < len(words) and (added == 0 or total < policy.target_tokens):
            total += count_tokens(words[end])
            window.append(words[end])
            end += 1
            added += 1
        text = " ".join(window)
        pieces.append(
            _Piece(
                kind="paragraph",
                text=text,
                tokens=count_tokens(text),
                overlap_prefix=" ".join(overlap_words),
            )
        )
        prev_window = window
        start = end
    return pieces


def _to_pieces(blocks: list[Block], policy: ChunkPolicy) -> list[_Piece]:
    pieces: list[_Piece] = []
    for block in blocks:
        tokens = count_tokens(block.text)
        if block.kind == "paragraph" and tokens > policy.max_tokens:
            pieces.extend(_split_paragraph(block, policy))
        else:
            pieces.append(_Piece(block.kind, block.text, tokens))
    return pieces


def _chunk_kind(kinds: list[str]) -> str:
    if len(kinds) == 1 and kinds[0] in ("table", "code", "formula"):
        return kinds[0]
    if all(k in ("paragraph", "heading") for k in kinds):
        return "paragraph"
    return "mixed"


def segment(doc: Document, policy: ChunkPolicy) -> list[Chunk]:
    """Pack document blocks into chunks honoring the token budget.

    Tables, code fences, and formulas are never split; a single such block
    larger than max_tokens becomes its own chunk flagged oversized. Adjacent
    prose chunks share an overlap_tokens word tail so joining every chunk's
    core_text reconstructs the document text modulo whitespace.
    """
    pieces = _to_pieces(doc.body, policy)
    chunks: list[Chunk] = []
    current: list[_Piece] = []
    current_tokens = 0

    def flush() -> None:
        nonlocal current, current_tokens
        if not current:
            return
        _emit(current)
        current = []
        current_tokens = 0

    def _emit(group: list[_Piece], oversized: bool = False) -> None:
        overlap = ""
        first = group[0]
        if (
            chunks
            and policy.overlap_tokens > 0
            and first.kind in ("paragraph", "heading")
            and not first.overlap_prefix
        ):
            overlap = _overlap_from(chunks[-1], group, policy)
        parts = ([overlap] if overlap else []) + [p.text for p in group]
        text = "\n\n".join(parts)
        kind = _chunk_kind([p.kind for p in group])
        seq = len(chunks)
        token_count = count_tokens(text)
        chunks.append(
            Chunk(
                id=f"{doc.id}-c{seq:04d}",
                doc_id=doc.id,
                text=text,
                kind=kind,
                tree_path=doc.tree_path,
                token_count=token_count,
                oversized=oversized or token_count > policy.max_tokens,
                overlap_text=overlap if overlap else first.overlap_prefix,
            )
        )

    def _overlap_from(prev: Chunk, group: list[_Piece], pol: ChunkPolicy) -> str:
        # only prose tails carry over; never duplicate a structural block
        prev_tail = prev.text.rsplit("\n\n", 1)[-1]
        if prev_tail.startswith(("```", "$$", "|")):
            return ""
        words = _take_tail(_split_words(prev_tail), pol.overlap_tokens)
        if not words:
            return ""
        core = sum(p.tokens for p in group)
        tail = " ".join(words)
        # keep the combined chunk within max_tokens
        while words and core + count_tokens(tail) > pol.max_tokens:
            words = words[1:]
            tail = " ".join(words)
        return tail

    for piece in pieces:
        if piece.tokens > policy.max_tokens:
            # indivisible (table/code/formula/heading): own chunk, flagged
            flush()
            _emit([piece], oversized=True)
            continue
        if current and current_tokens + piece.tokens > policy.target_tokens:
            flush()
        if piece.overlap_prefix and current:
            # split-paragraph windows always start their own chunk
            flush()
        current.append(piece)
        current_tokens += piece.tokens
    flush()
    return chunks


def reconstruct(chunks: list[Chunk]) -> str:
    """Join chunk cores back into the document text (whitespace-normalized)."""
    return "\n\n".join(c.core_text for c in chunks)


# --- terminology -----------------------------------------------------------


def _compile_glossary(glossary: dict[str, str]):
    for key in glossary:
        if not key or not key.strip():
            raise CorpusError("glossary keys must be non-empty")
    # longest-first so multi-word keys win over their own substrings
    ordered = sorted(glossary, key=len, reverse=True)
    pattern = re.compile(
        r"(?<!\w)(?:" + "|".join(re.escape(k) for k in ordered) + r")(?!\w)",
        re.IGNORECASE,
    )
    lookup = {k.lower(): v for k, v in glossary.items()}
    return pattern, lookup


def normalize_terminology(text: str, glossary: dict[str, str]) -> str:
    """Rewrite glossary variants to their canonical form.

    Matching is whole-word and case-insensitive; output uses the canonical
    casing. The substitution must be idempotent, so every canonical form has
    to be a fixed point; glossaries violating that are rejected.
    """
    if not glossary:
        return text
    pattern, lookup = _compile_glossary(glossary)

    def replace(match: re.Match) -> str:
        return lookup.get(match.group(0).lower(), match.group(0))

    for canonical in glossary.values():
        if pattern.sub(replace, canonical) != canonical:
            raise CorpusError(
                f"glossary is not idempotent: canonical form {canonical!r} "
                "is rewritten again by the glossary"
            )
    return pattern.sub(replace, text)


# --- knowledge tree --------------------------------------------------------


@dataclass
class TreeNode:
    name: str
    tier: str
    children: list["TreeNode"] = field(default_factory=list)


@dataclass
class KnowledgeTree:
    """Three fixed tiers: system_task -> subsystem -> technical_unit.

    Chunks attach to technical_unit leaves via their tree_path
    "system/subsystem/unit".
    """

    roots: list[TreeNode]
    chunk_assignments: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.roots:
            raise CorpusError("knowledge tree needs at least one system_task root")
        for root in self.roots:
            self._check(root, 0)

    def _check(self, node: TreeNode, depth: int) -> None:
        if depth >= len(TREE_TIERS):
            raise CorpusError(f"node {node.name!r} exceeds the three-tier depth")
        expected = TREE_TIERS[depth]
        if node.tier != expected:
            raise CorpusError(
                f"node {node.name!r} has tier {node.tier!r}, expected {expected!r}"
            )
        if node.tier == "technical_unit":
            if node.children:
                raise CorpusError(f"technical_unit {node.name!r} must be a leaf")
        else:
            if not node.children:
                raise CorpusError(
                    f"{node.tier} {node.name!r} must have children down to technical_unit"
                )
            for child in node.children:
                self._check(child, depth + 1)

    def leaf_paths(self) -> list[str]:
        """All technical_unit paths in depth-first manifest order."""
        paths: list[str] = []

        def walk(node: TreeNode, prefix: str) -> None:
            path = f"{prefix}/{node.name}" if prefix else node.name
            if node.tier == "technical_unit":
                paths.append(path)
            for child in node.children:
                walk(child, path)

        for root in self.roots:
            walk(root, "")
        return paths

    @classmethod
    def from_nested(cls, nested: list[dict]) -> "KnowledgeTree":
        """Build from manifest dicts: {name, children: [{name, children: [{name}]}]}."""

        def build(spec: dict, depth: int) -> TreeNode:
            if not isinstance(spec, dict) or "name" not in spec:
                raise CorpusError(f"tree node must be a mapping with a name: {spec!r}")
            children = [build(c, depth + 1) for c in spec.get("children", [])]
            return TreeNode(str(spec["name"]), TREE_TIERS[min(depth, 2)], children)

        return cls(roots=[build(spec, 0) for spec in nested])


def assign_to_tree(tree: KnowledgeTree, chunks: list[Chunk]) -> KnowledgeTree:
    """Attach chunks to their tree_path leaves; unknown paths are rejected."""
    known = set(tree.leaf_paths())
    unknown = [(c.id, c.tree_path) for c in chunks if c.tree_path not in known]
    if unknown:
        listing = ", ".join(f"{cid} -> {path!r}" for cid, path in unknown[:5])
        raise CorpusError(f"chunks reference unknown tree paths: {listing}")
    for chunk in chunks:
        bucket = tree.chunk_assignments.setdefault(chunk.tree_path, [])
        if chunk.id in bucket:
            raise CorpusError(f"chunk {chunk.id} assigned twice")
        bucket.append(chunk.id)
    return tree


@dataclass
class CoverageReport:
    counts: dict[str, int]  # leaf path -> chunk count, gaps listed first
    gaps: list[str]
    total_chunks: int

    def to_record(self) -> dict:
        return {
            "counts": self.counts,
            "gaps": self.gaps,
            "total_chunks": self.total_chunks,
        }


def coverage_report(tree: KnowledgeTree) -> CoverageReport:
    """Chunk counts per technical_unit, zero-count gaps surfaced first."""
    paths = tree.leaf_paths()
    raw = {p: len(tree.chunk_assignments.get(p, [])) for p in paths}
    gaps = [p for p in paths if raw[p] == 0]
    ordered = {p: raw[p] for p in paths if raw[p] == 0}
    ordered.update({p: raw[p] for p in paths if raw[p] > 0})
    return CoverageReport(
        counts=ordered, gaps=gaps, total_chunks=sum(raw.values())
    )


# --- corpus manifest ---------------------------------------------------------


@dataclass
class DocumentSpec:
    path: str  # as written in the manifest; resolve against the manifest dir
    title: str
    tree_path: str


@dataclass
class CorpusManifest:
    tree: KnowledgeTree
    documents: list[DocumentSpec]
    glossary: dict[str, str]
    base_dir: str

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)


def load_corpus_manifest(path: str) -> CorpusManifest:
    """Read the YAML corpus manifest: tree, documents, optional glossary."""
    if not os.path.exists(path):
        raise CorpusError(f"corpus manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise CorpusError(f"bad YAML in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise CorpusError("corpus manifest root must be a mapping")
    unknown = set(data) - {"tree", "documents", "glossary"}
    if unknown:
        raise CorpusError(f"unknown corpus manifest keys: {sorted(unknown)}")
    if "tree" not in data or "documents" not in data:
        raise CorpusError("corpus manifest needs 'tree' and 'documents'")
    tree = KnowledgeTree.from_nested(data["tree"])
    base_dir = os.path.dirname(os.path.abspath(path))
    leaf_paths = set(tree.leaf_paths())
    documents: list[DocumentSpec] = []
    for entry in data["documents"]:
        if not isinstance(entry, dict) or "path" not in entry or "tree_path" not in entry:
            raise CorpusError(f"document entry needs path and tree_path: {entry!r}")
        spec = DocumentSpec(
            path=str(entry["path"]),
            title=str(entry.get("title", entry["path"])),
            tree_path=str(entry["tree_path"]),
        )
        if spec.tree_path not in leaf_paths:
            raise CorpusError(
                f"document {spec.path!r} names unknown tree path {spec.tree_path!r}"
            )
        full = spec.path if os.path.isabs(spec.path) else os.path.join(base_dir, spec.path)
        if not os.path.exists(full):
            raise CorpusError(f"document file missing: {full}")
        documents.append(spec)
    if not documents:
        raise CorpusError("corpus manifest lists no documents")
    glossary = data.get("glossary") or {}
    if not isinstance(glossary, dict):
        raise CorpusError("glossary must be a mapping")
    return CorpusManifest(
        tree=tree,
        documents=documents,
        glossary={str(k): str(v) for k, v in glossary.items()},
        base_dir=base_dir,
    )
