from __future__ import annotations

import textwrap

import pytest
from hypothesis import given, settings, strategies as st

from bloomforge.corpus import (
    Chunk,
    ChunkPolicy,
    KnowledgeTree,
    assign_to_tree,
    count_tokens,
    coverage_report,
    ingest_document,
    load_corpus_manifest,
    normalize_terminology,
    parse_blocks,
    reconstruct,
    segment,
)
from bloomforge.errors import CorpusError
from oracles import ref_tokenize


def words(n: int, stem: str = "w") -> str:
    return " ".join(f"{stem}{i}" for i in range(n))


# --- block parsing -----------------------------------------------------------


def test_single_paragraph():
    doc = ingest_document("just one paragraph of text")
    assert [b.kind for b in doc.body] == ["paragraph"]


def test_code_fence_between_paragraphs():
    raw = "intro paragraph\n\n```py\nx = 1\n```\n\nclosing paragraph"
    doc = ingest_document(raw)
    assert [b.kind for b in doc.body] == ["paragraph", "code", "paragraph"]
    assert doc.body[1].text == "```py\nx = 1\n```"


def test_heading_table_formula_kinds():
    raw = textwrap.dedent(
        """\
        # Tracking

        | a | b |
        | 1 | 2 |

        $$E = mc^2$$

        $$
        x + y
        $$
        """
    )
    doc = ingest_document(raw)
    assert [b.kind for b in doc.body] == ["heading", "table", "formula", "formula"]


def test_empty_document_rejected():
    with pytest.raises(CorpusError, match="empty document"):
        ingest_document("   \n  ")


def test_unclosed_fence_names_line():
    with pytest.raises(CorpusError, match="line 3"):
        parse_blocks("para\n\n```py\nx = 1")


def test_unclosed_formula_names_line():
    with pytest.raises(CorpusError, match="line 1"):
        parse_blocks("$$\nx + y")


def test_doc_ids_are_content_addressed():
    a = ingest_document("same text", source_path="a.md")
    b = ingest_document("same text", source_path="a.md")
    c = ingest_document("same text", source_path="c.md")
    assert a.id == b.id
    assert a.id != c.id
    assert a.id.startswith("d")


# --- segmentation ------------------------------------------------------------


def test_small_doc_is_one_chunk():
    doc = ingest_document(words(5))
    chunks = segment(doc, ChunkPolicy(10, 20, 0))
    assert len(chunks) == 1
    assert chunks[0].text == words(5)
    assert chunks[0].kind == "paragraph"
    assert not chunks[0].oversized


def test_three_paragraphs_at_2_5x_target_make_three_chunks():
    paragraphs = [words(8, "a"), words(9, "b"), words(8, "c")]
    doc = ingest_document("\n\n".join(paragraphs))
    assert sum(count_tokens(p) for p in paragraphs) == 25  # 2.5x target
    chunks = segment(doc, ChunkPolicy(target_tokens=10, max_tokens=20, overlap_tokens=0))
    assert [c.text for c in chunks] == paragraphs


def test_oversized_table_is_single_flagged_chunk():
    rows = "\n".join(f"| r{i} | v{i} |" for i in range(20))  # 40 tokens, 2x max
    doc = ingest_document(rows)
    chunks = segment(doc, ChunkPolicy(target_tokens=15, max_tokens=20, overlap_tokens=0))
    assert len(chunks) == 1
    assert chunks[0].kind == "table"
    assert chunks[0].oversized
    assert chunks[0].text == rows


def test_structural_blocks_never_split():
    raw = "\n\n".join(
        [words(6, "p"), "```\n" + words(10, "c") + "\n```", words(6, "q")]
    )
    chunks = segment(ingest_document(raw), ChunkPolicy(8, 12, 0))
    for chunk in chunks:
        assert chunk.text.count("```") in (0, 2)


def test_oversized_paragraph_windows_carry_overlap():
    doc = ingest_document(words(30))
    chunks = segment(doc, ChunkPolicy(target_tokens=10, max_tokens=12, overlap_tokens=3))
    assert len(chunks) > 1
    for prev, cur in zip(chunks, chunks[1:]):
        assert cur.overlap_text
        assert prev.text.endswith(cur.overlap_text)
        assert cur.text.startswith(cur.overlap_text)
    assert ref_tokenize(reconstruct(chunks)) == ref_tokenize(doc.body[0].text)


def test_chunk_ids_are_sequential_per_doc():
    doc = ingest_document("\n\n".join(words(8, f"s{i}") for i in range(4)))
    chunks = segment(doc, ChunkPolicy(10, 20, 0))
    assert [c.id for c in chunks] == [f"{doc.id}-c{i:04d}" for i in range(len(chunks))]


@st.composite
def _documents(draw):
    kinds = st.sampled_from(["paragraph", "code", "table", "heading", "formula"])
    blocks = []
    for i in range(draw(st.integers(1, 6))):
        kind = draw(kinds)
        n = draw(st.integers(1, 40))
        body = words(n, f"b{i}x")
        if kind == "paragraph":
            blocks.append(body)
        elif kind == "code":
            blocks.append(f"```\n{body}\n```")
        elif kind == "table":
            blocks.append("\n".join(f"| {w} |" for w in body.split()[:10]))
        elif kind == "heading":
            blocks.append(f"## {body.split()[0]}")
        else:
            blocks.append(f"$${body}$$")
    return "\n\n".join(blocks)


@settings(max_examples=60, deadline=None)
@given(
    raw=_documents(),
    target=st.integers(5, 30),
    slack=st.integers(0, 20),
    overlap=st.integers(0, 4),
)
def test_segmentation_is_lossless_and_budgeted(raw, target, slack, overlap):
    policy = ChunkPolicy(target, target + slack, min(overlap, target - 1))
    doc = ingest_document(raw)
    chunks = segment(doc, policy)
    assert chunks
    # modulo whitespace the token stream survives chunking exactly
    expected = ref_tokenize("\n\n".join(b.text for b in doc.body))
    assert ref_tokenize(reconstruct(chunks)) == expected
    for chunk in chunks:
        assert chunk.token_count == count_tokens(chunk.text)
        assert chunk.token_count > 0
        if not chunk.oversized:
            assert chunk.token_count <= policy.max_tokens
        assert chunk.kind in ("paragraph", "table", "code", "formula", "mixed")


def test_policy_validation():
    with pytest.raises(CorpusError):
        ChunkPolicy(target_tokens=0, max_tokens=10, overlap_tokens=0)
    with pytest.raises(CorpusError):
        ChunkPolicy(target_tokens=10, max_tokens=8, overlap_tokens=0)
    with pytest.raises(CorpusError):
        ChunkPolicy(target_tokens=10, max_tokens=10, overlap_tokens=10)


# --- terminology -------------------------------------------------------------


def test_glossary_single_substitution():
    out = normalize_terminology(
        "the LEO satellite", {"LEO satellite": "low-Earth-orbit satellite"}
    )
    assert out == "the low-Earth-orbit satellite"


def test_glossary_empty_is_identity():
    assert normalize_terminology("anything", {}) == "anything"


def test_glossary_case_insensitive_canonical_cased():
    out = normalize_terminology("GEO belt and geo belt", {"geo belt": "GEO belt"})
    assert out == "GEO belt and GEO belt"


def test_glossary_whole_word_only():
    out = normalize_terminology("LEOPARD is not LEO", {"LEO": "low Earth orbit"})
    assert out == "LEOPARD is not low Earth orbit"


def test_glossary_longest_key_wins():
    glossary = {"orbit": "trajectory", "orbit determination": "OD"}
    assert normalize_terminology("orbit determination", glossary) == "OD"


def test_glossary_rejects_non_fixed_point():
    with pytest.raises(CorpusError, match="idempotent"):
        normalize_terminology("x", {"radar": "radar sensor", "sensor": "detector"})


@settings(max_examples=60, deadline=None)
@given(
    st.text(
        alphabet=st.sampled_from(list("abco RADsatellite.,-")), max_size=80
    )
)
def test_glossary_idempotent(text):
    glossary = {"RAD": "radiation sensor", "sat": "satellite"}
    once = normalize_terminology(text, glossary)
    assert normalize_terminology(once, glossary) == once


# --- knowledge tree ----------------------------------------------------------


def nested_tree():
    return [
        {
            "name": "ops",
            "children": [
                {"name": "tracking", "children": [{"name": "radar"}, {"name": "optical"}]},
                {"name": "catalog", "children": [{"name": "correlation"}]},
            ],
        }
    ]


def chunk_with_path(cid: str, path: str) -> Chunk:
    return Chunk(
        id=cid, doc_id="d0", text="t", kind="paragraph", tree_path=path, token_count=1
    )


def test_tree_tiers_and_leaf_paths():
    tree = KnowledgeTree.from_nested(nested_tree())
    assert tree.leaf_paths() == [
        "ops/tracking/radar",
        "ops/tracking/optical",
        "ops/catalog/correlation",
    ]
    tiers = {root.tier for root in tree.roots}
    assert tiers == {"system_task"}


def test_tree_rejects_leafless_subsystem():
    with pytest.raises(CorpusError, match="children"):
        KnowledgeTree.from_nested([{"name": "ops", "children": [{"name": "tracking", "children": []}]}])


def test_assign_preserves_ingestion_order():
    tree = KnowledgeTree.from_nested(nested_tree())
    chunks = [
        chunk_with_path("c2", "ops/tracking/radar"),
        chunk_with_path("c1", "ops/tracking/radar"),
    ]
    assign_to_tree(tree, chunks)
    assert tree.chunk_assignments["ops/tracking/radar"] == ["c2", "c1"]


def test_assign_unknown_path_names_it():
    tree = KnowledgeTree.from_nested(nested_tree())
    with pytest.raises(CorpusError, match="ops/lasers/none"):
        assign_to_tree(tree, [chunk_with_path("c1", "ops/lasers/none")])


def test_coverage_totals_and_gap_order():
    tree = KnowledgeTree.from_nested(nested_tree())
    assign_to_tree(
        tree,
        [
            chunk_with_path("c1", "ops/tracking/radar"),
            chunk_with_path("c2", "ops/tracking/radar"),
            chunk_with_path("c3", "ops/tracking/optical"),
        ],
    )
    report = coverage_report(tree)
    assert report.total_chunks == 3
    assert report.gaps == ["ops/catalog/correlation"]
    assert list(report.counts)[0] == "ops/catalog/correlation"  # gaps lead
    assert report.counts["ops/tracking/radar"] == 2


# --- corpus manifest ---------------------------------------------------------


def write_manifest(tmp_path, glossary: bool = True) -> str:
    (tmp_path / "a.md").write_text("alpha doc body", encoding="utf-8")
    (tmp_path / "b.md").write_text("beta doc body", encoding="utf-8")
    lines = [
        "tree:",
        "  - name: ops",
        "    children:",
        "      - name: tracking",
        "        children:",
        "          - name: radar",
        "          - name: optical",
        "documents:",
        "  - path: a.md",
        "    title: Alpha",
        "    tree_path: ops/tracking/radar",
        "  - path: b.md",
        "    tree_path: ops/tracking/optical",
    ]
    if glossary:
        lines += ["glossary:", "  sat: satellite"]
    path = tmp_path / "corpus.yaml"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


def test_manifest_loads(tmp_path):
    manifest = load_corpus_manifest(write_manifest(tmp_path))
    assert [d.title for d in manifest.documents] == ["Alpha", "b.md"]
    assert manifest.glossary == {"sat": "satellite"}
    assert manifest.tree.leaf_paths() == ["ops/tracking/radar", "ops/tracking/optical"]


def test_manifest_rejects_unknown_tree_path(tmp_path):
    path = write_manifest(tmp_path)
    text = (tmp_path / "corpus.yaml").read_text(encoding="utf-8")
    (tmp_path / "corpus.yaml").write_text(
        text.replace("ops/tracking/optical", "ops/missing/unit"), encoding="utf-8"
    )
    with pytest.raises(CorpusError, match="ops/missing/unit"):
        load_corpus_manifest(path)


def test_manifest_rejects_missing_file(tmp_path):
    path = write_manifest(tmp_path)
    (tmp_path / "b.md").unlink()
    with pytest.raises(CorpusError, match="b.md"):
        load_corpus_manifest(path)
