"""Taxonomy data model, graph queries, leaf masking, and file I/O.

A taxonomy is a DAG of named concepts with parent-to-child edges and a
per-concept initial feature vector.  Instances are immutable after
construction; masking and expansion produce new instances that share the
same Concept objects and id space, so gold-parent ids remain valid across
the original graph, the masked remainder, and any expanded result.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import (
    ConfigError,
    CycleError,
    DimensionMismatchError,
    MissingEmbeddingError,
    TaxonomyError,
    UnknownConceptError,
)
from .rng import seed_stream

__all__ = [
    "VIRTUAL_ROOT",
    "Concept",
    "Taxonomy",
    "TaxonomySplit",
    "EmbeddingTable",
    "read_edge_file",
    "write_edge_file",
    "read_embedding_file",
    "write_embedding_file",
    "load_taxonomy",
    "mask_leaves",
    "split_from_leaf_sets",
    "write_split",
    "read_split",
]

# implicit ancestor of all parentless nodes; depth 0, never a candidate anchor
VIRTUAL_ROOT = -1


@dataclass(frozen=True, eq=False)
class Concept:
    """One taxonomy node: stable integer id, surface name, feature vector."""

    id: int
    name: str
    embedding: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.embedding, dtype=np.float64)
        if vec.ndim != 1:
            raise DimensionMismatchError(
                f"embedding for {self.name!r} must be 1-D, got shape {vec.shape}"
            )
        vec.setflags(write=False)
        object.__setattr__(self, "embedding", vec)

    def __repr__(self) -> str:
        return f"Concept(id={self.id}, name={self.name!r}, dim={self.embedding.size})"


class Taxonomy:
    """An immutable DAG of concepts with parent-to-child edges.

    Ids are unique within the instance but need not be contiguous:
    subgraphs produced by masking keep the ids of the original graph.
    """

    def __init__(self, concepts: Iterable[Concept], edges: Iterable[tuple[int, int]]):
        self._concepts: dict[int, Concept] = {}
        self._id_by_name: dict[str, int] = {}
        dim = None
        for c in concepts:
            if c.id in self._concepts:
                raise TaxonomyError(f"duplicate concept id {c.id}")
            if c.name in self._id_by_name:
                raise TaxonomyError(f"duplicate concept name {c.name!r}")
            if dim is None:
                dim = c.embedding.size
            elif c.embedding.size != dim:
                raise DimensionMismatchError(
                    f"embedding for {c.name!r} has dimension {c.embedding.size}, "
                    f"expected {dim}"
                )
            self._concepts[c.id] = c
            self._id_by_name[c.name] = c.id

        self._parents: dict[int, tuple[int, ...]] = {i: () for i in self._concepts}
        self._children: dict[int, tuple[int, ...]] = {i: () for i in self._concepts}
        edge_set = set()
        for parent, child in edges:
            if parent not in self._concepts:
                raise UnknownConceptError(f"edge references unknown concept id {parent}")
            if child not in self._concepts:
                raise UnknownConceptError(f"edge references unknown concept id {child}")
            if parent == child:
                raise CycleError(f"self-loop on concept id {parent}")
            edge_set.add((parent, child))
        self._edges: tuple[tuple[int, int], ...] = tuple(sorted(edge_set))

        up: dict[int, list[int]] = {i: [] for i in self._concepts}
        down: dict[int, list[int]] = {i: [] for i in self._concepts}
        for parent, child in self._edges:
            down[parent].append(child)
            up[child].append(parent)
        for i in self._concepts:
            self._parents[i] = tuple(sorted(up[i]))
            self._children[i] = tuple(sorted(down[i]))

        self._ids: tuple[int, ...] = tuple(sorted(self._concepts))
        self._row_of: dict[int, int] = {n: r for r, n in enumerate(self._ids)}
        self._topo = self._toposort()
        self._depths: dict[int, int] | None = None
        self._desc_cache: dict[int, frozenset[int]] = {}
        self._anc_cache: dict[int, frozenset[int]] = {}
        self._features: np.ndarray | None = None

    def _toposort(self) -> tuple[int, ...]:
        indegree = {i: len(self._parents[i]) for i in self._ids}
        frontier = [i for i in self._ids if indegree[i] == 0]
        frontier.sort()
        order: list[int] = []
        while frontier:
            n = frontier.pop()
            order.append(n)
            for c in self._children[n]:
                indegree[c] -= 1
                if indegree[c] == 0:
                    frontier.append(c)
        if len(order) != len(self._ids):
            stuck = sorted(set(self._ids) - set(order))
            names = ", ".join(repr(self._concepts[i].name) for i in stuck[:5])
            raise CycleError(f"taxonomy contains a cycle through: {names}")
        return tuple(order)

    # -- basic queries ------------------------------------------------------

    def __len__(self) -> int:
        return len(self._concepts)

    def __contains__(self, concept_id: int) -> bool:
        return concept_id in self._concepts

    def ids(self) -> tuple[int, ...]:
        return self._ids

    def concepts(self) -> Iterator[Concept]:
        for i in self._ids:
            yield self._concepts[i]

    def concept(self, concept_id: int) -> Concept:
        try:
            return self._concepts[concept_id]
        except KeyError:
            raise UnknownConceptError(f"unknown concept id {concept_id}") from None

    def name_of(self, concept_id: int) -> str:
        return self.concept(concept_id).name

    def id_of(self, name: str) -> int:
        try:
            return self._id_by_name[name]
        except KeyError:
            raise UnknownConceptError(f"unknown concept name {name!r}") from None

    def edges(self) -> tuple[tuple[int, int], ...]:
        return self._edges

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    def parents(self, concept_id: int) -> tuple[int, ...]:
        self.concept(concept_id)
        return self._parents[concept_id]

    def children(self, concept_id: int) -> tuple[int, ...]:
        self.concept(concept_id)
        return self._children[concept_id]

    def roots(self) -> tuple[int, ...]:
        return tuple(i for i in self._ids if not self._parents[i])

    def leaves(self) -> tuple[int, ...]:
        return tuple(i for i in self._ids if not self._children[i])

    @property
    def embedding_dim(self) -> int:
        if not self._concepts:
            raise TaxonomyError("empty taxonomy has no embedding dimension")
        return self._concepts[self._ids[0]].embedding.size

    def feature_matrix(self) -> np.ndarray:
        """Initial feature vectors stacked in ascending-id order; cached."""
        if self._features is None:
            mat = np.stack([self._concepts[i].embedding for i in self._ids])
            mat.setflags(write=False)
            self._features = mat
        return self._features

    def row_of(self, concept_id: int) -> int:
        """Row of this concept in feature_matrix / id-ordered outputs."""
        self.concept(concept_id)
        return self._row_of[concept_id]

    # -- reachability -------------------------------------------------------

    def descendants(self, concept_id: int) -> frozenset[int]:
        """All nodes reachable from concept_id via child edges, excluding it."""
        self.concept(concept_id)
        cached = self._desc_cache.get(concept_id)
        if cached is None:
            cached = self._reach(concept_id, self._children)
            self._desc_cache[concept_id] = cached
        return cached

    def ancestors(self, concept_id: int) -> frozenset[int]:
        """All nodes from which concept_id is reachable, excluding it."""
        self.concept(concept_id)
        cached = self._anc_cache.get(concept_id)
        if cached is None:
            cached = self._reach(concept_id, self._parents)
            self._anc_cache[concept_id] = cached
        return cached

    @staticmethod
    def _reach(start: int, step: dict[int, tuple[int, ...]]) -> frozenset[int]:
        seen: set[int] = set()
        stack = list(step[start])
        while stack:
            n = stack.pop()
            if n not in seen:
                seen.add(n)
                stack.extend(step[n])
        return frozenset(seen)

    # -- depth / LCA --------------------------------------------------------

    def depth(self, concept_id: int) -> int:
        """Shortest-path depth with parentless nodes at depth 1.

        The implicit VIRTUAL_ROOT above all parentless nodes has depth 0.
        """
        if concept_id == VIRTUAL_ROOT:
            return 0
        self.concept(concept_id)
        if self._depths is None:
            depths: dict[int, int] = {}
            for n in self._topo:
                ps = self._parents[n]
                depths[n] = 1 if not ps else 1 + min(depths[p] for p in ps)
            self._depths = depths
        return self._depths[concept_id]

    def lca(self, a: int, b: int) -> int:
        """Deepest common ancestor-or-self; ties broken by smallest id.

        Returns VIRTUAL_ROOT when the two nodes share no real ancestor
        (possible only in multi-root taxonomies).
        """
        common = (self.ancestors(a) | {a}) & (self.ancestors(b) | {b})
        if not common:
            return VIRTUAL_ROOT
        return max(common, key=lambda n: (self.depth(n), -n))

    # -- derived graphs -----------------------------------------------------

    def without_nodes(self, removed: Iterable[int]) -> "Taxonomy":
        gone = set(removed)
        for n in gone:
            self.concept(n)
        keep = [self._concepts[i] for i in self._ids if i not in gone]
        edges = [(p, c) for p, c in self._edges if p not in gone and c not in gone]
        return Taxonomy(keep, edges)

    def with_attachments(
        self, additions: Iterable[tuple[Concept, int]]
    ) -> "Taxonomy":
        """Copy-and-extend: each (new concept, parent id) becomes one edge."""
        new_concepts = list(self.concepts())
        new_edges = list(self._edges)
        for concept, parent in additions:
            self.concept(parent)
            new_concepts.append(concept)
            new_edges.append((parent, concept.id))
        return Taxonomy(new_concepts, new_edges)


@dataclass(frozen=True)
class TaxonomySplit:
    """Masked-leaf split: the remaining graph plus held-out queries.

    Each query is a (concept, gold parent ids) pair; gold ids refer to
    nodes of ``existing``.
    """

    existing: Taxonomy
    validation_queries: tuple[tuple[Concept, frozenset[int]], ...]
    test_queries: tuple[tuple[Concept, frozenset[int]], ...]


@dataclass(frozen=True)
class EmbeddingTable:
    dimension: int
    vectors: dict[str, np.ndarray] = field(repr=False)

    def __contains__(self, name: str) -> bool:
        return name in self.vectors

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.vectors[name]
        except KeyError:
            raise MissingEmbeddingError(f"no embedding for concept {name!r}") from None


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def read_edge_file(path: str | Path) -> list[tuple[str, str]]:
    """Parse a TSV of parent-name TAB child-name rows, skipping blank lines."""
    pairs: list[tuple[str, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0] or not fields[1]:
                raise TaxonomyError(
                    f"{path}:{lineno}: expected 'parent<TAB>child', got {line!r}"
                )
            pairs.append((fields[0], fields[1]))
    return pairs


def write_edge_file(taxonomy: Taxonomy, path: str | Path) -> None:
    lines = sorted(
        f"{taxonomy.name_of(p)}\t{taxonomy.name_of(c)}\n" for p, c in taxonomy.edges()
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def read_embedding_file(path: str | Path) -> EmbeddingTable:
    """Parse word2vec text format: header 'count dim', then 'name v1 .. vD'.

    Names may contain spaces; the final ``dim`` tokens of each row are the
    vector, everything before them is the name.
    """
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise TaxonomyError(f"{path}:1: expected 'count dim' header")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise TaxonomyError(f"{path}:1: non-integer header {header}") from None
        if dim < 1 or count < 0:
            raise TaxonomyError(f"{path}:1: invalid header counts {header}")
        vectors: dict[str, np.ndarray] = {}
        for lineno, raw in enumerate(fh, start=2):
            if not raw.strip():
                continue
            tokens = raw.split()
            if len(tokens) < dim + 1:
                raise TaxonomyError(
                    f"{path}:{lineno}: row has {len(tokens)} tokens, "
                    f"need a name plus {dim} values"
                )
            name = " ".join(tokens[: len(tokens) - dim])
            try:
                vec = np.array([float(v) for v in tokens[len(tokens) - dim :]])
            except ValueError:
                raise TaxonomyError(f"{path}:{lineno}: non-numeric value") from None
            if name in vectors:
                raise TaxonomyError(f"{path}:{lineno}: duplicate name {name!r}")
            vectors[name] = vec
    if len(vectors) != count:
        raise TaxonomyError(
            f"{path}: header declares {count} rows, found {len(vectors)}"
        )
    return EmbeddingTable(dimension=dim, vectors=vectors)


def write_embedding_file(table: EmbeddingTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table.vectors)} {table.dimension}\n")
        for name in sorted(table.vectors):
            vals = " ".join(repr(float(v)) for v in table.vectors[name])
            fh.write(f"{name} {vals}\n")


def load_taxonomy(edge_file: str | Path, embedding_file: str | Path) -> Taxonomy:
    """Build a validated taxonomy: edge TSV plus word2vec-text embeddings.

    Ids are assigned by sorted name order, so a given pair of input files
    always produces the same id assignment.
    """
    pairs = read_edge_file(edge_file)
    table = read_embedding_file(embedding_file)
    names = sorted({n for pair in pairs for n in pair})
    if not names:
        raise TaxonomyError(f"{edge_file}: no edges found")
    concepts = [Concept(i, name, table[name]) for i, name in enumerate(names)]
    id_of = {c.name: c.id for c in concepts}
    return Taxonomy(concepts, [(id_of[p], id_of[c]) for p, c in pairs])


# ---------------------------------------------------------------------------
# masking
# ---------------------------------------------------------------------------


def split_from_leaf_sets(
    taxonomy: Taxonomy,
    validation_leaves: Iterable[int],
    test_leaves: Iterable[int],
) -> TaxonomySplit:
    """Mask the given leaves out of the taxonomy as held-out queries."""
    val_ids = sorted(set(validation_leaves))
    test_ids = sorted(set(test_leaves))
    overlap = set(val_ids) & set(test_ids)
    if overlap:
        raise TaxonomyError(f"leaves assigned to both splits: {sorted(overlap)}")
    all_leaves = set(taxonomy.leaves())
    for n in (*val_ids, *test_ids):
        if n not in all_leaves:
            raise TaxonomyError(
                f"only leaves can be masked; {taxonomy.name_of(n)!r} has children"
            )

    def as_queries(ids: list[int]):
        return tuple(
            (taxonomy.concept(n), frozenset(taxonomy.parents(n))) for n in ids
        )

    existing = taxonomy.without_nodes([*val_ids, *test_ids])
    return TaxonomySplit(existing, as_queries(val_ids), as_queries(test_ids))


def mask_leaves(
    taxonomy: Taxonomy, val_ratio: float, test_ratio: float, seed: int
) -> TaxonomySplit:
    """Hold out random leaf fractions as validation and test queries.

    Counts are floor(ratio * num_leaves); selection is a seeded permutation
    of the id-sorted leaf list, validation first, then test.
    """
    for label, ratio in (("val_ratio", val_ratio), ("test_ratio", test_ratio)):
        if not 0.0 <= ratio < 1.0:
            raise ConfigError(f"{label} must lie in [0, 1), got {ratio}")
    if val_ratio + test_ratio >= 1.0:
        raise ConfigError("val_ratio + test_ratio must be < 1")
    leaves = taxonomy.leaves()
    if not leaves:
        raise TaxonomyError("taxonomy has no leaves to mask")
    n_val = int(val_ratio * len(leaves) + 1e-9)
    n_test = int(test_ratio * len(leaves) + 1e-9)
    perm = seed_stream(seed, "split").permutation(len(leaves))
    chosen = [leaves[i] for i in perm[: n_val + n_test]]
    return split_from_leaf_sets(taxonomy, chosen[:n_val], chosen[n_val:])


# ---------------------------------------------------------------------------
# split files
# ---------------------------------------------------------------------------

_SECTIONS = ("#existing-edges", "#validation-queries", "#test-queries")


def write_split(split: TaxonomySplit, path: str | Path) -> None:
    """Three-section TSV: remaining edges, then each query with its gold
    parents pipe-separated.  Deterministic: sections are name-sorted.
    """
    existing = split.existing
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_SECTIONS[0] + "\n")
        for line in sorted(
            f"{existing.name_of(p)}\t{existing.name_of(c)}\n"
            for p, c in existing.edges()
        ):
            fh.write(line)
        for header, queries in (
            (_SECTIONS[1], split.validation_queries),
            (_SECTIONS[2], split.test_queries),
        ):
            fh.write(header + "\n")
            rows = []
            for concept, gold in queries:
                parents = "|".join(sorted(existing.name_of(g) for g in gold))
                rows.append(f"{concept.name}\t{parents}\n")
            fh.writelines(sorted(rows))


def read_split(taxonomy: Taxonomy, path: str | Path) -> TaxonomySplit:
    """Rebuild a split against the full original taxonomy it was made from.

    Existing nodes are everything except the named queries, which keeps
    nodes that the masking left edgeless; the edge section is then verified
    against the reconstruction.
    """
    section = None
    edges: list[tuple[str, str]] = []
    queries: dict[str, list[tuple[str, list[str]]]] = {s: [] for s in _SECTIONS[1:]}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line in _SECTIONS:
                section = line
                continue
            if section is None:
                raise TaxonomyError(f"{path}:{lineno}: content before first section")
            fields = line.split("\t")
            if len(fields) != 2:
                raise TaxonomyError(f"{path}:{lineno}: expected two TAB fields")
            if section == _SECTIONS[0]:
                edges.append((fields[0], fields[1]))
            else:
                if not fields[1]:
                    raise TaxonomyError(f"{path}:{lineno}: query has no gold parents")
                queries[section].append((fields[0], fields[1].split("|")))

    def resolve(name: str, lineno_hint: str) -> int:
        try:
            return taxonomy.id_of(name)
        except UnknownConceptError:
            raise UnknownConceptError(
                f"{path}: {lineno_hint} {name!r} not in the taxonomy"
            ) from None

    masked: list[int] = []
    parsed: dict[str, list[tuple[Concept, frozenset[int]]]] = {}
    for section_name, rows in queries.items():
        out = []
        for qname, gold_names in rows:
            qid = resolve(qname, "query")
            gold = frozenset(resolve(g, "gold parent") for g in gold_names)
            out.append((taxonomy.concept(qid), gold))
            masked.append(qid)
        parsed[section_name] = out
    if len(set(masked)) != len(masked):
        raise TaxonomyError(f"{path}: a query appears in more than one section")

    existing = taxonomy.without_nodes(masked)
    want = {(taxonomy.id_of(p), taxonomy.id_of(c)) for p, c in edges}
    if want != set(existing.edges()):
        raise TaxonomyError(
            f"{path}: edge section disagrees with taxonomy minus queries"
        )
    for _, gold in (*parsed[_SECTIONS[1]], *parsed[_SECTIONS[2]]):
        for g in gold:
            if g not in existing:
                raise TaxonomyError(
                    f"{path}: gold parent {taxonomy.name_of(g)!r} was itself masked"
                )
    return TaxonomySplit(
        existing, tuple(parsed[_SECTIONS[1]]), tuple(parsed[_SECTIONS[2]])
    )
