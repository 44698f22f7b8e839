"""Directed-graph topology, incidence matrices, and spanning-tree tools.

Nodes are labeled 1..n and edges 1..m.  An edge id is the 1-based position
of its (src, dst) pair in the edge list, so ids printed by the tools line
up with graph files and schedules.  Everything here is a pure function of
immutable inputs; nothing mutates shared state.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, InternalError, ScheduleError, TopologyError


@dataclass(frozen=True)
class DirectedGraph:
    """A simple directed graph: no self loops, no duplicate (src, dst) pairs."""

    node_count: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if self.node_count < 1:
            raise TopologyError("graph needs at least one node")
        clean = tuple((int(a), int(b)) for a, b in self.edges)
        object.__setattr__(self, "edges", clean)
        seen: set[tuple[int, int]] = set()
        for eid, (src, dst) in enumerate(clean, start=1):
            if not (1 <= src <= self.node_count and 1 <= dst <= self.node_count):
                raise TopologyError(f"edge {eid} endpoint out of range: ({src}, {dst})")
            if src == dst:
                raise TopologyError(f"edge {eid} is a self loop at node {src}")
            if (src, dst) in seen:
                raise TopologyError(f"duplicate edge ({src}, {dst})")
            seen.add((src, dst))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def source(self, edge_id: int) -> int:
        return self.edges[edge_id - 1][0]

    def destination(self, edge_id: int) -> int:
        return self.edges[edge_id - 1][1]

    def out_adjacency(self) -> dict[int, list[tuple[int, int]]]:
        """Map node -> [(dst, edge id), ...] sorted by destination id."""
        adj: dict[int, list[tuple[int, int]]] = {v: [] for v in range(1, self.node_count + 1)}
        for eid, (src, dst) in enumerate(self.edges, start=1):
            adj[src].append((dst, eid))
        for v in adj:
            adj[v].sort()
        return adj


@dataclass(frozen=True, eq=False)
class IncidenceSet:
    """Source (S), destination (D), and signed (B = S - D) incidence matrices."""

    S: np.ndarray
    D: np.ndarray
    B: np.ndarray


def build_incidence(graph: DirectedGraph) -> IncidenceSet:
    """Build the n x m incidence matrices of the graph.

    S[i, e] = 1 iff node i+1 is the source of edge e+1, D likewise for the
    destination, and B = S - D (every column holds one +1 and one -1).
    """
    n, m = graph.node_count, graph.edge_count
    S = np.zeros((n, m), dtype=np.int64)
    D = np.zeros((n, m), dtype=np.int64)
    for ei, (src, dst) in enumerate(graph.edges):
        S[src - 1, ei] = 1
        D[dst - 1, ei] = 1
    return IncidenceSet(S=S, D=D, B=S - D)


def _reachable(graph: DirectedGraph, start: int, reverse: bool) -> set[int]:
    adj: dict[int, list[int]] = {v: [] for v in range(1, graph.node_count + 1)}
    for src, dst in graph.edges:
        if reverse:
            adj[dst].append(src)
        else:
            adj[src].append(dst)
    seen = {start}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return seen


def is_strongly_connected(graph: DirectedGraph) -> bool:
    """True iff every ordered node pair is joined by a directed path."""
    if graph.node_count == 1:
        return True
    n = graph.node_count
    return len(_reachable(graph, 1, False)) == n and len(_reachable(graph, 1, True)) == n


@dataclass(frozen=True, eq=False)
class SpanningTree:
    """An outward directed spanning tree: n - 1 edges leading away from root.

    parent_edge maps each non-root node to the unique tree edge whose
    destination it is.
    """

    graph: DirectedGraph
    root: int
    tree_edges: tuple[int, ...]
    parent_edge: Mapping[int, int]


def outward_spanning_tree(graph: DirectedGraph, root: int) -> SpanningTree:
    """Deterministic BFS tree from the root, lowest-id neighbors first."""
    if not 1 <= root <= graph.node_count:
        raise TopologyError(f"root {root} not in 1..{graph.node_count}")
    adj = graph.out_adjacency()
    parent: dict[int, int] = {}
    visited = {root}
    queue = deque([root])
    while queue:
        v = queue.popleft()
        for dst, eid in adj[v]:
            if dst not in visited:
                visited.add(dst)
                parent[dst] = eid
                queue.append(dst)
    if len(visited) != graph.node_count:
        missing = sorted(set(range(1, graph.node_count + 1)) - visited)
        raise TopologyError(f"nodes {missing} unreachable from root {root}")
    return SpanningTree(
        graph=graph,
        root=root,
        tree_edges=tuple(sorted(parent.values())),
        parent_edge=dict(sorted(parent.items())),
    )


def tree_edge_into(tree: SpanningTree, node: int) -> int:
    """The unique tree edge whose destination is `node` (node != root)."""
    if node == tree.root:
        raise TopologyError(f"root node {tree.root} has no incoming tree edge")
    try:
        return tree.parent_edge[node]
    except KeyError as exc:
        raise TopologyError(f"node {node} not in the tree") from exc


def precedes(tree: SpanningTree, f: int, g: int) -> bool:
    """True iff a directed tree walk of nonzero length runs dst(f) -> dst(g)."""
    members = set(tree.tree_edges)
    if f not in members or g not in members:
        raise ScheduleError(f"edges {f}, {g} must both be tree edges")
    graph = tree.graph
    target = graph.destination(f)
    cur = graph.destination(g)
    while cur != tree.root:
        cur = graph.source(tree.parent_edge[cur])
        if cur == target:
            return True
    return False


def consistent_ordering(tree: SpanningTree) -> tuple[int, ...]:
    """Tree edges in an order where every edge follows its tree ancestors.

    Among edges whose ancestors are all placed, the lowest edge id goes
    first, which makes the result deterministic.
    """
    graph = tree.graph
    placed: set[int] = set()
    order: list[int] = []
    remaining = set(tree.tree_edges)
    while remaining:
        ready = [
            e
            for e in sorted(remaining)
            if graph.source(e) == tree.root or tree.parent_edge[graph.source(e)] in placed
        ]
        if not ready:
            raise InternalError("spanning tree has no processable edge; tree is corrupt")
        nxt = ready[0]
        order.append(nxt)
        placed.add(nxt)
        remaining.remove(nxt)
    return tuple(order)


def validate_ordering(tree: SpanningTree, ordering: Sequence[int]) -> bool:
    """Check a user-supplied ordering against the tree's partial order.

    Raises ScheduleError when the edge set is wrong; returns False when the
    set is right but some edge appears before one of its tree ancestors.
    """
    seq = tuple(int(e) for e in ordering)
    if len(set(seq)) != len(seq) or set(seq) != set(tree.tree_edges):
        raise ScheduleError("ordering must contain exactly the tree edges, once each")
    for q in range(len(seq)):
        for p in range(q):
            if precedes(tree, seq[q], seq[p]):
                return False
    return True


def integer_determinant(mat: np.ndarray) -> int:
    """Exact determinant of an integer matrix (fraction-free Bareiss)."""
    a = [[int(v) for v in row] for row in np.asarray(mat)]
    n = len(a)
    if n == 0:
        return 1
    sign = 1
    prev = 1
    for k in range(n - 1):
        if a[k][k] == 0:
            pivot = next((i for i in range(k + 1, n) if a[i][k] != 0), None)
            if pivot is None:
                return 0
            a[k], a[pivot] = a[pivot], a[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[-1][-1]


@dataclass(frozen=True, eq=False)
class SmithPartition:
    """Unimodular tree/non-tree split of the incidence matrix.

    Columns are permuted so the tree edges (ascending id) come first and the
    root's row is dropped.  B11 is the (n-1) x (n-1) tree block, B12 holds
    the remaining columns, and N = B11^-1 B12 is integral; the columns of
    [-N; I] (mapped back to original edge positions) span the cycle space.
    """

    B11: np.ndarray
    B12: np.ndarray
    N: np.ndarray
    tree_edge_ids: tuple[int, ...]
    nontree_edge_ids: tuple[int, ...]
    row_nodes: tuple[int, ...]
    root: int


def smith_partition(incidence: IncidenceSet, tree: SpanningTree) -> SmithPartition:
    """Partition B by tree membership and verify unimodularity of B11."""
    B = incidence.B
    n, m = B.shape
    tree_ids = tuple(sorted(tree.tree_edges))
    if len(tree_ids) != n - 1:
        raise InternalError(f"tree has {len(tree_ids)} edges, expected {n - 1}")
    nontree_ids = tuple(e for e in range(1, m + 1) if e not in set(tree_ids))
    row_nodes = tuple(v for v in range(1, n + 1) if v != tree.root)
    rows = [v - 1 for v in row_nodes]
    B11 = B[np.ix_(rows, [e - 1 for e in tree_ids])]
    B12 = B[np.ix_(rows, [e - 1 for e in nontree_ids])]
    det = integer_determinant(B11)
    if abs(det) != 1:
        raise InternalError(f"tree block determinant is {det}, not +-1; edge set is not a spanning tree")
    if nontree_ids:
        solved = np.linalg.solve(B11.astype(float), B12.astype(float))
        N = np.rint(solved).astype(np.int64)
        if not np.array_equal(B11 @ N, B12):
            raise InternalError("tree block solve did not produce an integral N")
    else:
        N = np.zeros((n - 1, 0), dtype=np.int64)
    return SmithPartition(
        B11=B11,
        B12=B12,
        N=N,
        tree_edge_ids=tree_ids,
        nontree_edge_ids=nontree_ids,
        row_nodes=row_nodes,
        root=tree.root,
    )


def cycle_basis(partition: SmithPartition) -> np.ndarray:
    """Integer m x (m - n + 1) matrix whose columns u satisfy B u = 0."""
    m = len(partition.tree_edge_ids) + len(partition.nontree_edge_ids)
    U = np.zeros((m, len(partition.nontree_edge_ids)), dtype=np.int64)
    for j, e in enumerate(partition.nontree_edge_ids):
        U[e - 1, j] = 1
        for r, a in enumerate(partition.tree_edge_ids):
            U[a - 1, j] = -partition.N[r, j]
    return U


def load_graph(source: str | Path | Mapping) -> tuple[DirectedGraph, int | None]:
    """Read a graph document: {"nodes": n, "edges": [[src, dst], ...], "root"?: r}.

    Edge ids are assigned by array position, 1-based.  Returns the graph and
    the optional root.
    """
    if isinstance(source, Mapping):
        doc = source
    else:
        path = Path(source)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read graph file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"graph file {path} is not valid JSON: {exc}") from exc
    try:
        nodes = int(doc["nodes"])
        edges = tuple((int(a), int(b)) for a, b in doc["edges"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"graph document needs integer 'nodes' and a list of [src, dst] 'edges': {exc}") from exc
    root = doc.get("root")
    if root is not None:
        root = int(root)
        if not 1 <= root <= nodes:
            raise ConfigError(f"root {root} not in 1..{nodes}")
    return DirectedGraph(node_count=nodes, edges=edges), root
