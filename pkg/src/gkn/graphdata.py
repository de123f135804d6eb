"""Patient event graphs: JSONL serialization, vocabulary, and batching.

File formats
------------
Graphs are stored as JSONL, one graph per line::

    {"id": str, "label": 0|1, "nodes": ["CODE", ...],
     "edges": [[src, dst, weight_days], ...]}

Node entries are code strings resolved against a vocabulary; edge indices
are 0-based positions into ``nodes``. A vocabulary file holds one code per
line, the line number being the code id.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse as sp

from .errors import DataError

EDGE_TRANSFORMS = ("log1p", "identity")


class Vocabulary:
    """Bijective code <-> dense id mapping."""

    def __init__(self, codes):
        self.codes = list(codes)
        self._index = {}
        for i, code in enumerate(self.codes):
            if code in self._index:
                raise DataError(f"duplicate code in vocabulary: {code!r}")
            self._index[code] = i

    def __len__(self) -> int:
        return len(self.codes)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.codes == other.codes

    def __contains__(self, code: str) -> bool:
        return code in self._index

    def id(self, code: str) -> int:
        try:
            return self._index[code]
        except KeyError:
            raise DataError(f"unknown code: {code!r}") from None

    def code(self, idx: int) -> str:
        return self.codes[idx]

    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.codes).encode("utf-8")).hexdigest()

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            codes = [line.rstrip("\n") for line in fh if line.strip()]
        return cls(codes)

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for code in self.codes:
                fh.write(code + "\n")


@dataclass
class PatientGraph:
    """Directed acyclic event graph with one binary outcome label.

    ``nodes`` holds vocabulary ids; ``edges`` holds (src, dst, weight)
    with weights in days (the demographic edge carries age in years).
    """

    graph_id: str
    nodes: list[int]
    edges: list[tuple[int, int, float]]
    label: int

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def validate(self, vocab_size: int | None = None) -> None:
        if len(self.nodes) < 1:
            raise DataError(f"graph {self.graph_id}: needs at least one node")
        if self.label not in (0, 1):
            raise DataError(f"graph {self.graph_id}: label must be 0 or 1, got {self.label!r}")
        n = len(self.nodes)
        for code in self.nodes:
            if not isinstance(code, (int, np.integer)) or code < 0:
                raise DataError(f"graph {self.graph_id}: bad node code {code!r}")
            if vocab_size is not None and code >= vocab_size:
                raise DataError(f"graph {self.graph_id}: code id {code} outside vocabulary of size {vocab_size}")
        for src, dst, w in self.edges:
            if not (0 <= src < n and 0 <= dst < n):
                raise DataError(f"graph {self.graph_id}: edge ({src},{dst}) has out-of-range endpoint")
            if src == dst:
                raise DataError(f"graph {self.graph_id}: self-edge ({src},{dst}) not allowed")
            if not np.isfinite(w) or w < 0:
                raise DataError(f"graph {self.graph_id}: edge ({src},{dst}) has bad weight {w!r}")
        cycle_edge = _find_cycle_edge(n, self.edges)
        if cycle_edge is not None:
            raise DataError(
                f"graph {self.graph_id}: not a DAG, cycle through edge {cycle_edge[0]}->{cycle_edge[1]}"
            )


def _find_cycle_edge(n: int, edges) -> tuple[int, int] | None:
    """Kahn's algorithm; on failure, DFS the residual subgraph for a back edge."""
    out = [[] for _ in range(n)]
    indeg = [0] * n
    for src, dst, _ in edges:
        out[src].append(dst)
        indeg[dst] += 1
    queue = [i for i in range(n) if indeg[i] == 0]
    seen = 0
    while queue:
        u = queue.pop()
        seen += 1
        for v in out[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                queue.append(v)
    if seen == n:
        return None
    # find one edge on a cycle among nodes with indeg > 0
    residual = {i for i in range(n) if indeg[i] > 0}
    start = min(residual)
    state = dict.fromkeys(residual, 0)  # 0 new, 1 on stack, 2 done
    stack = [(start, iter(out[start]))]
    state[start] = 1
    while stack:
        u, it = stack[-1]
        advanced = False
        for v in it:
            if v not in residual:
                continue
            if state[v] == 1:
                return (u, v)
            if state[v] == 0:
                state[v] = 1
                stack.append((v, iter(out[v])))
                advanced = True
                break
        if not advanced:
            state[u] = 2
            stack.pop()
    return (start, start)  # unreachable for a true cycle


def load_graphs(path, vocab: Vocabulary | None = None) -> tuple[list[PatientGraph], Vocabulary]:
    """Load graphs from JSONL; builds the vocabulary unless one is supplied."""
    raw = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataError(f"{path}:{lineno}: invalid JSON ({err.msg})") from None
            for key in ("id", "label", "nodes", "edges"):
                if key not in rec:
                    raise DataError(f"{path}:{lineno}: missing field {key!r}")
            raw.append((lineno, rec))

    if vocab is None:
        codes = []
        seen = set()
        for _, rec in raw:
            for code in rec["nodes"]:
                if code not in seen:
                    seen.add(code)
                    codes.append(code)
        vocab = Vocabulary(codes)

    graphs = []
    for lineno, rec in raw:
        try:
            nodes = [vocab.id(code) for code in rec["nodes"]]
        except DataError as err:
            raise DataError(f"{path}:{lineno}: {err}") from None
        edges = []
        for e in rec["edges"]:
            if len(e) != 3:
                raise DataError(f"{path}:{lineno}: edge must be [src, dst, weight], got {e!r}")
            edges.append((int(e[0]), int(e[1]), float(e[2])))
        g = PatientGraph(graph_id=str(rec["id"]), nodes=nodes, edges=edges, label=int(rec["label"]))
        try:
            g.validate(vocab_size=len(vocab))
        except DataError as err:
            raise DataError(f"{path}:{lineno}: {err}") from None
        graphs.append(g)
    return graphs, vocab


def write_graphs(path, graphs, vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            rec = {
                "id": g.graph_id,
                "label": int(g.label),
                "nodes": [vocab.code(i) for i in g.nodes],
                "edges": [[int(s), int(d), float(w)] for s, d, w in g.edges],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


@dataclass
class GraphBatch:
    """Block-diagonal concatenation of graphs, the unit of every forward pass."""

    x: np.ndarray           # (total_nodes, vocab_size) one-hot
    adj: sp.csr_matrix      # (total_nodes, total_nodes) weighted, block-diagonal
    segments: np.ndarray    # (total_nodes,) graph index per node
    labels: np.ndarray      # (num_graphs,)
    sizes: np.ndarray       # (num_graphs,) node count per graph
    graph_ids: list[str] = field(default_factory=list)

    @property
    def total_nodes(self) -> int:
        return self.x.shape[0]

    @property
    def num_graphs(self) -> int:
        return len(self.sizes)


def transform_weight(w, transform: str):
    if transform == "log1p":
        return np.log1p(w)
    if transform == "identity":
        return w
    raise DataError(f"unknown edge transform {transform!r}, expected one of {EDGE_TRANSFORMS}")


def make_batch(graphs, vocab_size: int, transform: str = "log1p",
               symmetrize: bool = False) -> GraphBatch:
    """Stack graphs into one block-diagonal batch with transformed edge weights."""
    if not graphs:
        raise DataError("make_batch: empty graph list")
    total = sum(g.num_nodes for g in graphs)
    x = np.zeros((total, vocab_size), dtype=np.float64)
    segments = np.empty(total, dtype=np.intp)
    rows, cols, vals = [], [], []
    offset = 0
    for gi, g in enumerate(graphs):
        idx = np.asarray(g.nodes, dtype=np.intp)
        if idx.size and idx.max() >= vocab_size:
            raise DataError(f"graph {g.graph_id}: code id exceeds vocabulary size {vocab_size}")
        x[np.arange(offset, offset + g.num_nodes), idx] = 1.0
        segments[offset:offset + g.num_nodes] = gi
        for src, dst, w in g.edges:
            rows.append(offset + src)
            cols.append(offset + dst)
            vals.append(transform_weight(float(w), transform))
        offset += g.num_nodes
    adj = sp.coo_matrix((vals, (rows, cols)), shape=(total, total)).tocsr()
    if symmetrize:
        adj = adj + adj.T
    return GraphBatch(
        x=x,
        adj=adj,
        segments=segments,
        labels=np.asarray([g.label for g in graphs], dtype=np.intp),
        sizes=np.asarray([g.num_nodes for g in graphs], dtype=np.intp),
        graph_ids=[g.graph_id for g in graphs],
    )


def normalized_adjacency(batch: GraphBatch) -> sp.csr_matrix:
    """Row-normalized adjacency with unit self-loops: every row sums to 1."""
    n = batch.total_nodes
    a_tilde = (batch.adj + sp.identity(n, format="csr", dtype=np.float64)).tocsr()
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    return (sp.diags(1.0 / deg) @ a_tilde).tocsr()
