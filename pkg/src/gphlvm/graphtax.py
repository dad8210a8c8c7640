"""Taxonomy graphs and labeled datasets.

Graph document (JSON)::

    {"format_version": 1,
     "description": "...",            # optional
     "nodes": [{"id": "a", "label": "A"}, ...],
     "edges": [["a", "b"], ...]}

Dataset file (delimited text)::

    # format_version: 1
    f0,f1,...,class
    0.1,0.2,...,a
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataIOError, ValidationError

FORMAT_VERSION = 1
BUILTIN_TAXONOMIES = ("bimanual", "grasp", "support_pose")


@dataclass(frozen=True, eq=False)
class TaxonomyGraph:
    node_ids: tuple
    labels: tuple
    edges: tuple
    dist: np.ndarray
    laplacian: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    description: str = ""
    index: dict = field(default_factory=dict)

    @classmethod
    def build(cls, nodes, edges, description: str = "") -> "TaxonomyGraph":
        """Validate ``nodes`` [(id, label)] and ``edges`` [(id, id)]; precompute
        hop distances and the Laplacian spectrum."""
        ids, labels, index = [], [], {}
        for node_id, label in nodes:
            node_id = str(node_id)
            if node_id in index:
                raise ValidationError(f"duplicate node id {node_id!r}")
            index[node_id] = len(ids)
            ids.append(node_id)
            labels.append(str(label))
        if not ids:
            raise ValidationError("graph has no nodes")
        n = len(ids)
        W = np.zeros((n, n))
        clean_edges = []
        for e in edges:
            if len(e) != 2:
                raise ValidationError(f"edge {e!r} does not have two endpoints")
            a, b = str(e[0]), str(e[1])
            for end in (a, b):
                if end not in index:
                    raise ValidationError(f"edge ({a!r}, {b!r}) references unknown node {end!r}")
            if a == b:
                raise ValidationError(f"self-loop on node {a!r}")
            i, j = index[a], index[b]
            if W[i, j]:
                raise ValidationError(f"duplicate edge ({a!r}, {b!r})")
            W[i, j] = W[j, i] = 1.0
            clean_edges.append((a, b))

        dist = _bfs_distances(W)
        if np.isinf(dist).any():
            unreachable = [ids[j] for j in np.flatnonzero(np.isinf(dist[0]))]
            raise ValidationError(
                f"graph is disconnected: {unreachable[:5]} unreachable from {ids[0]!r}"
            )
        lap = np.diag(W.sum(1)) - W
        eigvals, eigvecs = np.linalg.eigh(lap)
        eigvals[np.abs(eigvals) < 1e-12] = 0.0
        return cls(
            node_ids=tuple(ids),
            labels=tuple(labels),
            edges=tuple(clean_edges),
            dist=dist,
            laplacian=lap,
            eigvals=eigvals,
            eigvecs=eigvecs,
            description=description,
            index=index,
        )

    def __len__(self):
        return len(self.node_ids)

    def idx(self, node_id) -> int:
        try:
            return self.index[str(node_id)]
        except KeyError:
            raise KeyError(f"unknown taxonomy node {node_id!r}") from None

    def indices(self, node_ids) -> np.ndarray:
        return np.array([self.idx(c) for c in node_ids], dtype=np.int64)

    def graph_distance(self, a, b) -> float:
        return float(self.dist[self.idx(a), self.idx(b)])

    def leaves(self):
        deg = (self.laplacian.diagonal()).astype(int)
        return [nid for nid, d in zip(self.node_ids, deg) if d <= 1]

    def to_dict(self) -> dict:
        out = {"format_version": FORMAT_VERSION}
        if self.description:
            out["description"] = self.description
        out["nodes"] = [{"id": i, "label": l} for i, l in zip(self.node_ids, self.labels)]
        out["edges"] = [list(e) for e in self.edges]
        return out

    def save(self, path) -> None:
        _write_text(path, json.dumps(self.to_dict(), indent=2) + "\n")


def _bfs_distances(W: np.ndarray) -> np.ndarray:
    n = W.shape[0]
    nbrs = [np.flatnonzero(W[i]) for i in range(n)]
    dist = np.full((n, n), np.inf)
    for s in range(n):
        dist[s, s] = 0.0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in nbrs[u]:
                if np.isinf(dist[s, v]):
                    dist[s, v] = dist[s, u] + 1.0
                    queue.append(v)
    return dist


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def _read_text(source) -> str:
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and not source.lstrip().startswith("{")):
        try:
            return Path(source).read_text()
        except OSError as exc:
            raise DataIOError(f"cannot read {source}: {exc}") from exc
    return source


def graph_from_dict(doc: dict) -> TaxonomyGraph:
    if not isinstance(doc, dict):
        raise ValidationError("graph document must be an object")
    unknown = set(doc) - {"format_version", "description", "nodes", "edges"}
    if unknown:
        raise ValidationError(f"unknown graph fields: {sorted(unknown)}")
    version = doc.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ValidationError(f"unsupported graph format_version {version}")
    try:
        nodes = [(n["id"], n.get("label", n["id"])) for n in doc["nodes"]]
        edges = doc.get("edges", [])
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed graph document: {exc}") from exc
    return TaxonomyGraph.build(nodes, edges, description=doc.get("description", ""))


def load_graph(source) -> TaxonomyGraph:
    """Load a graph from a path, a JSON string, or an already-parsed dict."""
    if isinstance(source, dict):
        return graph_from_dict(source)
    text = _read_text(source)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"graph document is not valid JSON: {exc}") from exc
    return graph_from_dict(doc)


def builtin_taxonomy(name: str) -> TaxonomyGraph:
    if name not in BUILTIN_TAXONOMIES:
        raise ValidationError(f"unknown builtin taxonomy {name!r}; choose from {BUILTIN_TAXONOMIES}")
    text = resources.files("gphlvm").joinpath("data", f"{name}.json").read_text()
    return load_graph(json.loads(text))


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    observations: np.ndarray
    classes: tuple
    feature_names: tuple = ()

    def __post_init__(self):
        Y = np.asarray(self.observations, dtype=np.float64)
        if Y.ndim != 2 or Y.shape[0] < 1 or Y.shape[1] < 1:
            raise ValidationError(f"observations must be a non-empty N x D matrix, got shape {Y.shape}")
        if np.isnan(Y).any():
            raise ValidationError("observations contain NaN")
        if len(self.classes) != Y.shape[0]:
            raise ValidationError("one class label per observation required")
        object.__setattr__(self, "observations", Y)
        object.__setattr__(self, "classes", tuple(str(c) for c in self.classes))
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(f"f{d}" for d in range(Y.shape[1])))

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def d(self) -> int:
        return self.observations.shape[1]

    def check_against(self, graph: TaxonomyGraph) -> None:
        for row, c in enumerate(self.classes):
            if c not in graph.index:
                raise ValidationError(f"row {row + 1}: unknown class {c!r}")

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows)
        return LabeledDataset(self.observations[rows], tuple(self.classes[i] for i in rows), self.feature_names)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# format_version: {FORMAT_VERSION}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*self.feature_names, "class"])
        for y, c in zip(self.observations, self.classes):
            w.writerow([repr(float(v)) for v in y] + [c])
        return buf.getvalue()

    def save(self, path) -> None:
        _write_text(path, self.to_csv())


def load_dataset(source, graph: TaxonomyGraph | None = None) -> LabeledDataset:
    """Parse a delimited-text dataset; ``source`` is a path or the file text.

    Errors name the 1-based line number of the offending row.
    """
    text = _read_text(source)
    lines = text.splitlines()
    lineno = 0
    while lineno < len(lines) and (lines[lineno].startswith("#") or not lines[lineno].strip()):
        head = lines[lineno].lstrip("#").strip()
        if head.startswith("format_version"):
            version = head.split(":", 1)[1].strip()
            if version != str(FORMAT_VERSION):
                raise ValidationError(f"line {lineno + 1}: unsupported format_version {version}")
        lineno += 1
    if lineno >= len(lines):
        raise ValidationError("dataset has no header row")
    rows = list(csv.reader(lines[lineno:]))
    header = [h.strip() for h in rows[0]]
    if "class" not in header:
        raise ValidationError(f"line {lineno + 1}: header lacks a 'class' column")
    cls_col = header.index("class")
    feat_cols = [i for i, h in enumerate(header) if i != cls_col]
    if not feat_cols:
        raise ValidationError(f"line {lineno + 1}: no feature columns")
    Y, classes = [], []
    for k, row in enumerate(rows[1:]):
        line = lineno + 2 + k
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ValidationError(f"line {line}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(row[i]) for i in feat_cols]
        except ValueError as exc:
            raise ValidationError(f"line {line}: non-numeric feature ({exc})") from None
        if any(math.isnan(v) for v in vals):
            raise ValidationError(f"line {line}: NaN feature")
        c = row[cls_col].strip()
        if graph is not None and c not in graph.index:
            raise ValidationError(f"line {line}: unknown class {c!r}")
        Y.append(vals)
        classes.append(c)
    if not Y:
        raise ValidationError("dataset has no rows")
    return LabeledDataset(np.array(Y), tuple(classes), tuple(header[i] for i in feat_cols))


def _tree_id(path) -> str:
    return "r" + "".join(f".{p}" for p in path)


def balanced_tree(depth: int, branching: int) -> TaxonomyGraph:
    if depth < 1 or branching < 2:
        raise ValidationError("need depth >= 1 and branching >= 2")
    nodes, edges = [("r", "root")], []
    frontier = [()]
    for _ in range(depth):
        nxt = []
        for path in frontier:
            for b in range(branching):
                child = path + (b,)
                nodes.append((_tree_id(child), _tree_id(child)))
                edges.append((_tree_id(path), _tree_id(child)))
                nxt.append(child)
        frontier = nxt
    return TaxonomyGraph.build(nodes, edges, description=f"balanced tree depth={depth} branching={branching}")


def synthetic_tree(depth: int, branching: int, points_per_node: int, D: int, noise: float,
                   rng: np.random.Generator, step: float = 1.0):
    """Balanced tree taxonomy with noisy per-node observations.

    Node prototypes follow a random walk down the tree (each edge adds an
    independent Gaussian step of expected norm ``step``), so prototype
    separation grows with graph distance. Observations are the prototype
    plus isotropic noise of std ``noise``.
    """
    graph = balanced_tree(depth, branching)
    if points_per_node < 1 or D < 1:
        raise ValidationError("need points_per_node >= 1 and D >= 1")
    protos = {"r": np.zeros(D)}
    for a, b in graph.edges:  # edges are emitted parent-first
        protos[b] = protos[a] + rng.normal(scale=step / math.sqrt(D), size=D)
    Y, classes = [], []
    for nid in graph.node_ids:
        for _ in range(points_per_node):
            Y.append(protos[nid] + noise * rng.normal(size=D))
            classes.append(nid)
    return graph, LabeledDataset(np.array(Y), tuple(classes))
