"""Influence matrix -> causal graph by peeling minimal-influence latents."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .sparse_fit import InfluenceMatrix


class GraphCycleError(ValueError):
    """The peeled edge set is not acyclic."""

    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("cycle before transitive reduction: " + " -> ".join(map(str, self.cycle)))


@dataclass(frozen=True)
class GraphConfig:
    threshold: float = 0.1

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")


@dataclass
class CausalGraph:
    """Attribute DAG plus confounded pairs.

    ``owners`` maps every surviving latent column to the node set that owns
    it: a single attribute, or a whole confounded group. A node's channels
    are the latents of every owner set it belongs to.
    """

    nodes: list[str]
    directed_edges: set[tuple[str, str]] = field(default_factory=set)
    confounded_pairs: set[frozenset[str]] = field(default_factory=set)
    owners: dict[int, tuple[str, ...]] = field(default_factory=dict)

    def channels(self, node: str) -> list[int]:
        return sorted(k for k, own in self.owners.items() if node in own)

    def parents(self, node: str) -> set[str]:
        return {u for u, v in self.directed_edges if v == node}

    def children(self, node: str) -> set[str]:
        return {v for u, v in self.directed_edges if u == node}

    def partners(self, node: str) -> set[str]:
        return {x for p in self.confounded_pairs if node in p for x in p if x != node}

    def all_edges(self) -> list[tuple[str, str]]:
        """Directed edges plus both orientations of each confounded pair."""
        out = set(self.directed_edges)
        for p in self.confounded_pairs:
            a, b = sorted(p)
            out.add((a, b))
            out.add((b, a))
        rank = {n: i for i, n in enumerate(self.nodes)}
        return sorted(out, key=lambda e: (rank[e[0]], rank[e[1]]))

    def descendants(self, node: str) -> set[str]:
        seen, stack = set(), [node]
        while stack:
            for c in self.children(stack.pop()):
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return seen

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        rank = {n: i for i, n in enumerate(self.nodes)}
        return {
            "nodes": [{"name": n, "channels": self.channels(n)} for n in self.nodes],
            "edges": [list(e) for e in sorted(self.directed_edges, key=lambda e: (rank[e[0]], rank[e[1]]))],
            "confounded": sorted(
                (sorted(p, key=rank.__getitem__) for p in self.confounded_pairs),
                key=lambda p: (rank[p[0]], rank[p[1]]),
            ),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CausalGraph":
        nodes = [n["name"] for n in d["nodes"]]
        holders: dict[int, list[str]] = {}
        for n in d["nodes"]:
            for k in n.get("channels", []):
                holders.setdefault(int(k), []).append(n["name"])
        known = set(nodes)
        edges = {(u, v) for u, v in d.get("edges", [])}
        pairs = {frozenset(p) for p in d.get("confounded", [])}
        for u, v in edges:
            if u not in known or v not in known:
                raise ValueError(f"edge {u}->{v} references an unknown node")
        for p in pairs:
            if len(p) != 2 or not p <= known:
                raise ValueError(f"bad confounded pair {sorted(p)}")
        return cls(nodes, edges, pairs, {k: tuple(v) for k, v in sorted(holders.items())})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CausalGraph":
        return cls.from_dict(json.loads(text))

    def to_dot(self, name: str = "G") -> str:
        lines = [f"digraph {name} {{"]
        for n in self.nodes:
            ch = self.channels(n)
            label = f"{n}\\n[{', '.join(f'z{k}' for k in ch)}]" if ch else n
            lines.append(f'  "{n}" [label="{label}"];')
        d = self.to_dict()
        for u, v in d["edges"]:
            lines.append(f'  "{u}" -> "{v}";')
        for a, b in d["confounded"]:
            lines.append(f'  "{a}" -> "{b}" [dir=both, style=dashed];')
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class BlanketResult:
    attribute: str
    blanket_attrs: frozenset[str]
    direct_latents: tuple[int, ...]


def threshold_matrix(W: InfluenceMatrix, cfg: GraphConfig) -> InfluenceMatrix:
    """Zero entries with ``|w| <= threshold`` and drop columns left all-zero."""
    vals = np.where(np.abs(W.values) <= cfg.threshold, 0.0, W.values)
    keep = (vals != 0).any(axis=0)
    return InfluenceMatrix(vals[:, keep], W.attribute_names, tuple(k for k, f in zip(W.latents, keep) if f))


def _find_cycle(nodes, edges):
    succ = {n: [] for n in nodes}
    for u, v in sorted(edges, key=lambda e: (nodes.index(e[0]), nodes.index(e[1]))):
        succ[u].append(v)
    color = dict.fromkeys(nodes, 0)
    for root in nodes:
        if color[root]:
            continue
        stack = [(root, iter(succ[root]))]
        path = [root]
        color[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = 2
                stack.pop()
                path.pop()
            elif color[nxt] == 1:
                return path[path.index(nxt):] + [nxt]
            elif color[nxt] == 0:
                color[nxt] = 1
                stack.append((nxt, iter(succ[nxt])))
                path.append(nxt)
    return None


def _topo(nodes, edges):
    indeg = dict.fromkeys(nodes, 0)
    succ = {n: [] for n in nodes}
    for u, v in edges:
        succ[u].append(v)
        indeg[v] += 1
    ready = [n for n in nodes if indeg[n] == 0]
    order = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        for c in succ[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    if len(order) != len(nodes):
        raise GraphCycleError(_find_cycle(list(nodes), edges))
    return order


def transitive_reduction(edges, nodes=None) -> set[tuple[str, str]]:
    """Minimal edge subset of a DAG with the same reachability relation."""
    edges = set(edges)
    if nodes is None:
        nodes = sorted({x for e in edges for x in e}, key=str)
    nodes = list(nodes)
    order = _topo(nodes, edges)
    succ = {n: set() for n in nodes}
    for u, v in edges:
        succ[u].add(v)
    reach: dict = {}
    for n in reversed(order):
        r = set()
        for c in succ[n]:
            r.add(c)
            r |= reach[c]
        reach[n] = r
    out = set()
    for u, v in edges:
        # u->v is redundant iff v is reachable through another child of u
        if not any(v in reach[w] for w in succ[u] if w != v):
            out.add((u, v))
    return out


def learn_graph(W_sparse: InfluenceMatrix, attribute_names=None) -> CausalGraph:
    """Peel a thresholded influence matrix into a causal graph.

    Each round takes the latents touching the fewest remaining attributes.
    If that count is 1 the touched attributes are sinks and own those
    latents; otherwise latents are grouped by identical support and each
    group's attributes are marked mutually confounded. Edges run from the
    new node(s) to every other attribute the owned latents reach in the
    thresholded matrix. Bidirected pairs are added after transitive
    reduction so they do not create cycles.
    """
    names = list(attribute_names if attribute_names is not None else W_sparse.attribute_names)
    if len(names) != len(W_sparse.attribute_names):
        raise ValueError("attribute names do not match the matrix rows")
    orig = W_sparse.support()
    latents = list(W_sparse.latents)
    rows = [i for i in range(len(names)) if orig[i].any()]
    cols = [j for j in range(len(latents)) if orig[rows, j].any()] if rows else []

    edges: set[tuple[str, str]] = set()
    pairs: set[frozenset[str]] = set()
    owners: dict[int, tuple[str, ...]] = {}

    def reached(channel_cols, exclude):
        hit = orig[:, channel_cols].any(axis=1)
        return [names[k] for k in np.flatnonzero(hit) if names[k] not in exclude]

    while rows and cols:
        X = orig[np.ix_(rows, cols)]
        counts = X.sum(axis=0)
        m = counts.min()
        leaf_cols = [cols[j] for j in np.flatnonzero(counts == m)]
        leaf_rows = [r for r in rows if orig[r, leaf_cols].any()]
        if m == 1:
            for r in leaf_rows:
                channels = [c for c in leaf_cols if orig[r, c]]
                owners.update({latents[c]: (names[r],) for c in channels})
                edges.update((names[r], ch) for ch in reached(channels, {names[r]}))
        else:
            patterns: dict[tuple[bool, ...], list[int]] = {}
            for c in leaf_cols:
                patterns.setdefault(tuple(bool(orig[r, c]) for r in leaf_rows), []).append(c)
            for pattern, channels in patterns.items():
                attrs = [names[r] for r, on in zip(leaf_rows, pattern) if on]
                owners.update({latents[c]: tuple(attrs) for c in channels})
                pairs.update(frozenset(p) for p in permutations(attrs, 2))
                kids = reached(channels, set(attrs))
                edges.update((a, ch) for a in attrs for ch in kids)
        drop = set(leaf_rows)
        rows = [r for r in rows if r not in drop]
        cols = [c for c in cols if orig[rows, c].any()] if rows else []

    cycle = _find_cycle(names, edges)
    if cycle:
        raise GraphCycleError(cycle)
    reduced = transitive_reduction(edges, names)
    return CausalGraph(names, reduced, pairs, dict(sorted(owners.items())))


def markov_blanket(g: CausalGraph, attr: str) -> BlanketResult:
    """Parents, children and co-parents; a confounded partner is both a parent and a child."""
    if attr not in g.nodes:
        raise KeyError(f"unknown attribute {attr!r}")

    def pa(n):
        return g.parents(n) | g.partners(n)

    def ch(n):
        return g.children(n) | g.partners(n)

    blanket = pa(attr) | ch(attr)
    for c in ch(attr):
        blanket |= pa(c)
    blanket.discard(attr)
    return BlanketResult(attr, frozenset(blanket), tuple(g.channels(attr)))


def influence_consistent(g: CausalGraph, W_sparse: InfluenceMatrix) -> bool:
    """Every latent's thresholded support lies within its owners and their descendants."""
    sup = W_sparse.support()
    for j, k in enumerate(W_sparse.latents):
        own = g.owners.get(k)
        if own is None:
            return False
        allowed = set(own)
        for n in own:
            allowed |= g.descendants(n)
        hit = {W_sparse.attribute_names[i] for i in np.flatnonzero(sup[:, j])}
        if not hit <= allowed:
            return False
    return True
