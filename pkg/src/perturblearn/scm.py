"""Synthetic structural causal models used as the oracle generative model.

Latents ``z`` are exogenous; each attribute is computed in topological order
as ``a_i = g(sum_j beta_ij * a_j + sum_k gamma_ik * z_k)`` with ``g`` either
the identity or ``tanh``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter

import numpy as np

NONLINEARITIES = ("linear", "tanh")


class SpecError(ValueError):
    """Raised for malformed or cyclic specs and unknown shift profiles."""


@dataclass(frozen=True)
class Edge:
    parent: str
    child: str
    coeff: float


@dataclass(frozen=True)
class LatentAssignment:
    attr: str
    latent: int
    coeff: float


@dataclass(frozen=True)
class ScmSpec:
    attribute_names: tuple[str, ...]
    latent_dim: int
    edges: tuple[Edge, ...] = ()
    latent_assignments: tuple[LatentAssignment, ...] = ()
    nonlinearity: str = "linear"
    shift_profiles: dict[str, dict[tuple[str, str], float]] = field(default_factory=dict)
    target_attr: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "attribute_names", tuple(self.attribute_names))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "latent_assignments", tuple(self.latent_assignments))
        validate(self)

    @property
    def n_attrs(self) -> int:
        return len(self.attribute_names)

    def index(self, name: str) -> int:
        try:
            return self.attribute_names.index(name)
        except ValueError:
            raise SpecError(f"unknown attribute {name!r}") from None

    def parents(self, name: str) -> list[str]:
        return [e.parent for e in self.edges if e.child == name]

    def edge_matrix(self, profile: str | None = None) -> np.ndarray:
        """``B[i, j]`` = coefficient of parent ``i`` in child ``j``'s equation."""
        mult = self._profile(profile)
        B = np.zeros((self.n_attrs, self.n_attrs))
        for e in self.edges:
            B[self.index(e.parent), self.index(e.child)] += e.coeff * mult.get((e.parent, e.child), 1.0)
        return B

    def loading_matrix(self) -> np.ndarray:
        """``L[k, i]`` = coefficient of latent ``k`` in attribute ``i``."""
        L = np.zeros((self.latent_dim, self.n_attrs))
        for a in self.latent_assignments:
            L[a.latent, self.index(a.attr)] += a.coeff
        return L

    def _profile(self, profile):
        if profile is None:
            return {}
        try:
            return self.shift_profiles[profile]
        except KeyError:
            raise SpecError(f"unknown shift profile {profile!r}") from None

    def to_dict(self) -> dict:
        return {
            "attribute_names": list(self.attribute_names),
            "latent_dim": self.latent_dim,
            "edges": [{"parent": e.parent, "child": e.child, "coeff": e.coeff} for e in self.edges],
            "latent_assignments": [
                {"attr": a.attr, "latent": a.latent, "coeff": a.coeff} for a in self.latent_assignments
            ],
            "nonlinearity": self.nonlinearity,
            "shift_profiles": {
                name: [{"parent": p, "child": c, "multiplier": m} for (p, c), m in prof.items()]
                for name, prof in self.shift_profiles.items()
            },
            "target_attr": self.target_attr,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScmSpec":
        try:
            return cls(
                attribute_names=tuple(d["attribute_names"]),
                latent_dim=int(d["latent_dim"]),
                edges=tuple(Edge(e["parent"], e["child"], float(e["coeff"])) for e in d.get("edges", [])),
                latent_assignments=tuple(
                    LatentAssignment(a["attr"], int(a["latent"]), float(a["coeff"]))
                    for a in d.get("latent_assignments", [])
                ),
                nonlinearity=d.get("nonlinearity", "linear"),
                shift_profiles={
                    name: {(m["parent"], m["child"]): float(m["multiplier"]) for m in prof}
                    for name, prof in d.get("shift_profiles", {}).items()
                },
                target_attr=d.get("target_attr"),
            )
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed spec: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScmSpec":
        return cls.from_dict(json.loads(text))


def validate(spec: ScmSpec) -> None:
    names = spec.attribute_names
    if len(names) == 0 or len(set(names)) != len(names):
        raise SpecError("attribute names must be a nonempty list of unique strings")
    if spec.latent_dim < 1:
        raise SpecError("latent_dim must be positive")
    if spec.nonlinearity not in NONLINEARITIES:
        raise SpecError(f"nonlinearity must be one of {NONLINEARITIES}")
    known = set(names)
    seen = set()
    for e in spec.edges:
        if e.parent not in known or e.child not in known:
            raise SpecError(f"edge {e.parent}->{e.child} references an unknown attribute")
        if e.parent == e.child:
            raise SpecError(f"self loop on {e.parent}")
        if (e.parent, e.child) in seen:
            raise SpecError(f"duplicate edge {e.parent}->{e.child}")
        seen.add((e.parent, e.child))
        if not math.isfinite(e.coeff):
            raise SpecError("edge coefficients must be finite")
    assigned = set()
    for a in spec.latent_assignments:
        if a.attr not in known:
            raise SpecError(f"latent assignment references unknown attribute {a.attr!r}")
        if not 0 <= a.latent < spec.latent_dim:
            raise SpecError(f"latent index {a.latent} outside [0, {spec.latent_dim})")
        if not math.isfinite(a.coeff):
            raise SpecError("latent coefficients must be finite")
        assigned.add(a.attr)
    missing = known - assigned
    if missing:
        raise SpecError(f"attributes without a latent assignment: {sorted(missing)}")
    for name, prof in spec.shift_profiles.items():
        for (p, c), m in prof.items():
            if (p, c) not in seen:
                raise SpecError(f"shift profile {name!r} touches non-edge {p}->{c}")
            if not math.isfinite(m):
                raise SpecError("shift multipliers must be finite")
    if spec.target_attr is not None and spec.target_attr not in known:
        raise SpecError(f"unknown target attribute {spec.target_attr!r}")
    topological_order(spec)


def topological_order(spec: ScmSpec) -> list[str]:
    """Deterministic topological order (ties broken by declaration order)."""
    ts = TopologicalSorter({n: [] for n in spec.attribute_names})
    for e in spec.edges:
        ts.add(e.child, e.parent)
    try:
        ts.prepare()
    except CycleError as exc:
        raise SpecError(f"attribute graph has a cycle: {exc.args[1]}") from None
    rank = {n: i for i, n in enumerate(spec.attribute_names)}
    order = []
    while ts.is_active():
        ready = sorted(ts.get_ready(), key=rank.__getitem__)
        order.extend(ready)
        ts.done(*ready)
    return order


def sample_latent(spec: ScmSpec, count: int, seed: int) -> np.ndarray:
    """``count`` standard-normal latent vectors, shape ``(count, latent_dim)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return np.random.default_rng(seed).standard_normal((count, spec.latent_dim))


def _evaluate_in_order(spec, Z, profile, order):
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != spec.latent_dim:
        raise SpecError(f"latent vectors have length {Z.shape[1]}, expected {spec.latent_dim}")
    mult = spec._profile(profile)
    g = np.tanh if spec.nonlinearity == "tanh" else None
    # fixed summation order per attribute so any topological order gives identical bits
    latent_terms = {n: [] for n in spec.attribute_names}
    for a in spec.latent_assignments:
        latent_terms[a.attr].append((a.latent, a.coeff))
    parent_terms = {n: [] for n in spec.attribute_names}
    for e in spec.edges:
        parent_terms[e.child].append((e.parent, e.coeff * mult.get((e.parent, e.child), 1.0)))
    out = np.empty((Z.shape[0], spec.n_attrs))
    for name in order:
        acc = np.zeros(Z.shape[0])
        for k, c in latent_terms[name]:
            acc = acc + c * Z[:, k]
        for p, c in parent_terms[name]:
            acc = acc + c * out[:, spec.index(p)]
        out[:, spec.index(name)] = g(acc) if g is not None else acc
    return out


def evaluate(spec: ScmSpec, z, profile: str | None = None) -> np.ndarray:
    """Attribute values for latent vector(s) ``z``.

    A 1-d ``z`` returns a length-|A| vector; a 2-d batch returns ``(n, |A|)``
    with columns in ``spec.attribute_names`` order.
    """
    z = np.asarray(z, dtype=np.float64)
    out = _evaluate_in_order(spec, z, profile, topological_order(spec))
    return out[0] if z.ndim == 1 else out


def total_effects(spec: ScmSpec, profile: str | None = None) -> np.ndarray:
    """Linear total effect of each latent on each attribute, shape ``(d, |A|)``.

    Sum over directed paths of coefficient products, ``L (I - B)^-1``.
    Exact for linear specs; for tanh specs only the support is meaningful.
    """
    B = spec.edge_matrix(profile)
    return spec.loading_matrix() @ np.linalg.inv(np.eye(spec.n_attrs) - B)


def descendants(spec: ScmSpec) -> dict[str, set[str]]:
    children = {n: [] for n in spec.attribute_names}
    for e in spec.edges:
        children[e.parent].append(e.child)
    out = {}
    for n in spec.attribute_names:
        seen, stack = set(), list(children[n])
        while stack:
            c = stack.pop()
            if c not in seen:
                seen.add(c)
                stack.extend(children[c])
        out[n] = seen
    return out


def influence_support(spec: ScmSpec) -> np.ndarray:
    """Boolean ``(|A|, d)`` matrix: attribute ``i`` is downstream of latent ``k``.

    Computed from the graph, not from coefficients, so it is the exact
    support a perturbation experiment can reveal.
    """
    desc = descendants(spec)
    S = np.zeros((spec.n_attrs, spec.latent_dim), dtype=bool)
    for a in spec.latent_assignments:
        for n in {a.attr} | desc[a.attr]:
            S[spec.index(n), a.latent] = True
    return S


def shared_latent_pairs(spec: ScmSpec) -> set[frozenset[str]]:
    by_latent: dict[int, set[str]] = {}
    for a in spec.latent_assignments:
        by_latent.setdefault(a.latent, set()).add(a.attr)
    pairs = set()
    for attrs in by_latent.values():
        ordered = sorted(attrs)
        for i, x in enumerate(ordered):
            for y in ordered[i + 1:]:
                pairs.add(frozenset((x, y)))
    return pairs


def _signed_magnitude(rng, low=0.5, high=1.5):
    return float(rng.choice([-1.0, 1.0]) * rng.uniform(low, high))


def random_spec(
    n_attrs: int,
    latent_dim: int,
    edge_density: float,
    confounder_count: int,
    seed: int,
    nonlinearity: str = "linear",
) -> ScmSpec:
    """Random DAG-structured spec with one dedicated latent per attribute.

    Latents ``0..n_attrs-1`` are dedicated (in a random permutation); the
    next ``confounder_count`` latents are each assigned to two distinct
    attributes; any remaining latents are inert. Every coefficient has
    magnitude in ``[0.5, 1.5]``. The target is the last attribute in the
    random causal order, which is always a sink.
    """
    if n_attrs < 1:
        raise ValueError("n_attrs must be >= 1")
    if latent_dim < n_attrs:
        raise ValueError("latent_dim must be >= n_attrs")
    if not 0.0 <= edge_density <= 1.0:
        raise ValueError("edge_density must lie in [0, 1]")
    if confounder_count < 0 or confounder_count > latent_dim - n_attrs or (confounder_count and n_attrs < 2):
        raise ValueError(
            f"infeasible confounder_count={confounder_count} for n_attrs={n_attrs}, latent_dim={latent_dim}"
        )
    rng = np.random.default_rng(seed)
    names = tuple(f"a{i}" for i in range(n_attrs))
    order = [names[i] for i in rng.permutation(n_attrs)]
    edges = []
    for i in range(n_attrs):
        for j in range(i + 1, n_attrs):
            if rng.uniform() < edge_density:
                edges.append(Edge(order[i], order[j], _signed_magnitude(rng)))
    dedicated = rng.permutation(n_attrs)
    assignments = [LatentAssignment(names[i], int(dedicated[i]), _signed_magnitude(rng)) for i in range(n_attrs)]
    for c in range(confounder_count):
        pair = rng.choice(n_attrs, size=2, replace=False)
        for i in sorted(int(x) for x in pair):
            assignments.append(LatentAssignment(names[i], n_attrs + c, _signed_magnitude(rng)))
    return ScmSpec(
        attribute_names=names,
        latent_dim=latent_dim,
        edges=tuple(edges),
        latent_assignments=tuple(assignments),
        nonlinearity=nonlinearity,
        target_attr=order[-1],
    )


def with_shift_profiles(spec: ScmSpec, count: int, seed: int) -> ScmSpec:
    """Copy of ``spec`` with ``count`` random shift profiles named ``shift1..``.

    Each profile rescales every edge by a multiplier of magnitude in
    ``[0.5, 2]`` whose sign flips with probability 1/2; structure is untouched.
    """
    rng = np.random.default_rng(seed)
    profiles = dict(spec.shift_profiles)
    for k in range(1, count + 1):
        profiles[f"shift{k}"] = {(e.parent, e.child): _signed_magnitude(rng, 0.5, 2.0) for e in spec.edges}
    return ScmSpec(
        spec.attribute_names, spec.latent_dim, spec.edges, spec.latent_assignments,
        spec.nonlinearity, profiles, spec.target_attr,
    )
