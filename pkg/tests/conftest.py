import numpy as np
import pytest

from perturblearn.scm import Edge, LatentAssignment, ScmSpec


def make_spec(attrs, latent_dim, edges=(), loads=(), nonlinearity="linear", profiles=None, target=None):
    return ScmSpec(
        attribute_names=tuple(attrs),
        latent_dim=latent_dim,
        edges=tuple(Edge(*e) for e in edges),
        latent_assignments=tuple(LatentAssignment(*a) for a in loads),
        nonlinearity=nonlinearity,
        shift_profiles=profiles or {},
        target_attr=target,
    )


@pytest.fixture
def chain_spec():
    # a_A = z0, a_B = 3 a_A + z1, a_C = -2 a_B + 0.5 z2
    return make_spec(
        "ABC", 3,
        edges=[("A", "B", 3.0), ("B", "C", -2.0)],
        loads=[("A", 0, 1.0), ("B", 1, 1.0), ("C", 2, 0.5)],
        target="C",
    )


def random_dag(rng, n, p):
    """Edges i->j (i<j) over a random permutation of ``n`` integer nodes."""
    perm = rng.permutation(n)
    return {(int(perm[i]), int(perm[j])) for i in range(n) for j in range(i + 1, n) if rng.uniform() < p}


def closure_by_squaring(n, edges):
    """Boolean reachability via repeated squaring of (I + A)."""
    R = np.eye(n, dtype=bool)
    for u, v in edges:
        R[u, v] = True
    for _ in range(max(1, int(np.ceil(np.log2(max(n, 2)))))):
        R = (R.astype(int) @ R.astype(int)) > 0
    np.fill_diagonal(R, False)
    return R


def blanket_oracle(nodes, edges, x):
    pa = {n: {u for u, v in edges if v == n} for n in nodes}
    ch = {n: {v for u, v in edges if u == n} for n in nodes}
    out = set(pa[x]) | ch[x]
    for c in ch[x]:
        out |= pa[c]
    out.discard(x)
    return out
