"""Compact matrix groups, their representations and generating sets.

Group elements are always the matrices of a faithful orthogonal defining
representation.  Other representations are functions of that matrix, which
keeps finite and continuous groups behind one interface.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import ContractError, NonFiniteClosureError

DEDUP_TOL = 1e-9
ORTHO_TOL = 1e-10


def rotation2d(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def rotation3d(axis, angle):
    c, s = np.cos(angle), np.sin(angle)
    i = "xyz".index(axis)
    j, k = [a for a in range(3) if a != i]
    m = np.eye(3)
    m[j, j], m[j, k], m[k, j], m[k, k] = c, -s, s, c
    return m


def permutation_matrix(perm):
    """Matrix P with P e_i = e_{perm[i]}."""
    n = len(perm)
    m = np.zeros((n, n))
    m[list(perm), list(range(n))] = 1.0
    return m


def _check_orthogonal(m, tol=ORTHO_TOL):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractError(f"group element must be square, got shape {m.shape}")
    if np.abs(m.T @ m - np.eye(m.shape[0])).max() >= tol:
        raise ContractError("group element is not orthogonal")
    return m


class FiniteGroup:
    """Enumerated matrix group with a multiplication table.

    ``mult_table[i, j]`` is the index of ``elements[i] @ elements[j]``.
    """

    def __init__(self, elements, name="", generators=None, tol=DEDUP_TOL):
        mats = [_check_orthogonal(e) for e in elements]
        self.name = name
        self.tol = tol
        self._stack = np.stack(mats)
        n = len(mats)
        table = np.empty((n, n), dtype=np.int64)
        for i in range(n):
            prods = np.einsum("ab,nbc->nac", mats[i], self._stack)
            for j in range(n):
                k = self.find(prods[j])
                if k is None:
                    raise ContractError("element set is not closed under multiplication")
                table[i, j] = k
        self.mult_table = table
        ident = self.find(np.eye(self.dim))
        if ident is None:
            raise ContractError("identity element missing")
        self.identity_index = ident
        inv = np.empty(n, dtype=np.int64)
        for i in range(n):
            hits = np.flatnonzero(table[i] == ident)
            if len(hits) != 1:
                raise ContractError("element without a unique inverse")
            inv[i] = hits[0]
        self.inverse_table = inv
        gens = generators if generators is not None else _default_generators(self)
        self.generating_set = GeneratingSet(tuple(np.asarray(g, dtype=np.float64) for g in gens), self)

    @property
    def elements(self):
        return list(self._stack)

    @property
    def order(self):
        return self._stack.shape[0]

    @property
    def dim(self):
        return self._stack.shape[1]

    @property
    def is_finite(self):
        return True

    def __len__(self):
        return self.order

    def __repr__(self):
        return f"FiniteGroup({self.name or '?'}, order={self.order}, dim={self.dim})"

    def find(self, m):
        """Index of the element equal to ``m`` within ``tol``, else None."""
        d = np.abs(self._stack - m).max(axis=(1, 2))
        k = int(np.argmin(d))
        return k if d[k] < self.tol else None

    def inverse(self, i):
        return int(self.inverse_table[i])

    def multiply(self, i, j):
        return int(self.mult_table[i, j])


@dataclass(frozen=True)
class ContinuousGroup:
    """SO(2) or SO(3) with a seeded Haar sampler."""

    kind: str
    name: str = ""
    generating_set: "GeneratingSet" = field(default=None, compare=False, repr=False)

    @property
    def dim(self):
        return {"SO2": 2, "SO3": 3}[self.kind]

    @property
    def is_finite(self):
        return False

    def sample(self, rng):
        if self.kind == "SO2":
            return rotation2d(rng.uniform(0.0, 2.0 * np.pi))
        q = rng.standard_normal(4)
        w, x, y, z = q / np.linalg.norm(q)
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )


@dataclass(frozen=True)
class GeneratingSet:
    """Finite (topological) generating set of a group."""

    generators: tuple
    group: object = field(compare=False, repr=False)

    def __post_init__(self):
        if len(self.generators) == 0:
            raise ContractError("generating set must be nonempty")

    def __len__(self):
        return len(self.generators)

    def __iter__(self):
        return iter(self.generators)


@dataclass(frozen=True)
class Representation:
    """A map from defining-representation matrices to ``dim x dim`` matrices."""

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]
    is_unitary: bool = True
    name: str = ""

    def __call__(self, g):
        return self.apply(g)

    def matrices(self, group):
        """Stacked images of every element of a finite group."""
        return np.stack([self.apply(g) for g in group.elements])


def standard_rep(group):
    return Representation(group.dim, lambda g: np.asarray(g, dtype=np.float64), True, "standard")


def trivial_rep(dim=1):
    eye = np.eye(dim)
    return Representation(dim, lambda g: eye, True, f"trivial{dim}")


def det_rep():
    """One-dimensional sign/determinant representation."""
    return Representation(1, lambda g: np.array([[np.linalg.det(g)]]).round(12), True, "det")


def copies_rep(rep, count):
    """``count`` copies of ``rep`` stacked as contiguous blocks: I_count (x) rho."""
    eye = np.eye(count)
    return Representation(
        rep.dim * count, lambda g: np.kron(eye, rep.apply(g)), rep.is_unitary, f"{count}x{rep.name}"
    )


def direct_sum(*reps):
    def apply(g):
        blocks = [r.apply(g) for r in reps]
        n = sum(b.shape[0] for b in blocks)
        out = np.zeros((n, n))
        o = 0
        for b in blocks:
            k = b.shape[0]
            out[o : o + k, o : o + k] = b
            o += k
        return out

    return Representation(
        sum(r.dim for r in reps), apply, all(r.is_unitary for r in reps), "+".join(r.name for r in reps)
    )


# ---------------------------------------------------------------- operations


def closure(generators, tol=DEDUP_TOL, max_elems=10000, name=""):
    """Smallest matrix group containing ``generators`` (BFS over words)."""
    gens = [_check_orthogonal(g) for g in generators]
    if not gens:
        raise ContractError("closure needs at least one generator")
    d = gens[0].shape[0]
    buf = np.empty((min(max_elems, 64) + 1, d, d))
    buf[0] = np.eye(d)
    n = 1
    frontier = [np.eye(d)]
    while frontier:
        nxt = []
        for m in frontier:
            for g in gens:
                cand = m @ g
                if np.abs(buf[:n] - cand).max(axis=(1, 2)).min() < tol:
                    continue
                if n >= max_elems:
                    raise NonFiniteClosureError(f"closure exceeded {max_elems} elements")
                if n == buf.shape[0]:
                    buf = np.concatenate([buf, np.empty_like(buf)])
                buf[n] = cand
                n += 1
                nxt.append(cand)
        frontier = nxt
    return FiniteGroup(list(buf[:n]), name=name, generators=gens, tol=tol)


def haar_sample(group, rng):
    """Haar-random element: uniform for finite groups, angle/quaternion for SO(2)/SO(3)."""
    if group.is_finite:
        return group.elements[int(rng.integers(group.order))]
    return group.sample(rng)


def check_representation(rep, group, n_pairs=100, tol=1e-10, rng=None):
    """Worst homomorphism (and, if flagged, unitarity) violation over sampled pairs."""
    if n_pairs < 1:
        raise ContractError("n_pairs must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    eye = np.eye(rep.dim)
    for _ in range(n_pairs):
        if group.is_finite:
            i, j = (int(k) for k in rng.integers(group.order, size=2))
            g1, g2 = group.elements[i], group.elements[j]
            g12 = group.elements[group.multiply(i, j)]
        else:
            g1, g2 = group.sample(rng), group.sample(rng)
            g12 = g1 @ g2
        r1, r2 = rep(g1), rep(g2)
        worst = max(worst, float(np.abs(r1 @ r2 - rep(g12)).max()))
        if rep.is_unitary:
            worst = max(worst, float(np.abs(r1.T @ r1 - eye).max()))
    return worst


def so3_generating_pair():
    """Two rotations by 3/2 rad about the x and z axes."""
    return GeneratingSet((rotation3d("x", 1.5), rotation3d("z", 1.5)), SO3)


def so3_generating_pair_alt():
    """Rotation by pi/2 about x and pi/3 about z (algebraic alternative)."""
    return GeneratingSet((rotation3d("x", np.pi / 2), rotation3d("z", np.pi / 3)), SO3)


def _default_generators(group):
    # smallest subset of elements (size <= 2) that regenerates the whole group
    ident = group.identity_index
    candidates = [i for i in range(group.order) if i != ident]
    if not candidates:
        return [np.eye(group.dim)]
    for size in (1, 2):
        for combo in itertools.combinations(candidates, size):
            if _generated_size(group, combo) == group.order:
                return [group.elements[i] for i in combo]
    return [group.elements[i] for i in candidates]


def _generated_size(group, idx):
    seen = {group.identity_index}
    frontier = [group.identity_index]
    while frontier:
        nxt = []
        for a in frontier:
            for b in idx:
                c = group.multiply(a, b)
                if c not in seen:
                    seen.add(c)
                    nxt.append(c)
        frontier = nxt
    return len(seen)


def cyclic_group(n):
    """C_n as planar rotations by multiples of 2*pi/n."""
    return closure([rotation2d(2.0 * np.pi / n)], name=f"C{n}")


def symmetric_group(n):
    """S_n as n x n permutation matrices, generated by a transposition and an n-cycle."""
    gens = [permutation_matrix([1, 0] + list(range(2, n)))]
    if n > 2:
        gens.append(permutation_matrix(list(range(1, n)) + [0]))
    return closure(gens, name=f"S{n}")


def sign_group():
    """C_2 acting on the line by +-1 (its defining representation is the sign rep)."""
    return closure([np.array([[-1.0]])], name="C2")


SO2 = ContinuousGroup("SO2", "SO2")
object.__setattr__(SO2, "generating_set", GeneratingSet((rotation2d(1.0),), SO2))
SO3 = ContinuousGroup("SO3", "SO3")
object.__setattr__(SO3, "generating_set", so3_generating_pair())

_BUILDERS = {
    "C2": sign_group,
    "C4": lambda: cyclic_group(4),
    "C8": lambda: cyclic_group(8),
    "S2": lambda: symmetric_group(2),
    "S3": lambda: symmetric_group(3),
    "SO2": lambda: SO2,
    "SO3": lambda: SO3,
}
_CACHE = {}


def get_group(name):
    """Built-in group by name: C2, C4, C8, S2, S3, SO2, SO3."""
    if name not in _BUILDERS:
        raise ContractError(f"unknown group {name!r}; expected one of {sorted(_BUILDERS)}")
    if name not in _CACHE:
        _CACHE[name] = _BUILDERS[name]()
    return _CACHE[name]


def orbit(group, rep, v):
    """Images of ``v`` under every element of a finite group (with repeats)."""
    return np.stack([rep(g) @ v for g in group.elements])


def group_names():
    return sorted(_BUILDERS)


__all__ = [
    "FiniteGroup",
    "ContinuousGroup",
    "GeneratingSet",
    "Representation",
    "closure",
    "haar_sample",
    "check_representation",
    "so3_generating_pair",
    "so3_generating_pair_alt",
    "cyclic_group",
    "symmetric_group",
    "sign_group",
    "get_group",
    "standard_rep",
    "trivial_rep",
    "det_rep",
    "copies_rep",
    "direct_sum",
    "rotation2d",
    "rotation3d",
    "permutation_matrix",
    "orbit",
    "SO2",
    "SO3",
]
