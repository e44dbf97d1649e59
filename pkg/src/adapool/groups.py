"""Finite permutation groups acting on flattened tensors.

A group element is stored as an index permutation ``perm`` of
``{0, ..., d-1}``: the element sends position ``i`` to ``perm[i]``, so its
action on a tensor is ``(g x)[perm[i]] = x[i]``, i.e. ``(g x)[i] =
x[g^{-1}(i)]``. Permutation matrices are orthogonal, so every group built
here is unitary without rounding error.
"""

import math
from dataclasses import dataclass

import numpy as np

from .layers import nonlinearity_forward
from .tensor import ShapeError, as_tensor


class GroupError(ValueError):
    """The supplied permutations do not form a group."""


class FiniteGroup:
    """Finite group of permutations with composition and inverse tables.

    ``compose[a, b]`` is the index of ``a o b`` (apply ``b`` first).
    Group axioms are verified on construction.
    """

    def __init__(self, permutations):
        perms = np.asarray(permutations, dtype=np.int64)
        if perms.ndim != 2 or perms.shape[0] < 1:
            raise GroupError("need a non-empty list of permutations")
        order, degree = perms.shape
        ref = np.arange(degree)
        for p in perms:
            if not np.array_equal(np.sort(p), ref):
                raise GroupError(f"{p.tolist()} is not a permutation of 0..{degree - 1}")
        lookup = {p.tobytes(): i for i, p in enumerate(perms)}
        if len(lookup) != order:
            raise GroupError("duplicate elements")
        ident = lookup.get(ref.tobytes())
        if ident is None:
            raise GroupError("identity missing")
        compose = np.empty((order, order), dtype=np.int64)
        for a in range(order):
            for b in range(order):
                c = lookup.get(perms[a][perms[b]].tobytes())
                if c is None:
                    raise GroupError(f"not closed: elements {a} o {b} outside the set")
                compose[a, b] = c
        inverse = np.argmax(compose == ident, axis=1)
        if not np.all(compose[np.arange(order), inverse] == ident):
            raise GroupError("an element has no inverse")
        perms.setflags(write=False)
        compose.setflags(write=False)
        inverse.setflags(write=False)
        self.elements = perms
        self.compose = compose
        self.inverse = inverse
        self.identity = int(ident)
        self.shape = (degree,)

    @property
    def order(self):
        return self.elements.shape[0]

    @property
    def degree(self):
        return self.elements.shape[1]

    def __len__(self):
        return self.order

    def __repr__(self):
        return f"FiniteGroup(order={self.order}, degree={self.degree})"

    def apply(self, g, x):
        return apply(self, g, x)

    def subset(self, members):
        return GroupSubset(self, members)

    def full(self):
        return GroupSubset(self, range(self.order))

    def generated_subgroup(self, generators):
        """Smallest subgroup containing the given element indices."""
        members = {self.identity}
        frontier = list(members)
        while frontier:
            a = frontier.pop()
            for g in generators:
                c = int(self.compose[a, g])
                if c not in members:
                    members.add(c)
                    frontier.append(c)
        return GroupSubset(self, sorted(members))


@dataclass(frozen=True)
class GroupSubset:
    """A subset ``G0`` of a group's elements, e.g. a transformation range."""

    parent: FiniteGroup
    members: tuple

    def __init__(self, parent, members):
        members = tuple(int(m) for m in members)
        if len(set(members)) != len(members):
            raise ValueError("subset members must be unique")
        if any(m < 0 or m >= parent.order for m in members):
            raise ValueError("subset member index out of range")
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def inverse(self):
        return GroupSubset(self.parent, [self.parent.inverse[m] for m in self.members])

    def left_translate(self, h):
        """The set ``{h o g : g in G0}``."""
        return GroupSubset(self.parent, [self.parent.compose[h, m] for m in self.members])

    def is_closed_under(self, h):
        return set(self.left_translate(h).members) == set(self.members)


def make_cyclic_group(shape):
    """Cyclic (wrap-around) shift group on a 1-D length or 2-D extents.

    Element ``s`` of the 1-D group shifts right by ``s``: shifting
    ``[1, 2, 3, 4]`` by one gives ``[4, 1, 2, 3]``. In 2-D, element
    ``s1 * W + s2`` shifts down by ``s1`` rows and right by ``s2`` columns.
    """
    if np.isscalar(shape):
        shape = (int(shape),)
    shape = tuple(int(s) for s in shape)
    if len(shape) not in (1, 2) or min(shape) < 1:
        raise ValueError(f"extents must be 1-D or 2-D and positive, got {shape}")
    if len(shape) == 1:
        (d,) = shape
        i = np.arange(d)
        perms = [(i + s) % d for s in range(d)]
    else:
        H, W = shape
        r, c = np.divmod(np.arange(H * W), W)
        perms = [((r + s1) % H) * W + (c + s2) % W for s1 in range(H) for s2 in range(W)]
    group = FiniteGroup(perms)
    group.shape = shape
    return group


def shift_window(group, extents):
    """Subset of a 2-D cyclic group with shifts ``0 <= s < extents`` per axis.

    Models the partial translation range seen by a valid convolution.
    """
    H, W = group.shape
    h, w = extents
    return GroupSubset(group, [s1 * W + s2 for s1 in range(h) for s2 in range(w)])


def apply(group, g, x):
    """Action of element index ``g`` on ``x`` (any shape with ``degree`` entries)."""
    x = as_tensor(x)
    if x.size != group.degree:
        raise ShapeError(f"tensor of size {x.size} vs permutation degree {group.degree}")
    out = np.empty(x.size)
    out[group.elements[g]] = x.ravel()
    return out.reshape(x.shape)


def orbit(x, group):
    """``[g x for g in group]`` in element order, duplicates kept."""
    return [apply(group, g, x) for g in range(group.order)]


@dataclass(frozen=True)
class OrbitSignature:
    """Sorted inner products of an orbit with a template."""

    values: tuple

    def max_deviation(self, other):
        if len(self.values) != len(other.values):
            return math.inf
        return float(np.max(np.abs(np.subtract(self.values, other.values))))

    def matches(self, other, tol=1e-12):
        return self.max_deviation(other) <= tol


def orbit_signature(x, t, group, act_on="input"):
    """Sorted multiset ``{<g x, t> : g in G}``.

    With ``act_on="template"`` the same multiset is computed as
    ``{<x, g^{-1} t>}``; the two agree because the group is unitary.
    """
    x = as_tensor(x)
    t = as_tensor(t)
    if x.shape != t.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {t.shape}")
    xf, tf = x.ravel(), t.ravel()
    if act_on == "input":
        vals = [float(apply(group, g, xf) @ tf) for g in range(group.order)]
    elif act_on == "template":
        vals = [float(xf @ apply(group, group.inverse[g], tf)) for g in range(group.order)]
    else:
        raise ValueError("act_on must be 'input' or 'template'")
    return OrbitSignature(tuple(sorted(vals)))


def partial_group_feature(x, w, subset, alpha, eta="relu", act_on="input"):
    """Weighted partial group integral ``sum_j alpha_j eta(<w, g_j^{-1} x>)``.

    ``subset`` may be a ``GroupSubset`` or a whole ``FiniteGroup``. With
    ``act_on="template"`` each term is evaluated as ``eta(<g_j w, x>)``
    instead. ``eta`` is a nonlinearity name or a callable. Terms are summed
    with ``math.fsum`` so the result does not depend on summation order.
    """
    if isinstance(subset, FiniteGroup):
        subset = subset.full()
    group = subset.parent
    x = as_tensor(x)
    w = as_tensor(w)
    if x.shape != w.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {w.shape}")
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (len(subset),):
        raise ShapeError(f"{alpha.size} weights for a subset of size {len(subset)}")
    f = eta if callable(eta) else (lambda z: float(nonlinearity_forward(np.float64(z), eta)))
    xf, wf = x.ravel(), w.ravel()
    terms = []
    for a, g in zip(alpha, subset.members):
        if act_on == "input":
            z = float(wf @ apply(group, group.inverse[g], xf))
        else:
            z = float(apply(group, g, wf) @ xf)
        terms.append(a * f(z))
    return math.fsum(terms)
