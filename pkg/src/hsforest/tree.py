"""Binary decision trees stored as flat node arrays.

A tree with capacity ``C`` is two arrays: ``ints[C, 5]`` holding
``(var, left, right, parent, depth)`` and ``floats[C, 4]`` holding
``(cut, h, lam2, nu)``. The root lives in slot 0, a leaf has ``left == -1``
and an unused slot has ``depth == -1``. Routing sends ``x`` left iff
``x[var] < cut``.

Forests stack these arrays along a leading tree axis so the compiled sampler
can update any tree through a view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numba as nb
import numpy as np

VAR, LEFT, RIGHT, PARENT, DEPTH = 0, 1, 2, 3, 4
CUT, H, LAM2, NU = 0, 1, 2, 3

NO_DEPTH_LIMIT = 1 << 30


class SplitRule(NamedTuple):
    var: int
    cut: float


class LeafParams(NamedTuple):
    h: float
    lam2: float
    nu: float


@dataclass
class PartitionStats:
    """Per-leaf sufficient statistics: observation count (or summed squared
    basis weight) and the SUM of residuals (basis-weighted)."""

    leaves: np.ndarray
    n: np.ndarray
    rsum: np.ndarray


class SplitData:
    """Covariates prepared for split enumeration.

    ``codes[i, v]`` is the rank of ``X[i, v]`` among the distinct values of
    column ``v``; ``uniq[v, c]`` maps a rank back to the observed value.
    """

    def __init__(self, X):
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
        if X.ndim != 2:
            raise ValueError("X must be a 2-D matrix")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        n, p = X.shape
        self.X = X
        self.codes = np.empty((n, p), dtype=np.int32)
        self.nuniq = np.empty(p, dtype=np.int32)
        self.uniq = np.zeros((p, max(n, 1)), dtype=np.float64)
        for v in range(p):
            u, inv = np.unique(X[:, v], return_inverse=True)
            self.codes[:, v] = inv
            self.nuniq[v] = u.size
            self.uniq[v, : u.size] = u

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


# ---------------------------------------------------------------------------
# compiled node primitives


@nb.njit(cache=True)
def _empty_nodes(capacity):
    ints = np.full((capacity, 5), -1, dtype=np.int32)
    floats = np.zeros((capacity, 4))
    ints[0, DEPTH] = 0
    floats[0, LAM2] = 1.0
    floats[0, NU] = 1.0
    return ints, floats


@nb.njit(cache=True)
def _reset_stump(ints, floats):
    ints[:, :] = -1
    floats[:, :] = 0.0
    ints[0, DEPTH] = 0
    floats[0, LAM2] = 1.0
    floats[0, NU] = 1.0


@nb.njit(cache=True)
def _route(ints, floats, x):
    node = 0
    while ints[node, LEFT] >= 0:
        if x[ints[node, VAR]] < floats[node, CUT]:
            node = ints[node, LEFT]
        else:
            node = ints[node, RIGHT]
    return node


@nb.njit(cache=True)
def _assign(ints, floats, X, leaf_of):
    for i in range(X.shape[0]):
        leaf_of[i] = _route(ints, floats, X[i])


@nb.njit(cache=True)
def _predict_many(ints, floats, X, out):
    for i in range(X.shape[0]):
        out[i] = floats[_route(ints, floats, X[i]), H]


@nb.njit(cache=True)
def _is_leaf(ints, node):
    return ints[node, DEPTH] >= 0 and ints[node, LEFT] < 0


@nb.njit(cache=True)
def _is_nog(ints, node):
    if ints[node, DEPTH] < 0 or ints[node, LEFT] < 0:
        return False
    return ints[ints[node, LEFT], LEFT] < 0 and ints[ints[node, RIGHT], LEFT] < 0


@nb.njit(cache=True)
def _leaves(ints):
    out = np.empty(ints.shape[0], dtype=np.int32)
    k = 0
    for node in range(ints.shape[0]):
        if ints[node, DEPTH] >= 0 and ints[node, LEFT] < 0:
            out[k] = node
            k += 1
    return out[:k]


@nb.njit(cache=True)
def _nogs(ints):
    out = np.empty(ints.shape[0], dtype=np.int32)
    k = 0
    for node in range(ints.shape[0]):
        if _is_nog(ints, node):
            out[k] = node
            k += 1
    return out[:k]


@nb.njit(cache=True)
def _count_leaves(ints):
    k = 0
    for node in range(ints.shape[0]):
        if ints[node, DEPTH] >= 0 and ints[node, LEFT] < 0:
            k += 1
    return k


@nb.njit(cache=True)
def _count_nogs(ints):
    k = 0
    for node in range(ints.shape[0]):
        if _is_nog(ints, node):
            k += 1
    return k


@nb.njit(cache=True)
def _max_depth_of(ints):
    d = 0
    for node in range(ints.shape[0]):
        if ints[node, DEPTH] > d:
            d = ints[node, DEPTH]
    return d


@nb.njit(cache=True)
def _alloc(ints):
    for node in range(1, ints.shape[0]):
        if ints[node, DEPTH] < 0:
            return node
    return -1


@nb.njit(cache=True)
def _split_leaf(ints, floats, node, var, cut):
    """Turn leaf ``node`` into an internal node; returns the two child slots."""
    left = _alloc(ints)
    ints[left, DEPTH] = 0  # reserve before looking for the second slot
    right = _alloc(ints)
    d = ints[node, DEPTH] + 1
    for c in (left, right):
        ints[c, VAR] = -1
        ints[c, LEFT] = -1
        ints[c, RIGHT] = -1
        ints[c, PARENT] = node
        ints[c, DEPTH] = d
    ints[node, VAR] = var
    ints[node, LEFT] = left
    ints[node, RIGHT] = right
    floats[node, CUT] = cut
    return left, right


@nb.njit(cache=True)
def _collapse_nog(ints, floats, node):
    """Remove the two leaf children of ``node``."""
    for c in (ints[node, LEFT], ints[node, RIGHT]):
        ints[c, :] = -1
        floats[c, :] = 0.0
    ints[node, VAR] = -1
    ints[node, LEFT] = -1
    ints[node, RIGHT] = -1
    floats[node, CUT] = 0.0


@nb.njit(cache=True)
def _obs_in(leaf_of, a, b):
    """Indices of observations sitting in node ``a`` or node ``b``."""
    n = leaf_of.shape[0]
    out = np.empty(n, dtype=np.int64)
    k = 0
    for i in range(n):
        if leaf_of[i] == a or leaf_of[i] == b:
            out[k] = i
            k += 1
    return out[:k]


@nb.njit(cache=True)
def _var_available(codes, obs, v):
    if obs.shape[0] < 2:
        return False
    c0 = codes[obs[0], v]
    for t in range(1, obs.shape[0]):
        if codes[obs[t], v] != c0:
            return True
    return False


@nb.njit(cache=True)
def _splittable(codes, obs, depth, max_depth):
    if depth >= max_depth or obs.shape[0] < 2:
        return False
    for v in range(codes.shape[1]):
        if _var_available(codes, obs, v):
            return True
    return False


@nb.njit(cache=True)
def _distinct_codes(codes, obs, v):
    vals = np.empty(obs.shape[0], dtype=np.int32)
    for t in range(obs.shape[0]):
        vals[t] = codes[obs[t], v]
    vals.sort()
    out = np.empty(obs.shape[0], dtype=np.int32)
    k = 0
    for t in range(vals.shape[0]):
        if k == 0 or vals[t] != out[k - 1]:
            out[k] = vals[t]
            k += 1
    return out[:k]


@nb.njit(cache=True)
def _draw_rule(codes, uniq, obs):
    """Variable uniformly among those with a valid cut, then a cut uniformly
    among that variable's valid cuts. Caller guarantees the node is splittable."""
    p = codes.shape[1]
    while True:
        v = np.random.randint(0, p)
        if _var_available(codes, obs, v):
            break
    dc = _distinct_codes(codes, obs, v)
    c = dc[1 + np.random.randint(0, dc.shape[0] - 1)]
    return v, uniq[v, c]


@nb.njit(cache=True)
def _single_rule(codes, obs):
    """True when the node admits exactly one valid split rule."""
    found = -1
    for v in range(codes.shape[1]):
        if _var_available(codes, obs, v):
            if found >= 0:
                return False
            found = v
    if found < 0:
        return False
    return _distinct_codes(codes, obs, found).shape[0] == 2


@nb.njit(cache=True)
def _send_left(X, obs, var, cut, out_left, out_right):
    nl = 0
    nr = 0
    for t in range(obs.shape[0]):
        i = obs[t]
        if X[i, var] < cut:
            out_left[nl] = i
            nl += 1
        else:
            out_right[nr] = i
            nr += 1
    return nl, nr


@nb.njit(cache=True)
def _log_split_prob(depth, a, b, max_depth):
    if depth >= max_depth:
        return -np.inf
    return math.log(a) - b * math.log1p(depth)


@nb.njit(cache=True)
def _log_leaf_prob(depth, a, b, max_depth, splittable):
    # A node that cannot be split is a leaf with probability one.
    if not splittable or depth >= max_depth:
        return 0.0
    return math.log1p(-a / (1.0 + depth) ** b)


@nb.njit(cache=True)
def _grow_prior(ints, floats, X, codes, uniq, leaf_of, a, b, max_depth):
    """Sample a tree structure from the branching-process prior given the data."""
    _reset_stump(ints, floats)
    leaf_of[:] = 0
    stack = np.empty(ints.shape[0], dtype=np.int32)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        obs = _obs_in(leaf_of, node, node)
        d = ints[node, DEPTH]
        if not _splittable(codes, obs, d, max_depth):
            continue
        if np.random.random() >= a / (1.0 + d) ** b:
            continue
        var, cut = _draw_rule(codes, uniq, obs)
        left, right = _split_leaf(ints, floats, node, var, cut)
        for t in range(obs.shape[0]):
            i = obs[t]
            leaf_of[i] = left if X[i, var] < cut else right
        stack[top] = left
        stack[top + 1] = right
        top += 2


# ---------------------------------------------------------------------------
# Python-facing tree


class Tree:
    """A single decision tree; see the module docstring for the layout."""

    def __init__(self, ints, floats):
        self.ints = ints
        self.floats = floats

    @classmethod
    def stump(cls, capacity: int = 1, h: float = 0.0, lam2: float = 1.0, nu: float = 1.0) -> "Tree":
        ints, floats = _empty_nodes(max(int(capacity), 1))
        floats[0, H], floats[0, LAM2], floats[0, NU] = h, lam2, nu
        return cls(ints, floats)

    @classmethod
    def from_nested(cls, spec, capacity: int | None = None) -> "Tree":
        """Build from nested tuples ``(var, cut, left, right)``; a leaf is a
        number ``h`` or a tuple ``(h, lam2, nu)``."""

        def count(s):
            return 1 + count(s[2]) + count(s[3]) if _is_internal(s) else 1

        need = count(spec)
        tree = cls.stump(capacity or need)
        if tree.capacity < need:
            raise ValueError("capacity too small for the nested tree")

        def build(node, s):
            if _is_internal(s):
                var, cut, ls, rs = s
                left, right = _split_leaf(tree.ints, tree.floats, node, int(var), float(cut))
                build(left, ls)
                build(right, rs)
            else:
                leaf = (float(s), 1.0, 1.0) if np.isscalar(s) else tuple(map(float, s))
                tree.floats[node, H], tree.floats[node, LAM2], tree.floats[node, NU] = leaf

        build(0, spec)
        return tree

    @property
    def capacity(self) -> int:
        return self.ints.shape[0]

    def copy(self) -> "Tree":
        return Tree(self.ints.copy(), self.floats.copy())

    def leaves(self) -> np.ndarray:
        return _leaves(self.ints)

    def nogs(self) -> np.ndarray:
        return _nogs(self.ints)

    @property
    def n_leaves(self) -> int:
        return int(_count_leaves(self.ints))

    @property
    def n_internal(self) -> int:
        return int(np.sum((self.ints[:, DEPTH] >= 0) & (self.ints[:, LEFT] >= 0)))

    def depth(self, node: int) -> int:
        return int(self.ints[node, DEPTH])

    def rule(self, node: int) -> SplitRule:
        return SplitRule(int(self.ints[node, VAR]), float(self.floats[node, CUT]))

    def params(self, node: int) -> LeafParams:
        f = self.floats[node]
        return LeafParams(float(f[H]), float(f[LAM2]), float(f[NU]))

    def set_params(self, node: int, params: LeafParams) -> None:
        self.floats[node, H], self.floats[node, LAM2], self.floats[node, NU] = params

    def children(self, node: int) -> tuple[int, int]:
        return int(self.ints[node, LEFT]), int(self.ints[node, RIGHT])

    def to_text(self) -> str:
        """Indented ``x<var> < cut`` lines with leaves shown as ``h=...``."""
        lines: list[str] = []

        def walk(node, indent):
            pad = "  " * indent
            if self.ints[node, LEFT] < 0:
                lines.append(f"{pad}h={self.floats[node, H]:.6g}")
            else:
                lines.append(f"{pad}x{self.ints[node, VAR] + 1} < {self.floats[node, CUT]:.6g}")
                walk(self.ints[node, LEFT], indent + 1)
                walk(self.ints[node, RIGHT], indent + 1)

        walk(0, 0)
        return "\n".join(lines)

    def __repr__(self) -> str:
        return f"Tree(leaves={self.n_leaves})"


def _is_internal(s) -> bool:
    return isinstance(s, tuple) and len(s) == 4


def _check_dim(tree: Tree, p: int) -> None:
    internal = (tree.ints[:, DEPTH] >= 0) & (tree.ints[:, LEFT] >= 0)
    if internal.any() and tree.ints[internal, VAR].max() >= p:
        raise ValueError(f"tree splits on covariate {tree.ints[internal, VAR].max() + 1} "
                         f"but x has dimension {p}")


def predict(tree: Tree, x) -> float:
    """Step height of the leaf whose region contains ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("x must be a vector")
    _check_dim(tree, x.shape[0])
    return float(tree.floats[_route(tree.ints, tree.floats, x), H])


def predict_many(tree: Tree, X) -> np.ndarray:
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    _check_dim(tree, X.shape[1])
    out = np.empty(X.shape[0])
    _predict_many(tree.ints, tree.floats, X, out)
    return out


@dataclass
class LeafAssignment:
    node: np.ndarray     # node slot per row
    column: np.ndarray   # column of the design matrix per row
    leaves: np.ndarray   # node slot per column
    counts: np.ndarray

    def design_matrix(self) -> np.ndarray:
        D = np.zeros((self.node.shape[0], self.leaves.shape[0]))
        D[np.arange(self.node.shape[0]), self.column] = 1.0
        return D


def assign_leaves(tree: Tree, X) -> LeafAssignment:
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    _check_dim(tree, X.shape[1])
    node = np.empty(X.shape[0], dtype=np.int32)
    _assign(tree.ints, tree.floats, X, node)
    leaves = tree.leaves()
    lookup = np.full(tree.capacity, -1, dtype=np.int64)
    lookup[leaves] = np.arange(leaves.shape[0])
    column = lookup[node]
    counts = np.bincount(column, minlength=leaves.shape[0])
    return LeafAssignment(node, column, leaves, counts)


def partition_stats(tree: Tree, X, residuals, weights=None) -> PartitionStats:
    """Leaf counts and residual sums; with ``weights`` w these become
    sum(w^2) and sum(w * r)."""
    asg = assign_leaves(tree, X)
    r = np.asarray(residuals, dtype=float)
    k = asg.leaves.shape[0]
    if weights is None:
        n = asg.counts.astype(float)
        rs = np.bincount(asg.column, weights=r, minlength=k)
    else:
        w = np.asarray(weights, dtype=float)
        n = np.bincount(asg.column, weights=w * w, minlength=k)
        rs = np.bincount(asg.column, weights=w * r, minlength=k)
    return PartitionStats(asg.leaves, n, rs)


def tree_log_prior(tree: Tree, a: float = 0.95, b: float = 2.0, max_depth: int | None = None) -> float:
    """Log structural prior: rho_d at every internal node and 1 - rho_d at
    every leaf, with rho_d = a / (1 + d)^b. Split-rule probabilities are left
    out; they cancel against the proposal inside the move ratios."""
    md = NO_DEPTH_LIMIT if max_depth is None else int(max_depth)
    total = 0.0
    for node in range(tree.capacity):
        d = int(tree.ints[node, DEPTH])
        if d < 0:
            continue
        if tree.ints[node, LEFT] >= 0:
            total += _log_split_prob(d, a, b, md)
        else:
            total += _log_leaf_prob(d, a, b, md, True)
    return total


def valid_splits(rows, X) -> set[SplitRule]:
    """All (var, cut) with cut an observed value in the node leaving both
    children non-empty under the strict ``x < cut`` rule."""
    X = np.asarray(X, dtype=float)
    rows = np.asarray(rows, dtype=int)
    out: set[SplitRule] = set()
    if rows.size < 2:
        return out
    for v in range(X.shape[1]):
        vals = np.unique(X[rows, v])
        out.update(SplitRule(v, float(c)) for c in vals[1:])
    return out
