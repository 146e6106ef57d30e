"""Entries of sparse matrix products and powers by walk-tree exploration.

``(A_1 ... A_d)(i, j)`` is the sum, over all walks ``i -> k_1 -> ... -> j``
through the sparsity graphs, of the products of traversed entries. The
default ("tree") mode explores that tree depth-first with an explicit stack,
so memory is ``O(d * s)`` and the cost is ``O(d * s**d)`` queries.

With ``memo=True`` walk prefixes that reach the same node at the same depth
are merged before expanding further (a cache keyed by depth and node). This
is the practical mode for repeated estimation at desk scale, at the price of
holding one frontier of at most ``min(N, s**k)`` nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CheckError, DepthGuardError, GuardError, InputError
from .oracle import MatrixOracle

MAX_TREE_BITS = 60
DEFAULT_CACHE_LIMIT = 10_000_000
IMAG_TOL = 1e-10


@dataclass(frozen=True)
class PowerDiagonal:
    """``values[k]`` is ``Re A^k(index, index)`` for ``k = 0 .. degree``."""

    index: int
    degree: int
    values: np.ndarray
    query_count: int
    max_imag: float = 0.0


def check_depth(d: int, s: int) -> None:
    """Refuse walk trees with more than about ``2**60`` nodes.

    A sparsity-1 chain is a path, never a tree, so it is always allowed.
    """
    if s > 1 and d * math.log2(s) > MAX_TREE_BITS:
        need = math.floor(MAX_TREE_BITS / math.log2(s))
        raise DepthGuardError(
            f"walk tree of depth {d} at sparsity {s} has ~2^{d * math.log2(s):.0f} "
            f"nodes; reduce the degree to at most {need}"
        )


def _validate_chain(chain: Sequence[MatrixOracle]) -> int:
    if len(chain) == 0:
        raise InputError("product chain must contain at least one matrix")
    N = chain[0].dim
    for A in chain[1:]:
        if A.dim != N:
            raise InputError(f"dimension mismatch in chain: {A.dim} != {N}")
    return N


def _product_tree(chain, i, j):
    d = len(chain)
    last = chain[-1]
    total = 0j
    queries = 0
    stack = [(0, i, 1 + 0j)]
    while stack:
        level, node, pref = stack.pop()
        queries += 1
        if level == d - 1:
            v = last.entry(node, j)
            if v:
                total += pref * v
            continue
        step = chain[level]
        for k, a in reversed(step.row_support(node)):
            stack.append((level + 1, k, pref * a))
    return total, queries


def _product_frontier(chain, i, j, cache_limit):
    frontier = {i: 1 + 0j}
    queries = 0
    keys = 0
    for step in chain:
        nxt: dict[int, complex] = {}
        for node, val in frontier.items():
            queries += 1
            for k, a in step.row_support(node):
                nxt[k] = nxt.get(k, 0j) + val * a
        keys += len(nxt)
        if keys > cache_limit:
            raise GuardError(f"walk cache exceeded {cache_limit} (depth, node) keys")
        frontier = nxt
        if not frontier:
            break
    return frontier.get(j, 0j), queries


def product_with_queries(
    chain: Sequence[MatrixOracle],
    i: int,
    j: int,
    memo: bool = False,
    cache_limit: int = DEFAULT_CACHE_LIMIT,
) -> tuple[complex, int]:
    """Like :func:`product_entry` but also returns the number of oracle calls."""
    _validate_chain(chain)
    chain[0].check_index(i)
    chain[-1].check_index(j)
    if memo:
        return _product_frontier(chain, i, j, cache_limit)
    check_depth(len(chain), max(A.sparsity for A in chain))
    return _product_tree(chain, i, j)


def product_entry(
    chain: Sequence[MatrixOracle], i: int, j: int, memo: bool = False
) -> complex:
    """Entry ``(i, j)`` of the ordered product ``chain[0] @ ... @ chain[-1]``.

    Walks leave ``i`` through row supports; the last factor is read with an
    entry query.
    """
    return product_with_queries(chain, i, j, memo=memo)[0]


def power_entry(A: MatrixOracle, d: int, i: int, j: int, memo: bool = False) -> complex:
    if d < 0:
        raise InputError(f"power must be >= 0, got {d}")
    A.check_index(i)
    A.check_index(j)
    if d == 0:
        return 1 + 0j if i == j else 0j
    return product_entry([A] * d, i, j, memo=memo)


def diagonal_powers(
    A: MatrixOracle,
    d: int,
    i: int,
    memo: bool = False,
    cache_limit: int = DEFAULT_CACHE_LIMIT,
) -> PowerDiagonal:
    """``Re A^k(i, i)`` for every ``k <= d`` from a single traversal rooted at ``i``.

    Each walk prefix of length ``k`` that returns to ``i`` contributes to
    entry ``k``, so all powers share one tree (or one frontier sequence).
    """
    if d < 0:
        raise InputError(f"degree must be >= 0, got {d}")
    A.check_index(i)
    acc = [0j] * (d + 1)
    queries = 0
    if memo:
        acc[0] = 1 + 0j
        frontier = {i: 1 + 0j}
        keys = 0
        for k in range(1, d + 1):
            nxt: dict[int, complex] = {}
            for node, val in frontier.items():
                queries += 1
                for col, a in A.row_support(node):
                    nxt[col] = nxt.get(col, 0j) + val * a
            keys += len(nxt)
            if keys > cache_limit:
                raise GuardError(f"walk cache exceeded {cache_limit} (depth, node) keys")
            acc[k] = nxt.get(i, 0j)
            frontier = nxt
            if not frontier:
                break
    else:
        check_depth(d, A.sparsity)
        stack = [(0, i, 1 + 0j)]
        while stack:
            depth, node, pref = stack.pop()
            if node == i:
                acc[depth] += pref
            if depth == d:
                continue
            queries += 1
            for col, a in reversed(A.row_support(node)):
                stack.append((depth + 1, col, pref * a))

    max_imag = 0.0
    if A.hermitian:
        for v in acc:
            if abs(v.imag) > IMAG_TOL * max(1.0, abs(v)):
                raise CheckError(
                    f"Hermitian power diagonal has imaginary part {v.imag:.3g} at index {i}"
                )
            max_imag = max(max_imag, abs(v.imag))
    values = np.array([v.real for v in acc])
    values.setflags(write=False)
    return PowerDiagonal(i, d, values, queries, max_imag)
