"""Context-free grammar of flexible cycles and grammar-constrained variation.

States are indexed by depth below the finest level: ``s0`` is the finest
level, ``s{D}`` with ``D = n_flex - 1`` is the level where the standard
V-cycle takes over.  A derivation describes the cycle backwards from its final
state; ``InitialGuess`` ends the chain and execution runs the chain in reverse.

==============  =====================================================
production      right-hand side (state ``s_d``)
==============  =====================================================
l1Relax         ``S_l1 R s_d``
HybridRelax     ``S_H w_i w_o R s_d``
JacobiRelax     ``w R s_d``
CGC             ``alpha s_{d+1}``  (``d < D``)
Restrict        ``s_{d-1}``        (``0 < d < D``)
InitialGuess    (``d = 0`` only)
RestrictAndSolve ``s_{D-1}``       (the only production of ``s_D``)
==============  =====================================================
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .cycle import CoarseCorrection, FlexProgram, Relax, Restrict, StdVSolve, remap_program
from .hierarchy import Hierarchy
from .smoothers import SmootherSpec

__all__ = [
    "Grammar", "Node", "random_derivation", "genotype_to_program", "crossover", "mutate",
    "vcycle_tree", "tree_depth", "tree_key", "search_space_estimate", "SearchSpace", "WEIGHTS",
    "GRAMMAR_DEPTH_CAP",
]

WEIGHTS = tuple(round(0.1 + 0.05 * k, 2) for k in range(37))
#: Node-depth cap for derivation trees; keeps decoded programs under 256 instructions.
GRAMMAR_DEPTH_CAP = 170


@dataclass
class Node:
    """Derivation tree node; terminal-category nodes carry ``value`` and no children."""

    symbol: str
    prod: str | None = None
    children: list = field(default_factory=list)
    value: object = None

    def copy(self) -> "Node":
        return Node(self.symbol, self.prod, [c.copy() for c in self.children], self.value)

    @property
    def is_terminal(self) -> bool:
        return self.prod is None


def _state(d: int) -> str:
    return f"s{d}"


def _depth_of(symbol: str) -> int:
    return int(symbol[1:])


class Grammar:
    """Flexible-cycle grammar over ``n_flex`` levels (finest through the V-cycle level)."""

    def __init__(self, n_flex: int = 5, include_zero_weight: bool = False,
                 depth_cap: int = GRAMMAR_DEPTH_CAP, init_depth: int = 40):
        if n_flex < 2:
            raise ValueError("n_flex must be >= 2")
        self.n_flex = n_flex
        self.D = n_flex - 1
        self.depth_cap = depth_cap
        self.init_depth = init_depth
        weights = ((0.0,) if include_zero_weight else ()) + WEIGHTS
        self.terminals = {
            "S_l1": ("GSF", "GSB", "Jacobi"),
            "S_H": ("GSF", "GSB"),
            "R": ("lex", "CF"),
            "w_i": weights, "w_o": weights, "w": weights, "alpha": weights,
        }
        self.productions: dict[str, list[tuple[str, tuple[str, ...]]]] = {}
        for d in range(self.D):
            s = _state(d)
            rules = [("l1Relax", ("S_l1", "R", s)),
                     ("HybridRelax", ("S_H", "w_i", "w_o", "R", s)),
                     ("JacobiRelax", ("w", "R", s)),
                     ("CGC", ("alpha", _state(d + 1)))]
            rules.append(("Restrict", (_state(d - 1),)) if d > 0 else ("InitialGuess", ()))
            self.productions[s] = rules
        self.productions[_state(self.D)] = [("RestrictAndSolve", (_state(self.D - 1),))]
        self.productions["G"] = [("Start", (_state(0),))]
        self.min_depth = self._min_depths()

    @property
    def nonterminals(self) -> list[str]:
        return list(self.productions)

    def _min_depths(self) -> dict[str, float]:
        md = {t: 1 for t in self.terminals}
        md.update({s: math.inf for s in self.productions})
        changed = True
        while changed:
            changed = False
            for s, rules in self.productions.items():
                best = min(self.rule_depth(rhs, md) for _, rhs in rules)
                if best < md[s]:
                    md[s] = best
                    changed = True
        return md

    def rule_depth(self, rhs, md=None) -> float:
        md = self.min_depth if md is None else md
        return 1 + max((md[c] for c in rhs), default=0)

    def rule(self, symbol: str, prod: str) -> tuple[str, ...]:
        for name, rhs in self.productions[symbol]:
            if name == prod:
                return rhs
        raise KeyError(f"{symbol} has no production {prod}")


def _grow(g: Grammar, symbol: str, budget: int, rng: np.random.Generator) -> Node:
    # iterative along the state chain to keep Python recursion shallow
    root = None
    parent, slot = None, 0
    while True:
        if symbol in g.terminals:
            vals = g.terminals[symbol]
            node = Node(symbol, value=vals[int(rng.integers(len(vals)))])
        else:
            rules = [(p, rhs) for p, rhs in g.productions[symbol] if g.rule_depth(rhs) <= budget]
            prod, rhs = rules[int(rng.integers(len(rules)))]
            node = Node(symbol, prod)
            chain = None
            for k, child in enumerate(rhs):
                if child in g.terminals:
                    node.children.append(_grow(g, child, budget - 1, rng))
                else:
                    node.children.append(None)
                    chain = (k, child)
        if parent is None:
            root = node
        else:
            parent.children[slot] = node
        if node.is_terminal or chain is None:
            return root
        parent, slot = node, chain[0]
        symbol = chain[1]
        budget -= 1


def random_derivation(g: Grammar, max_depth: int | None, rng: np.random.Generator,
                      symbol: str = "G") -> Node:
    """Grow-method derivation of ``symbol`` with node depth at most ``max_depth``."""
    max_depth = g.init_depth if max_depth is None else max_depth
    if max_depth < g.min_depth[symbol]:
        raise ValueError(f"max_depth {max_depth} below the minimal completion "
                         f"depth {g.min_depth[symbol]} of {symbol}")
    return _grow(g, symbol, max_depth, rng)


def _iter_nodes(tree: Node):
    """Pre-order ``(node, parent, index, depth)`` with depth 1 at the root."""
    stack = [(tree, None, -1, 1)]
    while stack:
        node, parent, idx, depth = stack.pop()
        yield node, parent, idx, depth
        for k in range(len(node.children) - 1, -1, -1):
            stack.append((node.children[k], node, k, depth + 1))


def tree_depth(tree: Node) -> int:
    return max(d for *_, d in _iter_nodes(tree))


def tree_key(tree: Node) -> str:
    """Stable hash of a derivation tree."""
    parts = []
    for node, _, _, depth in _iter_nodes(tree):
        parts.append(f"{depth}:{node.symbol}:{node.prod}:{node.value!r}")
    return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


def _chain(tree: Node) -> list[Node]:
    """State nodes from the final state back to InitialGuess."""
    out = []
    node = tree.children[0] if tree.symbol == "G" else tree
    while node is not None:
        out.append(node)
        nxt = None
        for c in node.children:
            if not c.is_terminal:
                nxt = c
        node = nxt
    return out


def _relax_spec(node: Node) -> SmootherSpec:
    vals = [c.value for c in node.children if c.is_terminal]
    if node.prod == "l1Relax":
        return SmootherSpec(vals[0], "l1", vals[1])
    if node.prod == "HybridRelax":
        return SmootherSpec(vals[0], "weighted", vals[3], omega_i=vals[1], omega_o=vals[2])
    return SmootherSpec("Jacobi", "weighted", vals[1], omega=vals[0])


def genotype_to_program(tree: Node, g: Grammar, hierarchy: Hierarchy | int | None = None) -> FlexProgram:
    """Decode a derivation into a program for ``hierarchy`` (or a top level ``L``).

    Without a hierarchy the program spans levels ``n_flex - 1 .. 0``.
    """
    D = g.D
    instrs = []
    for node in reversed(_chain(tree)):
        lvl = D - _depth_of(node.symbol)
        p = node.prod
        if p in ("l1Relax", "HybridRelax", "JacobiRelax"):
            instrs.append(Relax(lvl, _relax_spec(node)))
        elif p == "CGC":
            instrs.append(CoarseCorrection(lvl, float(node.children[0].value)))
        elif p == "Restrict":
            instrs.append(Restrict(lvl + 1))
        elif p == "RestrictAndSolve":
            instrs += [Restrict(lvl + 1), StdVSolve(lvl)]
    prog = FlexProgram(tuple(instrs), D, 0)
    L = hierarchy.L if isinstance(hierarchy, Hierarchy) else hierarchy
    if L is not None and L != D:
        prog = remap_program(prog, L)
    return prog


def _minimal(g: Grammar, symbol: str) -> Node:
    """Deterministic minimal-depth completion (first values, first shallowest rule)."""
    if symbol in g.terminals:
        vals = g.terminals[symbol]
        return Node(symbol, value=1.0 if 1.0 in vals else vals[0])
    prod, rhs = min(g.productions[symbol], key=lambda r: g.rule_depth(r[1]))
    return Node(symbol, prod, [_minimal(g, c) for c in rhs])


def _enforce_cap(g: Grammar, tree: Node) -> Node:
    if tree_depth(tree) <= g.depth_cap:
        return tree
    # deepest chain position whose minimal completion still fits
    pos = {id(n): d for n, _, _, d in _iter_nodes(tree)}
    parents = {id(c): (n, k) for n, _, _, _ in _iter_nodes(tree) for k, c in enumerate(n.children)}
    for node in reversed(_chain(tree)):
        if pos[id(node)] + g.min_depth[node.symbol] - 1 <= g.depth_cap:
            if pos[id(node)] + (tree_depth(node) - 1) <= g.depth_cap:
                return tree
            parent, k = parents[id(node)]
            parent.children[k] = _minimal(g, node.symbol)
            return tree
    raise AssertionError("root cannot be completed within the depth cap")


def crossover(a: Node, b: Node, g: Grammar, rng: np.random.Generator) -> tuple[Node, Node]:
    """Swap subtrees rooted at equal symbols.

    Parents are returned verbatim when they are identical or when the partner
    has no node with the chosen symbol.
    """
    a, b = a.copy(), b.copy()
    if tree_key(a) == tree_key(b):
        # swapping between equal parents could still reshuffle one tree; keep them verbatim
        return a, b
    nodes_a = [(n, p, k) for n, p, k, _ in _iter_nodes(a) if p is not None]
    if not nodes_a:
        return a, b
    na, pa, ka = nodes_a[int(rng.integers(len(nodes_a)))]
    matches = [(n, p, k) for n, p, k, _ in _iter_nodes(b) if p is not None and n.symbol == na.symbol]
    if not matches:
        return a, b
    nb, pb, kb = matches[int(rng.integers(len(matches)))]
    pa.children[ka], pb.children[kb] = nb, na
    return _enforce_cap(g, a), _enforce_cap(g, b)


def mutate(tree: Node, g: Grammar, rng: np.random.Generator) -> Node:
    """Regrow a uniformly chosen node within the remaining depth budget."""
    tree = tree.copy()
    nodes = list(_iter_nodes(tree))
    node, parent, k, depth = nodes[int(rng.integers(len(nodes)))]
    budget = min(g.depth_cap - depth + 1, g.init_depth)
    budget = max(budget, g.min_depth[node.symbol])
    fresh = random_derivation(g, budget, rng, node.symbol)
    if parent is None:
        return _enforce_cap(g, fresh)
    parent.children[k] = fresh
    return _enforce_cap(g, tree)


def _term(symbol, value):
    return Node(symbol, value=value)


def vcycle_tree(g: Grammar, pre: str = "GSF", post: str = "GSB", ordering: str = "lex") -> Node:
    """Derivation of the V(1,1) shape over the flexible levels."""
    def relax(d, kind, inner):
        return Node(_state(d), "l1Relax", [_term("S_l1", kind), _term("R", ordering), inner])

    # innermost first: the down leg, then the solve, then the up leg
    node = Node(_state(0), "InitialGuess")
    node = relax(0, pre, node)
    for d in range(1, g.D):
        node = relax(d, pre, Node(_state(d), "Restrict", [node]))
    node = Node(_state(g.D), "RestrictAndSolve", [node])
    for d in range(g.D - 1, -1, -1):
        node = relax(d, post, Node(_state(d), "CGC", [_term("alpha", 1.0), node]))
    return Node("G", "Start", [node])


@dataclass(frozen=True)
class SearchSpace:
    summed: float  # (sum_{nu=1}^{nu_max} m^nu)^(2L)
    closed_form: float  # ((m^(nu_max+1) - 1) / (m - 1))^(2L), i.e. the sum from nu=0
    approx: float  # m^(2 L nu_max)


def search_space_estimate(L: int, m: int, nu_max: int) -> SearchSpace:
    """Count of V-shaped cycles with per-level smoothing sequences of 1..nu_max sweeps
    drawn from ``m`` smoothers, on ``L`` levels with pre- and post-smoothing."""
    if min(L, m, nu_max) < 1:
        raise ValueError("L, m and nu_max must be positive")
    summed = float(sum(m ** nu for nu in range(1, nu_max + 1))) ** (2 * L)
    if m == 1:
        closed = float(nu_max + 1) ** (2 * L)
    else:
        closed = (float(m ** (nu_max + 1) - 1) / (m - 1)) ** (2 * L)
    return SearchSpace(summed, closed, float(m) ** (2 * L * nu_max))
