"""Structural analysis of the network graph.

Everything here treats the network purely structurally: an edge exists when a
module is structurally nonzero, a noise channel enters the nodes where its
shaping filter is nonzero, an excitation enters its own node.  Correlation
questions are answered by reachability; exact numerical cancellations are
deliberately ignored.

Path semantics: a path never revisits a node, endpoints are never counted as
"passed through", and a loop through a node is a directed cycle containing it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

from .errors import AlgebraicEliminationFailure, ImproperResult, NoFeasibleSelection
from .network import DynamicNetwork, NodeRef
from .transfer import ONE, TransferFunction, add, inv, mul, sub

__all__ = [
    "NoiseSource",
    "ExcitationSource",
    "PredictorSelection",
    "MethodSets",
    "ImmersedNetwork",
    "parents",
    "has_path",
    "check_input_selection",
    "confounding_variables",
    "select_inputs",
    "correlated_nodes",
    "method_sets",
    "immerse",
]

#: Exhaustive-search bound for select_inputs.
MAX_SEARCH_NODES = 20


@dataclass(frozen=True)
class NoiseSource:
    """Process-noise channel (1-based index into the white-noise vector)."""

    channel: int


@dataclass(frozen=True)
class ExcitationSource:
    """External excitation, identified by the node it enters."""

    node: int


Source = Union[NodeRef, NoiseSource, ExcitationSource]


def _children(net: DynamicNetwork) -> dict[int, tuple[int, ...]]:
    out: dict[int, list[int]] = {l: [] for l in range(1, net.L + 1)}
    for j in range(net.L):
        for l in range(net.L):
            if net.G[j][l] is not None:
                out[l + 1].append(j + 1)
    return {k: tuple(v) for k, v in out.items()}


def _touched(children: Mapping[int, Sequence[int]], starts, forbidden) -> set[int]:
    """Nodes reachable from `starts` expanding only through allowed nodes.

    A node in `forbidden` can be *reached* (as a path endpoint) but is never
    expanded, so it cannot act as an intermediate.  `starts` must already be
    admissible intermediates.
    """
    seen = set(starts)
    queue = list(starts)
    while queue:
        v = queue.pop()
        for w in children.get(v, ()):
            if w not in seen:
                seen.add(w)
                if w not in forbidden:
                    queue.append(w)
    return seen


def _entry_nodes(net: DynamicNetwork, src: Source) -> Optional[set[int]]:
    """Nodes a non-node source enters directly, or None for a node source."""
    if isinstance(src, NoiseSource):
        ell = src.channel
        if not 1 <= ell <= net.p:
            raise KeyError(f"noise channel {ell} out of range 1..{net.p}")
        return {i + 1 for i in range(net.L) if net.H[i][ell - 1] is not None}
    if isinstance(src, ExcitationSource):
        node = net.node_index(src.node)
        if node not in net.excitations:
            raise KeyError(f"node {node} carries no excitation")
        return {node}
    return None


def parents(net: DynamicNetwork, j: NodeRef) -> set[int]:
    """All nodes k with a structurally nonzero module into node j."""
    row = net.G[net.node_index(j) - 1]
    return {k + 1 for k in range(net.L) if row[k] is not None}


def has_path(net: DynamicNetwork, src: Source, dst: NodeRef, avoiding=()) -> bool:
    """True when a directed path src -> dst exists whose intermediate nodes
    all lie outside `avoiding`.  Endpoints are never considered avoided; for
    noise and excitation sources the node they enter counts as an
    intermediate (so it can block)."""
    j = net.node_index(dst)
    forbidden = {net.node_index(a) for a in avoiding}
    children = _children(net)
    entries = _entry_nodes(net, src)
    if entries is not None:
        if j in entries:
            return True
        starts = entries - forbidden
    else:
        i = net.node_index(src)
        starts = set()
        for c in children[i]:
            if c == j:
                return True
            if c not in forbidden:
                starts.add(c)
    return j in _touched(children, starts, forbidden)


@dataclass(frozen=True)
class SelectionConditions:
    a: bool  # target input included, output excluded
    b: bool  # parallel paths from input to output blocked
    c: bool  # loops through the output blocked

    @property
    def all(self) -> bool:
        return self.a and self.b and self.c


@dataclass(frozen=True)
class PredictorSelection:
    """A candidate predictor-input set for one target module, with verdicts."""

    j: int
    i: int
    D: tuple[int, ...]
    satisfied: SelectionConditions
    confounders: tuple[int, ...]


@dataclass(frozen=True)
class MethodSets:
    """Bookkeeping sets for a single-module identification problem."""

    j: int
    N_j: tuple[int, ...]       # structural parents of j
    K_j: tuple[int, ...]       # parents whose module is known a priori
    U_j: tuple[int, ...]       # parents still to be estimated
    externals: tuple[int, ...] = ()  # excitation nodes chosen for projection
    U_is: tuple[int, ...] = ()       # members of U_j correlated to the externals


def check_input_selection(net: DynamicNetwork, j: NodeRef, i: NodeRef, D) -> PredictorSelection:
    """Evaluate the three blocking conditions and the confounders of (j, i, D).

    (a) the target input i is in D and the output j is not;
    (b) every path i -> j other than the direct module is blocked by D;
    (c) every loop through j is blocked by D.
    """
    j = net.node_index(j)
    i = net.node_index(i)
    if i == j:
        raise ValueError("target input and output must differ")
    D_set = {net.node_index(d) for d in D}
    children = _children(net)

    cond_a = i in D_set and j not in D_set

    # (b): an unblocked parallel path starts with an edge i -> c, c != j
    cond_b = True
    starts = {c for c in children[i] if c != j and c not in D_set}
    if j in _touched(children, starts, D_set | {i}):
        cond_b = False

    # (c): an unblocked loop re-enters j from one of its children
    cond_c = True
    starts = {c for c in children[j] if c not in D_set}
    if j in _touched(children, starts, D_set | {j}):
        cond_c = False

    confounders = confounding_variables(net, j, D_set) if D_set else frozenset()
    return PredictorSelection(
        j=j,
        i=i,
        D=tuple(sorted(D_set)),
        satisfied=SelectionConditions(cond_a, cond_b, cond_c),
        confounders=tuple(sorted(confounders)),
    )


def confounding_variables(net: DynamicNetwork, j: NodeRef, D) -> frozenset[int]:
    """Noise channels with unblocked paths to both the output and an input.

    Channel ell confounds when a path from its disturbance reaches node j and
    another reaches some k in D, neither passing through a node of {j} | D.
    """
    j = net.node_index(j)
    D_set = {net.node_index(d) for d in D}
    if not D_set:
        raise ValueError("D must be nonempty")
    children = _children(net)
    forbidden = D_set | {j}
    out = set()
    for ell in range(1, net.p + 1):
        entries = _entry_nodes(net, NoiseSource(ell))
        touched = _touched(children, entries - forbidden, forbidden)
        reaches_output = j in entries or j in touched
        reaches_input = any(k in entries or k in touched for k in D_set)
        if reaches_output and reaches_input:
            out.add(ell)
    return frozenset(out)


def select_inputs(
    net: DynamicNetwork,
    j: NodeRef,
    i: NodeRef,
    cost: Optional[Mapping] = None,
    require_no_confounders: bool = False,
) -> PredictorSelection:
    """Cheapest predictor-input set satisfying the blocking conditions.

    Exhaustive search over subsets containing i, ordered by total measurement
    cost, then cardinality, then lexicographic node order.  With
    `require_no_confounders` the set must additionally leave no noise channel
    confounding (as the direct method needs).

    Raises
    ------
    NoFeasibleSelection
        If no subset works (cannot happen on a valid network; defensive).
    """
    if net.L > MAX_SEARCH_NODES:
        raise ValueError(f"exhaustive selection supports at most {MAX_SEARCH_NODES} nodes")
    j = net.node_index(j)
    i = net.node_index(i)
    node_cost = {n: 1.0 for n in range(1, net.L + 1)}
    if cost is not None:
        for n, c in cost.items():
            node_cost[net.node_index(n)] = float(c)

    others = [n for n in range(1, net.L + 1) if n not in (i, j)]
    candidates = []
    for size in range(len(others) + 1):
        for extra in itertools.combinations(others, size):
            D = (i,) + extra
            candidates.append((sum(node_cost[n] for n in D), len(D), tuple(sorted(D))))
    candidates.sort()

    for _, _, D in candidates:
        sel = check_input_selection(net, j, i, D)
        if not sel.satisfied.all:
            continue
        if require_no_confounders and sel.confounders:
            continue
        return sel
    raise NoFeasibleSelection(f"no predictor set for output {j}, input {i}")


def correlated_nodes(net: DynamicNetwork, externals) -> set[int]:
    """Nodes structurally correlated to any of the given excitation signals,
    i.e. reachable from the node each excitation enters (including itself)."""
    children = _children(net)
    out: set[int] = set()
    for m in externals:
        node = net.node_index(m)
        if node not in net.excitations:
            raise KeyError(f"node {node} carries no excitation")
        out |= {node} | _touched(children, {node}, forbidden=())
    return out


def method_sets(net: DynamicNetwork, j: NodeRef, known=(), externals=None) -> MethodSets:
    """Assemble the parent/known/unknown input sets for output node j."""
    j = net.node_index(j)
    N = sorted(parents(net, j))
    K = sorted({net.node_index(k) for k in known} & set(N))
    U = sorted(set(N) - set(K))
    if externals is None:
        return MethodSets(j=j, N_j=tuple(N), K_j=tuple(K), U_j=tuple(U))
    ext = tuple(sorted(net.node_index(m) for m in externals))
    U_is = sorted(set(U) & correlated_nodes(net, ext))
    return MethodSets(j=j, N_j=tuple(N), K_j=tuple(K), U_j=tuple(U),
                      externals=ext, U_is=tuple(U_is))


# -- network immersion --------------------------------------------------------


@dataclass(frozen=True)
class ImmersedNetwork:
    """Result of eliminating nodes from a network.

    The retained node signals are exactly those of the original network; the
    modules between them generally change.  Disturbances and excitations of
    eliminated nodes are rerouted into the retained nodes, so the noise map
    is no longer monic and is kept as a full mixing matrix.
    """

    kept: tuple[int, ...]                  # original 1-based node indices
    node_names: tuple[str, ...]
    G: tuple[tuple[Optional[TransferFunction], ...], ...]
    disturbance_map: tuple[tuple[Optional[TransferFunction], ...], ...]  # kept x p
    excitation_map: tuple[tuple[Optional[TransferFunction], ...], ...]   # kept x K
    lam: tuple[float, ...]
    source_excitations: tuple[int, ...]    # column semantics of excitation_map

    def position(self, node: NodeRef) -> int:
        """0-based row of an original node in the immersed network."""
        if isinstance(node, str):
            return self.node_names.index(node)
        return self.kept.index(int(node))

    def module(self, to: NodeRef, frm: NodeRef) -> Optional[TransferFunction]:
        return self.G[self.position(to)][self.position(frm)]


def immerse(net: DynamicNetwork, keep) -> ImmersedNetwork:
    """Eliminate all nodes outside `keep`, preserving the retained signals.

    Nodes are absorbed one at a time: substituting the eliminated node's own
    equation into its neighbours adds ``G_ak (1 - s_k)^-1 G_kb`` to every
    bypass module (s_k is the self-loop accumulated at k) and reroutes noise
    and excitation inflows the same way.  Self-loops accumulated at retained
    nodes are cleared at the end by rescaling their incoming row.

    Raises
    ------
    AlgebraicEliminationFailure
        If elimination hits a delay-free self-loop of unit gain.
    """
    kept = sorted({net.node_index(k) for k in keep})
    if not kept:
        raise ValueError("keep must be nonempty")

    G: dict[tuple[int, int], TransferFunction] = {}
    selfloop: dict[int, TransferFunction] = {}
    for j in range(net.L):
        for l in range(net.L):
            if net.G[j][l] is not None:
                G[(j + 1, l + 1)] = net.G[j][l]
    Hm: dict[tuple[int, int], TransferFunction] = {}
    for idx in range(net.L):
        for ell in range(net.p):
            if net.H[idx][ell] is not None:
                Hm[(idx + 1, ell + 1)] = net.H[idx][ell]
    Rm: dict[tuple[int, int], TransferFunction] = {
        (node, col + 1): ONE for col, node in enumerate(net.excitations)
    }

    def _acc(table, key, term):
        table[key] = add(table[key], term) if key in table else term

    alive = set(range(1, net.L + 1))
    for k in sorted(alive - set(kept)):
        try:
            gain = inv(sub(ONE, selfloop.get(k, TransferFunction((0.0,)))))
        except ImproperResult as exc:
            raise AlgebraicEliminationFailure(
                f"delay-free unit-gain self-loop while eliminating node {k}"
            ) from exc
        sources = [(b, tf) for (kk, b), tf in G.items() if kk == k]
        targets = [(a, tf) for (a, kk), tf in G.items() if kk == k and a != k]
        noise_in = [(ell, tf) for (kk, ell), tf in Hm.items() if kk == k]
        exc_in = [(m, tf) for (kk, m), tf in Rm.items() if kk == k]
        for a, g_ak in targets:
            f = mul(g_ak, gain)
            for b, g_kb in sources:
                if b == k:
                    continue
                if b == a:
                    _acc(selfloop, a, mul(f, g_kb))
                else:
                    _acc(G, (a, b), mul(f, g_kb))
            for ell, h in noise_in:
                _acc(Hm, (a, ell), mul(f, h))
            for m, r in exc_in:
                _acc(Rm, (a, m), mul(f, r))
        alive.discard(k)
        for key in [key for key in G if k in key]:
            del G[key]
        for key in [key for key in Hm if key[0] == k]:
            del Hm[key]
        for key in [key for key in Rm if key[0] == k]:
            del Rm[key]
        selfloop.pop(k, None)

    # clear self-loops accumulated at retained nodes
    for a, s in list(selfloop.items()):
        if s.is_zero:
            continue
        try:
            scale = inv(sub(ONE, s))
        except ImproperResult as exc:
            raise AlgebraicEliminationFailure(
                f"delay-free unit-gain self-loop at retained node {a}"
            ) from exc
        for key in [key for key in G if key[0] == a]:
            G[key] = mul(scale, G[key])
        for key in [key for key in Hm if key[0] == a]:
            Hm[key] = mul(scale, Hm[key])
        for key in [key for key in Rm if key[0] == a]:
            Rm[key] = mul(scale, Rm[key])

    def _matrix(table, cols):
        return tuple(
            tuple(table.get((a, c), None) for c in cols) for a in kept
        )

    return ImmersedNetwork(
        kept=tuple(kept),
        node_names=tuple(net.node_names[a - 1] for a in kept),
        G=_matrix(G, kept),
        disturbance_map=_matrix(Hm, range(1, net.p + 1)),
        excitation_map=_matrix(Rm, range(1, net.K + 1)),
        lam=net.lam,
        source_excitations=net.excitations,
    )
