"""Dynamic network model: interconnection structure, validation, evaluation.

A network couples L scalar node signals through a matrix of transfer-function
modules (zero diagonal), adds filtered white process noise through a monic
noise-shaping matrix, and injects user excitations directly at selected nodes.
Node indices are 1-based throughout the public API, matching the convention
used in network description files and reports; node names may be used
interchangeably with indices.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import SchemaError, SingularAtPoint
from .transfer import ONE, STABILITY_MARGIN, TransferFunction, mul, sub

__all__ = [
    "DynamicNetwork",
    "ValidationReport",
    "validate_network",
    "network_transfer",
    "network_from_dict",
    "network_to_dict",
    "load_network",
    "save_network",
    "net_hash",
]

NodeRef = Union[int, str]
TFMatrix = tuple[tuple[Optional[TransferFunction], ...], ...]

#: Condition-number bound above which I - G(z) is treated as singular.
COND_LIMIT = 1e12


def _as_tf_matrix(rows, n_rows: int, n_cols: int, what: str) -> TFMatrix:
    if len(rows) != n_rows:
        raise ValueError(f"{what} must have {n_rows} rows")
    out = []
    for r in rows:
        r = list(r)
        if len(r) != n_cols:
            raise ValueError(f"{what} rows must have {n_cols} entries")
        row = []
        for entry in r:
            if entry is None:
                row.append(None)
            elif isinstance(entry, TransferFunction):
                row.append(None if entry.is_zero else entry)
            else:
                tf = TransferFunction.constant(float(entry))
                row.append(None if tf.is_zero else tf)
        out.append(tuple(row))
    return tuple(out)


@dataclass(frozen=True)
class DynamicNetwork:
    """Immutable description of a linear dynamic network.

    Parameters
    ----------
    node_names : sequence of str
        Labels of the L node signals.
    G : L x L matrix of TransferFunction or None
        ``G[j][l]`` is the module from node l+1 into node j+1; the diagonal
        is structurally zero.  ``None`` (or a zero transfer function) marks
        the absence of a connection.
    H : L x p matrix of TransferFunction or None
        Noise-shaping filters.  The feedthrough of ``H`` must equal the
        first-p-rows identity embedding, making the noise model monic.
    lam : sequence of float
        Strictly positive variances of the p driving white-noise channels.
    excitations : sequence of int or str
        Nodes that carry an external excitation signal, by 1-based index or
        name.  Each excited node owns one column of the binary selection
        matrix ``R``, in ascending node order.
    """

    node_names: tuple[str, ...]
    G: TFMatrix
    H: TFMatrix = ()
    lam: tuple[float, ...] = ()
    excitations: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        names = tuple(str(n) for n in self.node_names)
        if len(set(names)) != len(names):
            raise ValueError("node names must be unique")
        L = len(names)
        object.__setattr__(self, "node_names", names)
        object.__setattr__(self, "G", _as_tf_matrix(self.G, L, L, "G"))
        lam = tuple(float(v) for v in self.lam)
        p = len(lam)
        if p > L:
            raise ValueError("more noise channels than nodes (p > L)")
        if any(v <= 0 for v in lam):
            raise ValueError("noise variances must be strictly positive")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "H", _as_tf_matrix(self.H, L, p, "H") if p else ((),) * L)
        for j in range(L):
            if self.G[j][j] is not None:
                raise ValueError(f"G has a self-loop at node {j + 1}; diagonal must be zero")
        for i in range(L):
            for l in range(p):
                want = 1.0 if i == l else 0.0
                entry = self.H[i][l]
                got = 0.0 if entry is None else entry.feedthrough
                if abs(got - want) > 1e-9:
                    raise ValueError(
                        f"H is not monic: feedthrough of H[{i + 1}][{l + 1}] is {got}, expected {want}"
                    )
        exc = tuple(sorted(self._resolve(e) for e in self.excitations))
        if len(set(exc)) != len(exc):
            raise ValueError("duplicate excitation nodes")
        object.__setattr__(self, "excitations", exc)

    # -- size and lookup ----------------------------------------------------

    @property
    def L(self) -> int:
        return len(self.node_names)

    @property
    def p(self) -> int:
        return len(self.lam)

    @property
    def K(self) -> int:
        return len(self.excitations)

    def _resolve(self, node: NodeRef) -> int:
        """Resolve a name or 1-based index to a 1-based index."""
        if isinstance(node, str):
            try:
                return self.node_names.index(node) + 1
            except ValueError:
                raise KeyError(f"unknown node name {node!r}") from None
        j = int(node)
        if not 1 <= j <= self.L:
            raise KeyError(f"node index {j} out of range 1..{self.L}")
        return j

    def node_index(self, node: NodeRef) -> int:
        return self._resolve(node)

    def module(self, to: NodeRef, frm: NodeRef) -> Optional[TransferFunction]:
        return self.G[self._resolve(to) - 1][self._resolve(frm) - 1]

    @property
    def R(self) -> np.ndarray:
        """Binary L x K selection matrix of the excitation signals."""
        R = np.zeros((self.L, self.K))
        for col, node in enumerate(self.excitations):
            R[node - 1, col] = 1.0
        return R

    def excitation_column(self, node: NodeRef) -> int:
        """0-based column of the excitation entering the given node."""
        j = self._resolve(node)
        try:
            return self.excitations.index(j)
        except ValueError:
            raise KeyError(f"node {j} carries no excitation") from None

    # -- numeric evaluation --------------------------------------------------

    def eval_G(self, z: complex) -> np.ndarray:
        out = np.zeros((self.L, self.L), dtype=complex)
        for j in range(self.L):
            for l in range(self.L):
                if self.G[j][l] is not None:
                    out[j, l] = self.G[j][l](z)
        return out

    def eval_H(self, z: complex) -> np.ndarray:
        out = np.zeros((self.L, self.p), dtype=complex)
        for j in range(self.L):
            for l in range(self.p):
                if self.H[j][l] is not None:
                    out[j, l] = self.H[j][l](z)
        return out

    def feedthrough_G(self) -> np.ndarray:
        out = np.zeros((self.L, self.L))
        for j in range(self.L):
            for l in range(self.L):
                if self.G[j][l] is not None:
                    out[j, l] = self.G[j][l].feedthrough
        return out


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of the structural and stability checks on a network."""

    well_posed: bool
    algebraic_loops: tuple[tuple[int, ...], ...]
    unstable_closed_loop: bool
    messages: tuple[str, ...] = ()


def _simple_cycles(children: Mapping[int, Sequence[int]], nodes: Sequence[int]):
    """All simple directed cycles, each reported once from its smallest node."""
    cycles = []
    for start in nodes:
        stack = [(start, [start])]
        while stack:
            v, path = stack.pop()
            for w in children.get(v, ()):
                if w < start:
                    continue  # canonical start is the smallest node of the cycle
                if w == start:
                    cycles.append(tuple(path))
                elif w not in path:
                    stack.append((w, path + [w]))
    return cycles


def _det_tf(entries: list[list[Optional[TransferFunction]]]) -> TransferFunction:
    """Determinant of a matrix of transfer functions by cofactor expansion."""
    n = len(entries)
    if n == 1:
        e = entries[0][0]
        return e if e is not None else TransferFunction((0.0,))
    det = TransferFunction((0.0,))
    for col in range(n):
        e = entries[0][col]
        if e is None:
            continue
        minor = [[row[c] for c in range(n) if c != col] for row in entries[1:]]
        term = mul(e, _det_tf(minor))
        det = det + term if col % 2 == 0 else det - term
    return det


#: Beyond this node count the symbolic determinant check is skipped.
_DET_SIZE_LIMIT = 12


def validate_network(net: DynamicNetwork) -> ValidationReport:
    """Check well-posedness, algebraic loops and closed-loop stability.

    Well-posedness holds when every directed cycle contains at least one
    strictly delayed module, or failing that, when the instantaneous gain
    matrix ``I - G(inf)`` is invertible.  All findings are reported; nothing
    raises.
    """
    L = net.L
    messages: list[str] = []

    feedthrough_children: dict[int, list[int]] = {j: [] for j in range(1, L + 1)}
    for j in range(L):
        for l in range(L):
            tf = net.G[j][l]
            if tf is not None and not tf.has_delay:
                feedthrough_children[l + 1].append(j + 1)
    loops = tuple(sorted(_simple_cycles(feedthrough_children, range(1, L + 1))))

    well_posed = True
    if loops:
        messages.append(f"{len(loops)} delay-free cycle(s) found")
        A0 = np.eye(L) - net.feedthrough_G()
        if np.linalg.cond(A0) < COND_LIMIT:
            messages.append("instantaneous coupling I - G(inf) is invertible; loops resolvable")
        else:
            well_posed = False
            messages.append("I - G(inf) is numerically singular; network is not well posed")

    unstable = False
    if L <= _DET_SIZE_LIMIT:
        entries: list[list[Optional[TransferFunction]]] = []
        for j in range(L):
            row: list[Optional[TransferFunction]] = []
            for l in range(L):
                g = net.G[j][l]
                if j == l:
                    row.append(sub(ONE, g) if g is not None else ONE)
                else:
                    row.append(None if g is None else -g)
            entries.append(row)
        char = _det_tf(entries)
        roots = char.zeros()
        if roots.size and np.max(np.abs(roots)) >= 1.0 - STABILITY_MARGIN:
            unstable = True
            messages.append(
                f"closed-loop pole magnitude {np.max(np.abs(roots)):.6f} >= 1"
            )
    else:
        messages.append("closed-loop pole check skipped (network larger than "
                        f"{_DET_SIZE_LIMIT} nodes); rely on simulation divergence guard")

    for j in range(L):
        for l in range(net.p):
            tf = net.H[j][l]
            if tf is not None and not tf.is_stable:
                messages.append(f"noise filter H[{j + 1}][{l + 1}] is unstable")
    if net.p and net.p <= _DET_SIZE_LIMIT:
        top = [[net.H[i][l] for l in range(net.p)] for i in range(net.p)]
        det_h = _det_tf(top)
        zeros = det_h.zeros()
        if det_h.is_zero or (zeros.size and np.max(np.abs(zeros)) >= 1.0 - STABILITY_MARGIN):
            messages.append("noise model has no stable inverse (det of leading H block "
                            "has zeros on or outside the unit circle)")
        poles = det_h.poles()
        if poles.size and np.max(np.abs(poles)) >= 1.0 - STABILITY_MARGIN:
            messages.append("noise model determinant has unstable poles")

    return ValidationReport(
        well_posed=well_posed,
        algebraic_loops=loops,
        unstable_closed_loop=unstable,
        messages=tuple(messages),
    )


def network_transfer(net: DynamicNetwork, z: complex) -> np.ndarray:
    """Value of the closed-loop map from (e, r) to w at the point z.

    Returns the L x (p + K) complex matrix ``(I - G(z))^-1 [H(z)  R]``.

    Raises
    ------
    SingularAtPoint
        If the condition number of ``I - G(z)`` exceeds 1e12.
    """
    A = np.eye(net.L, dtype=complex) - net.eval_G(z)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularAtPoint(f"I - G(z) has condition number {cond:.3e} at z = {z}")
    rhs = np.hstack([net.eval_H(z), net.R.astype(complex)])
    return np.linalg.solve(A, rhs)


# -- JSON description files --------------------------------------------------

_TOP_KEYS = {"format", "nodes", "modules", "noise", "excitations"}
_MODULE_KEYS = {"from", "to", "num", "den"}
_NOISE_KEYS = {"H", "lambda"}
_H_ENTRY_KEYS = {"row", "col", "num", "den"}


def _check_keys(obj: Mapping, allowed: set, where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise SchemaError(f"unknown key(s) {sorted(unknown)} in {where}")


def network_from_dict(doc: Mapping) -> DynamicNetwork:
    """Build a network from its JSON document (see docs/network-schema)."""
    if not isinstance(doc, Mapping):
        raise SchemaError("network document must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "network document")
    if "nodes" not in doc or "modules" not in doc:
        raise SchemaError("network document requires 'nodes' and 'modules'")
    names = [str(n) for n in doc["nodes"]]
    L = len(names)

    def idx(ref, where: str) -> int:
        if isinstance(ref, str):
            if ref not in names:
                raise SchemaError(f"unknown node {ref!r} in {where}")
            return names.index(ref)
        i = int(ref)
        if not 1 <= i <= L:
            raise SchemaError(f"node index {i} out of range in {where}")
        return i - 1

    G: list[list[Optional[TransferFunction]]] = [[None] * L for _ in range(L)]
    for m in doc["modules"]:
        _check_keys(m, _MODULE_KEYS, "module entry")
        j = idx(m["to"], "module 'to'")
        l = idx(m["from"], "module 'from'")
        if j == l:
            raise SchemaError(f"self-loop module at node {names[j]!r}")
        if G[j][l] is not None:
            raise SchemaError(f"duplicate module {names[l]!r} -> {names[j]!r}")
        G[j][l] = TransferFunction(tuple(m["num"]), tuple(m["den"]))

    noise = doc.get("noise", {"H": "diagonal", "lambda": []})
    _check_keys(noise, _NOISE_KEYS, "noise section")
    lam = tuple(float(v) for v in noise.get("lambda", []))
    p = len(lam)
    H: list[list[Optional[TransferFunction]]] = [[None] * p for _ in range(L)]
    h_spec = noise.get("H", "diagonal")
    if h_spec == "diagonal":
        for i in range(p):
            H[i][i] = ONE
    else:
        for entry in h_spec:
            _check_keys(entry, _H_ENTRY_KEYS, "noise H entry")
            i = idx(entry["row"], "noise H row")
            col = int(entry["col"])
            if not 1 <= col <= p:
                raise SchemaError(f"noise channel {col} out of range 1..{p}")
            H[i][col - 1] = TransferFunction(tuple(entry["num"]), tuple(entry["den"]))

    excitations = tuple(idx(e, "excitations") + 1 for e in doc.get("excitations", []))
    return DynamicNetwork(node_names=tuple(names), G=G, H=H, lam=lam, excitations=excitations)


def _tf_json(tf: TransferFunction) -> dict:
    return {"num": list(tf.num), "den": list(tf.den)}


def network_to_dict(net: DynamicNetwork) -> dict:
    """Serialize a network to its canonical JSON document."""
    modules = []
    for j in range(net.L):
        for l in range(net.L):
            if net.G[j][l] is not None:
                modules.append({
                    "from": net.node_names[l],
                    "to": net.node_names[j],
                    **_tf_json(net.G[j][l]),
                })
    diagonal = all(
        (net.H[i][l] == ONE if i == l else net.H[i][l] is None)
        for i in range(net.L)
        for l in range(net.p)
    )
    if diagonal:
        h_doc = "diagonal"
    else:
        h_doc = [
            {"row": net.node_names[i], "col": l + 1, **_tf_json(net.H[i][l])}
            for i in range(net.L)
            for l in range(net.p)
            if net.H[i][l] is not None
        ]
    return {
        "format": 1,
        "nodes": list(net.node_names),
        "modules": modules,
        "noise": {"H": h_doc, "lambda": list(net.lam)},
        "excitations": [net.node_names[e - 1] for e in net.excitations],
    }


def load_network(path: Union[str, Path]) -> DynamicNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        return network_from_dict(json.load(fh))


def save_network(net: DynamicNetwork, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_dict(net), fh, indent=2)
        fh.write("\n")


def net_hash(net: DynamicNetwork) -> str:
    """Stable short digest of the canonical network description."""
    blob = json.dumps(network_to_dict(net), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
