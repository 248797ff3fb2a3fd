"""Network identifiability checks for a tagged model set.

A model set tags every entry of the module matrix, the noise-shaping matrix
and the excitation matrix as ``zero``, ``known`` or ``param``, together with
one numeric reference model consistent with the tags.  Two sufficient
conditions are evaluated per row: a count condition (no more parametrized
entries than external signals) and a rank condition on a submatrix of the
closed-loop transfer matrix, evaluated numerically on the reference model at
random unit-circle frequencies.

The conditions are sufficient, not necessary: a rank failure alone yields the
verdict ``inconclusive``.  A count failure is escalated to
``not_identifiable`` only when the checker also constructs two numerically
distinct models with matching closed-loop transfer - a concrete
indistinguishability certificate built by mixing the over-parametrized row
with another row.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import IllPosedReference, PoleAtPoint, SchemaError, SingularAtPoint
from .network import DynamicNetwork, network_transfer, validate_network
from .transfer import ONE, TransferFunction, add, mul, sub

__all__ = [
    "ModelSetSpec",
    "RowCheck",
    "Witness",
    "IdentifiabilityReport",
    "count_condition",
    "rank_condition",
    "check_identifiability",
    "model_set_from_dict",
    "load_model_set",
    "report_to_dict",
]

ZERO_TAG, KNOWN_TAG, PARAM_TAG = "zero", "known", "param"
_TAGS = (ZERO_TAG, KNOWN_TAG, PARAM_TAG)

#: Relative singular-value threshold of the rank test.
RANK_RTOL = 1e-8

_GENERICITY_NOTE = (
    "verdicts are computed on one numeric reference model at randomly drawn "
    "frequencies; a non-generic reference can understate the rank"
)


def _tag_matrix(tags, n_rows: int, n_cols: int, what: str):
    tags = tuple(tuple(str(t) for t in row) for row in tags)
    if len(tags) != n_rows or any(len(row) != n_cols for row in tags):
        raise ValueError(f"{what} tags must be {n_rows} x {n_cols}")
    for row in tags:
        for t in row:
            if t not in _TAGS:
                raise ValueError(f"unknown tag {t!r} in {what}")
    return tags


@dataclass(frozen=True)
class ModelSetSpec:
    """Tag pattern over (G, H, R) plus a consistent reference network."""

    reference: DynamicNetwork
    g_tags: tuple
    h_tags: tuple
    r_tags: tuple

    def __post_init__(self):
        net = self.reference
        L, p, K = net.L, net.p, net.K
        g = _tag_matrix(self.g_tags, L, L, "G")
        h = _tag_matrix(self.h_tags, L, p, "H")
        r = _tag_matrix(self.r_tags, L, K, "R")
        object.__setattr__(self, "g_tags", g)
        object.__setattr__(self, "h_tags", h)
        object.__setattr__(self, "r_tags", r)
        R = net.R
        for i in range(L):
            if g[i][i] != ZERO_TAG:
                raise ValueError("G diagonal must be tagged zero")
            for l in range(L):
                present = net.G[i][l] is not None
                if g[i][l] == ZERO_TAG and present:
                    raise ValueError(f"G[{i + 1}][{l + 1}] tagged zero but reference is nonzero")
                if g[i][l] == KNOWN_TAG and not present:
                    raise ValueError(f"G[{i + 1}][{l + 1}] tagged known but reference is zero")
            for l in range(p):
                present = net.H[i][l] is not None
                if h[i][l] == ZERO_TAG and present:
                    raise ValueError(f"H[{i + 1}][{l + 1}] tagged zero but reference is nonzero")
            for m in range(K):
                present = R[i, m] != 0
                if r[i][m] == ZERO_TAG and present:
                    raise ValueError(f"R[{i + 1}][{m + 1}] tagged zero but reference is nonzero")

    @property
    def budget(self) -> int:
        return self.reference.K + self.reference.p

    def u_tags(self, i: int) -> tuple:
        """Row i of the stacked [H R] tag matrix."""
        return self.h_tags[i] + self.r_tags[i]


@dataclass(frozen=True)
class RowCheck:
    row: int
    parametrized_count: int
    budget: int
    count_ok: bool
    rank_required: int
    rank_found: int
    rank_ok: bool


@dataclass(frozen=True)
class Witness:
    """Two indistinguishable models certify a loss of identifiability."""

    row: int
    partner: int
    alpha: float
    transfer_difference: float
    model_difference: float


@dataclass(frozen=True)
class IdentifiabilityReport:
    rows: tuple[RowCheck, ...]
    verdict: str  # identifiable | not_identifiable | inconclusive
    witness: Optional[Witness]
    notes: tuple[str, ...]


def count_condition(spec: ModelSetSpec) -> list[tuple[int, int, bool]]:
    """Per row: (parametrized entry count, budget K+p, within budget)."""
    out = []
    for i in range(spec.reference.L):
        row = spec.g_tags[i] + spec.h_tags[i] + spec.r_tags[i]
        n = sum(1 for t in row if t == PARAM_TAG)
        out.append((n, spec.budget, n <= spec.budget))
    return out


def _u_diagonal_shortcut(spec: ModelSetSpec) -> bool:
    """True when [H R] is structurally diagonal with guaranteed-nonzero
    entries for every parameter value, which settles the rank condition."""
    net = spec.reference
    L, p = net.L, net.p
    R = net.R
    used_cols = set()
    for i in range(L):
        nonzero = [k for k, t in enumerate(spec.u_tags(i)) if t != ZERO_TAG]
        if len(nonzero) != 1:
            return False
        k = nonzero[0]
        if k in used_cols:
            return False
        used_cols.add(k)
        tag = spec.u_tags(i)[k]
        if k < p:
            if tag == KNOWN_TAG and net.H[i][k] is None:
                return False
            # a parametrized H entry is guaranteed nonzero only on the monic
            # diagonal, where its feedthrough is pinned to one
            if tag == PARAM_TAG and k != i:
                return False
        else:
            if tag == PARAM_TAG:
                return False
            if R[i, k - p] == 0:
                return False
    return True


def _draw_frequencies(net: DynamicNetwork, count: int, seed: int) -> list[complex]:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[int(seed), 0x1D]))
    points: list[complex] = []
    guard = 0
    while len(points) < count:
        guard += 1
        if guard > 100 * count:
            raise IllPosedReference("could not draw pole-free evaluation frequencies")
        z = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi))
        try:
            network_transfer(net, z)
        except (SingularAtPoint, PoleAtPoint):
            continue
        points.append(complex(z))
    return points


def rank_condition(spec: ModelSetSpec, seed: int = 0):
    """Per row: (required rank, found rank, rank_ok, note).

    For each row i the submatrix of the closed-loop transfer T keeps the rows
    j with parametrized G entries and the columns of [H R] that are *not*
    parametrized; it must have full row rank at every tested frequency.  Rows
    without parametrized G entries pass vacuously.
    """
    net = spec.reference
    if not validate_network(net).well_posed:
        raise IllPosedReference("reference model is not well posed")
    L = net.L
    if _u_diagonal_shortcut(spec):
        out = []
        for i in range(L):
            need = sum(1 for t in spec.g_tags[i] if t == PARAM_TAG)
            out.append((need, need, True, "diagonal [H R] shortcut"))
        return out

    n_f = 2 * L + 4
    freqs = _draw_frequencies(net, n_f, seed)
    T_vals = [network_transfer(net, z) for z in freqs]
    out = []
    for i in range(L):
        rows = [j for j in range(L) if spec.g_tags[i][j] == PARAM_TAG]
        cols = [k for k, t in enumerate(spec.u_tags(i)) if t != PARAM_TAG]
        need = len(rows)
        if need == 0:
            out.append((0, 0, True, "no parametrized modules in this row"))
            continue
        found = need
        for T in T_vals:
            sub_T = T[np.ix_(rows, cols)]
            if sub_T.size == 0:
                found = 0
                break
            s = np.linalg.svd(sub_T, compute_uv=False)
            rank = int(np.sum(s > s[0] * RANK_RTOL)) if s[0] > 0 else 0
            found = min(found, rank)
        out.append((need, found, found >= need, ""))
    return out


# -- indistinguishability witness ------------------------------------------------


def _entry(matrix, i: int, k: int) -> Optional[TransferFunction]:
    return matrix[i][k]


def _witness_admissible(spec: ModelSetSpec, i: int, j: int) -> bool:
    """Can row j be mixed into row i without leaving the tag pattern?"""
    net = spec.reference
    L, p = net.L, net.p
    R = net.R
    g_ji = net.G[j][i]
    for k in range(L):
        if k == i:
            continue
        affected = (k == j) or (net.G[j][k] is not None)
        if g_ji is not None and net.G[i][k] is not None:
            affected = True
        if affected and spec.g_tags[i][k] != PARAM_TAG:
            return False
    for ell in range(p):
        affected = net.H[j][ell] is not None
        if g_ji is not None and net.H[i][ell] is not None:
            affected = True
        if affected and spec.h_tags[i][ell] != PARAM_TAG:
            return False
    for m in range(net.K):
        affected = R[j, m] != 0
        if g_ji is not None and R[i, m] != 0:
            affected = True
        if affected and spec.r_tags[i][m] != PARAM_TAG:
            return False
    return True


def _mixed_model(net: DynamicNetwork, i: int, j: int, alpha: float):
    """Second model from premultiplying rows by P = I + alpha q^-1 E_ij,
    with the diagonal corrected so the mixed G keeps a zero diagonal."""
    delta = TransferFunction((0.0, alpha))
    g_ji = net.G[j][i]
    p_ii_minus_1 = mul(delta, g_ji) if g_ji is not None else None

    def _z(tf):
        return tf if tf is not None else TransferFunction((0.0,))

    L, p, K = net.L, net.p, net.K
    G2 = [[net.G[a][b] for b in range(L)] for a in range(L)]
    H2 = [[net.H[a][b] for b in range(p)] for a in range(L)]
    R_tf = [[ONE if net.R[a, m] else None for m in range(K)] for a in range(L)]
    for k in range(L):
        if k == i:
            continue
        img_jk = ONE if k == j else (-net.G[j][k] if net.G[j][k] is not None else None)
        change = mul(delta, img_jk) if img_jk is not None else None
        if p_ii_minus_1 is not None and net.G[i][k] is not None:
            extra = mul(p_ii_minus_1, -net.G[i][k])
            change = extra if change is None else add(change, extra)
        if change is not None:
            G2[i][k] = sub(_z(G2[i][k]), change)
    for ell in range(p):
        change = mul(delta, net.H[j][ell]) if net.H[j][ell] is not None else None
        if p_ii_minus_1 is not None and net.H[i][ell] is not None:
            extra = mul(p_ii_minus_1, net.H[i][ell])
            change = extra if change is None else add(change, extra)
        if change is not None:
            H2[i][ell] = add(_z(H2[i][ell]), change)
    for m in range(K):
        change = mul(delta, ONE) if net.R[j, m] else None
        if p_ii_minus_1 is not None and net.R[i, m]:
            extra = mul(p_ii_minus_1, ONE)
            change = extra if change is None else add(change, extra)
        if change is not None:
            R_tf[i][m] = add(_z(R_tf[i][m]), change)
    return G2, H2, R_tf


def _eval_matrix(matrix, z: complex) -> np.ndarray:
    out = np.zeros((len(matrix), len(matrix[0]) if matrix else 0), dtype=complex)
    for a, row in enumerate(matrix):
        for b, tf in enumerate(row):
            if tf is not None:
                out[a, b] = tf(z)
    return out


def _transfer_raw(G2, H2, R2, z: complex) -> np.ndarray:
    L = len(G2)
    A = np.eye(L, dtype=complex) - _eval_matrix(G2, z)
    rhs = np.hstack([_eval_matrix(H2, z), _eval_matrix(R2, z)])
    return np.linalg.solve(A, rhs)


def _find_witness(spec: ModelSetSpec, failing_rows: Sequence[int], seed: int) -> Optional[Witness]:
    net = spec.reference
    freqs = _draw_frequencies(net, 16, seed + 1)
    for i in failing_rows:
        for j in range(net.L):
            if j == i or not _witness_admissible(spec, i, j):
                continue
            for alpha in (0.25, 0.5, 0.1):
                G2, H2, R2 = _mixed_model(net, i, j, alpha)
                t_diff = 0.0
                m_diff = 0.0
                ok = True
                for z in freqs:
                    try:
                        T1 = network_transfer(net, z)
                        T2 = _transfer_raw(G2, H2, R2, z)
                    except (SingularAtPoint, PoleAtPoint, np.linalg.LinAlgError):
                        ok = False
                        break
                    t_diff = max(t_diff, float(np.max(np.abs(T1 - T2))))
                    G1 = net.eval_G(z)
                    H1 = net.eval_H(z)
                    R1 = net.R.astype(complex)
                    m_diff = max(m_diff, float(np.max(np.abs(G1 - _eval_matrix(G2, z)))))
                    if H1.size:
                        m_diff = max(m_diff, float(np.max(np.abs(H1 - _eval_matrix(H2, z)))))
                    if R1.size:
                        m_diff = max(m_diff, float(np.max(np.abs(R1 - _eval_matrix(R2, z)))))
                if ok and t_diff < 1e-8 and m_diff > 1e-3:
                    return Witness(row=i + 1, partner=j + 1, alpha=alpha,
                                   transfer_difference=t_diff, model_difference=m_diff)
    return None


def check_identifiability(spec: ModelSetSpec, seed: int = 0) -> IdentifiabilityReport:
    """Combine both conditions into a per-row report and an overall verdict."""
    counts = count_condition(spec)
    ranks = rank_condition(spec, seed=seed)
    notes = [_GENERICITY_NOTE]
    rows = []
    for i, ((n, budget, count_ok), (need, found, rank_ok, note)) in enumerate(zip(counts, ranks)):
        if note:
            notes.append(f"row {i + 1}: {note}")
        rows.append(RowCheck(row=i + 1, parametrized_count=n, budget=budget,
                             count_ok=count_ok, rank_required=need,
                             rank_found=found, rank_ok=rank_ok))
    witness = None
    if all(r.count_ok for r in rows) and all(r.rank_ok for r in rows):
        verdict = "identifiable"
    else:
        failing = [r.row - 1 for r in rows if not r.count_ok]
        if failing:
            witness = _find_witness(spec, failing, seed)
            if witness is not None:
                verdict = "not_identifiable"
            else:
                verdict = "inconclusive"
                notes.append("count condition fails but no indistinguishability "
                             "witness was constructed")
        else:
            verdict = "inconclusive"
            notes.append("rank condition fails; the tested conditions are only "
                         "sufficient, so no negative verdict is asserted")
    return IdentifiabilityReport(rows=tuple(rows), verdict=verdict,
                                 witness=witness, notes=tuple(notes))


# -- JSON input / output ----------------------------------------------------------

_TOP_KEYS = {"format", "nodes", "modules", "noise", "excitations"}
_MODULE_KEYS = {"from", "to", "num", "den", "param"}
_NOISE_KEYS = {"H", "lambda", "param"}
_H_ENTRY_KEYS = {"row", "col", "num", "den", "param"}
_EXC_KEYS = {"node", "param"}


def _check_keys(obj: Mapping, allowed: set, where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise SchemaError(f"unknown key(s) {sorted(unknown)} in {where}")


def model_set_from_dict(doc: Mapping) -> ModelSetSpec:
    """Parse a model-set document: the network schema plus `param` tags."""
    if not isinstance(doc, Mapping):
        raise SchemaError("model set document must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "model set document")
    if "nodes" not in doc or "modules" not in doc:
        raise SchemaError("model set document requires 'nodes' and 'modules'")
    names = [str(n) for n in doc["nodes"]]
    L = len(names)

    def idx(ref, where):
        if isinstance(ref, str):
            if ref not in names:
                raise SchemaError(f"unknown node {ref!r} in {where}")
            return names.index(ref)
        i = int(ref)
        if not 1 <= i <= L:
            raise SchemaError(f"node index {i} out of range in {where}")
        return i - 1

    G = [[None] * L for _ in range(L)]
    g_tags = [[ZERO_TAG] * L for _ in range(L)]
    for m in doc["modules"]:
        _check_keys(m, _MODULE_KEYS, "module entry")
        j = idx(m["to"], "module 'to'")
        l = idx(m["from"], "module 'from'")
        G[j][l] = TransferFunction(tuple(m["num"]), tuple(m["den"]))
        g_tags[j][l] = PARAM_TAG if m.get("param") else KNOWN_TAG

    noise = doc.get("noise", {"H": "diagonal", "lambda": []})
    _check_keys(noise, _NOISE_KEYS, "noise section")
    lam = tuple(float(v) for v in noise.get("lambda", []))
    p = len(lam)
    H = [[None] * p for _ in range(L)]
    h_tags = [[ZERO_TAG] * p for _ in range(L)]
    h_spec = noise.get("H", "diagonal")
    if h_spec == "diagonal":
        tag = PARAM_TAG if noise.get("param") else KNOWN_TAG
        for i in range(p):
            H[i][i] = ONE
            h_tags[i][i] = tag
    else:
        for entry in h_spec:
            _check_keys(entry, _H_ENTRY_KEYS, "noise H entry")
            i = idx(entry["row"], "noise H row")
            col = int(entry["col"])
            if not 1 <= col <= p:
                raise SchemaError(f"noise channel {col} out of range 1..{p}")
            H[i][col - 1] = TransferFunction(tuple(entry["num"]), tuple(entry["den"]))
            h_tags[i][col - 1] = PARAM_TAG if entry.get("param") else KNOWN_TAG

    excitations = []
    exc_param = []
    for e in doc.get("excitations", []):
        if isinstance(e, Mapping):
            _check_keys(e, _EXC_KEYS, "excitation entry")
            excitations.append(idx(e["node"], "excitations") + 1)
            exc_param.append(bool(e.get("param")))
        else:
            excitations.append(idx(e, "excitations") + 1)
            exc_param.append(False)
    order = np.argsort(excitations)
    excitations = [excitations[o] for o in order]
    exc_param = [exc_param[o] for o in order]
    K = len(excitations)
    r_tags = [[ZERO_TAG] * K for _ in range(L)]
    for col, (node, is_param) in enumerate(zip(excitations, exc_param)):
        r_tags[node - 1][col] = PARAM_TAG if is_param else KNOWN_TAG

    net = DynamicNetwork(node_names=tuple(names), G=G, H=H, lam=lam,
                         excitations=tuple(excitations))
    return ModelSetSpec(reference=net, g_tags=g_tags, h_tags=h_tags, r_tags=r_tags)


def load_model_set(path: Union[str, Path]) -> ModelSetSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return model_set_from_dict(json.load(fh))


def report_to_dict(report: IdentifiabilityReport) -> dict:
    doc = {
        "format": 1,
        "verdict": report.verdict,
        "rows": [
            {
                "row": r.row,
                "parametrized_count": r.parametrized_count,
                "budget": r.budget,
                "count_ok": r.count_ok,
                "rank_required": r.rank_required,
                "rank_found": r.rank_found,
                "rank_ok": r.rank_ok,
            }
            for r in report.rows
        ],
        "notes": list(report.notes),
    }
    if report.witness is not None:
        w = report.witness
        doc["witness"] = {
            "row": w.row,
            "partner": w.partner,
            "alpha": w.alpha,
            "transfer_difference": w.transfer_difference,
            "model_difference": w.model_difference,
        }
    return doc
