"""Time-domain simulation of dynamic networks and dataset handling.

The network equations are turned into one vector difference equation by
clearing each row's denominators, the exogenous part (noise and excitation
filtered by polynomial maps) is computed with C-speed filters, and the
remaining feedback recursion runs in a compiled kernel.  Solving the
instantaneous coupling with ``(I - G(inf))^-1`` is exactly the sample-wise
resolution of the delay-free subgraph that well-posedness guarantees.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy.signal import lfilter

from .errors import DivergenceDetected, MissingSignal, NotWellPosed, SchemaError
from .graph import ImmersedNetwork
from .network import DynamicNetwork, net_hash, validate_network

__all__ = [
    "WhiteNoise",
    "Prbs",
    "ZeroSignal",
    "ExcitationSpec",
    "SignalDataset",
    "simulate",
    "simulate_immersed",
    "add_sensor_noise",
    "cross_correlation",
    "save_dataset",
    "load_dataset",
]

#: Simulation aborts when any node magnitude exceeds this guard.
DIVERGENCE_GUARD = 1e9

#: Default number of start-up samples discarded to suppress the transient.
DEFAULT_BURN_IN = 500


def _iterate_py(a0inv, astack, xi, w):
    T, L = xi.shape
    deg = astack.shape[0]
    for t in range(T):
        rhs = xi[t].copy()
        kmax = min(deg, t)
        for k in range(1, kmax + 1):
            rhs -= astack[k - 1] @ w[t - k]
        w[t] = a0inv @ rhs


try:  # pragma: no cover - exercised implicitly on import
    from numba import njit

    @njit(cache=True)
    def _iterate(a0inv, astack, xi, w):  # noqa: ANN001 - numba signature
        T = xi.shape[0]
        L = xi.shape[1]
        deg = astack.shape[0]
        rhs = np.empty(L)
        for t in range(T):
            for i in range(L):
                rhs[i] = xi[t, i]
            kmax = deg if deg < t else t
            for k in range(1, kmax + 1):
                for i in range(L):
                    acc = 0.0
                    for jj in range(L):
                        acc += astack[k - 1, i, jj] * w[t - k, jj]
                    rhs[i] -= acc
            for i in range(L):
                acc = 0.0
                for jj in range(L):
                    acc += a0inv[i, jj] * rhs[jj]
                w[t, i] = acc

except Exception:  # pragma: no cover - numba missing or broken
    _iterate = _iterate_py


# -- excitation signals --------------------------------------------------------


@dataclass(frozen=True)
class WhiteNoise:
    """Zero-mean white Gaussian excitation."""

    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def generate(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.sigma * rng.standard_normal(n)


@dataclass(frozen=True)
class Prbs:
    """Random binary excitation holding each level for `period` samples."""

    amplitude: float = 1.0
    period: int = 1

    def __post_init__(self):
        if self.amplitude <= 0 or self.period < 1:
            raise ValueError("amplitude must be positive and period >= 1")

    def generate(self, rng: np.random.Generator, n: int) -> np.ndarray:
        blocks = (n + self.period - 1) // self.period
        levels = 2.0 * rng.integers(0, 2, size=blocks) - 1.0
        return self.amplitude * np.repeat(levels, self.period)[:n]


@dataclass(frozen=True)
class ZeroSignal:
    """Excitation switched off."""

    def generate(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.zeros(n)


ExcitationKind = Union[WhiteNoise, Prbs, ZeroSignal]


@dataclass(frozen=True)
class ExcitationSpec:
    """Excitation shape per excited node; unlisted nodes use the default."""

    kinds: tuple[tuple[int, ExcitationKind], ...] = ()
    default: ExcitationKind = WhiteNoise(1.0)

    @staticmethod
    def of(kinds: Optional[Mapping] = None, default: ExcitationKind = WhiteNoise(1.0)) -> "ExcitationSpec":
        pairs = tuple(sorted((int(k), v) for k, v in (kinds or {}).items()))
        return ExcitationSpec(kinds=pairs, default=default)

    def kind_for(self, node: int) -> ExcitationKind:
        for n, kind in self.kinds:
            if n == node:
                return kind
        return self.default


# -- datasets -------------------------------------------------------------------


@dataclass
class SignalDataset:
    """Aligned records of node signals, excitations and (optionally) noise.

    All series share the same post-burn-in length N.  `e` is retained for
    oracle tests only; estimation methods never read it.
    """

    w: np.ndarray                        # L x N node signals
    r: np.ndarray                        # K x N external signals
    node_names: tuple[str, ...]
    excitation_nodes: tuple[int, ...]    # 1-based nodes owning the rows of r
    seed: Optional[int] = None
    burn_in: int = 0
    e: Optional[np.ndarray] = None       # p x N driving white noise
    w_tilde: Optional[np.ndarray] = None  # L x N sensor-noisy measurements
    s_variances: Optional[tuple[float, ...]] = None
    net_digest: Optional[str] = None

    @property
    def N(self) -> int:
        return self.w.shape[1]

    @property
    def L(self) -> int:
        return self.w.shape[0]

    def _node_pos(self, node) -> int:
        if isinstance(node, str):
            return self.node_names.index(node)
        idx = int(node)
        if not 1 <= idx <= self.L:
            raise MissingSignal(f"node index {idx} out of range 1..{self.L}")
        return idx - 1

    def node(self, node, measured: bool = False) -> np.ndarray:
        """Series of one node signal; `measured` selects the sensor channel."""
        pos = self._node_pos(node)
        if measured:
            if self.w_tilde is None:
                raise MissingSignal("dataset has no sensor-noise channel")
            return self.w_tilde[pos]
        return self.w[pos]

    def excitation(self, node) -> np.ndarray:
        idx = self._node_pos(node) + 1
        if idx not in self.excitation_nodes:
            raise MissingSignal(f"node {idx} carries no excitation")
        return self.r[self.excitation_nodes.index(idx)]


# -- simulation -----------------------------------------------------------------


def _poly_prod(polys: Sequence[np.ndarray]) -> np.ndarray:
    out = np.array([1.0])
    for p in polys:
        out = np.convolve(out, p)
    return out


def _row_polynomials(row_tfs: Sequence) -> tuple[np.ndarray, list[Optional[np.ndarray]]]:
    """Common denominator of a row and the numerator cofactor per entry."""
    dens = [np.asarray(tf.den) for tf in row_tfs if tf is not None]
    common = _poly_prod(dens)
    cofactors: list[Optional[np.ndarray]] = []
    pos = 0
    for tf in row_tfs:
        if tf is None:
            cofactors.append(None)
            continue
        others = dens[:pos] + dens[pos + 1:]
        cof = np.convolve(np.asarray(tf.num), _poly_prod(others))
        cofactors.append(cof)
        pos += 1
    return common, cofactors


def _feedback_recursion(a_polys, xi: np.ndarray) -> np.ndarray:
    """Run the vector difference equation ``A(q) w = xi`` from rest.

    `a_polys[j][l]` holds the polynomial applied to node l in row j (None
    for absent couplings); the diagonal carries the row's common denominator,
    off-diagonal entries the negated module numerators scaled to it.
    """
    L = len(a_polys)
    T = xi.shape[0]
    deg = max(len(p) for row in a_polys for p in row if p is not None) - 1
    astack = np.zeros((max(deg, 1), L, L))
    a0 = np.zeros((L, L))
    for j in range(L):
        for l in range(L):
            p = a_polys[j][l]
            if p is None:
                continue
            a0[j, l] = p[0]
            for k in range(1, len(p)):
                astack[k - 1, j, l] = p[k]
    try:
        a0inv = np.linalg.inv(a0)
    except np.linalg.LinAlgError as exc:
        raise NotWellPosed("instantaneous coupling is singular") from exc
    w = np.zeros((T, L))
    _iterate(a0inv, np.ascontiguousarray(astack), np.ascontiguousarray(xi), w)
    if not np.all(np.isfinite(w)) or np.max(np.abs(w)) > DIVERGENCE_GUARD:
        raise DivergenceDetected("node signal exceeded divergence guard")
    return w


def _assemble_rows(g_rows, extra_tfs_per_row):
    """Per-row common denominator, recursion polynomials and extra cofactors.

    Row j couples the modules `g_rows[j]` and the additional filters in
    `extra_tfs_per_row[j]` (noise shaping); all are brought onto one common
    denominator so the recursion has polynomial coefficients only.
    """
    L = len(g_rows)
    a_polys = []
    commons = []
    extra_cofs = []
    for j in range(L):
        row_tfs = list(g_rows[j]) + list(extra_tfs_per_row[j])
        common, cof = _row_polynomials(row_tfs)
        row = [None if cof[l] is None else -cof[l] for l in range(L)]
        row[j] = common
        a_polys.append(row)
        commons.append(common)
        extra_cofs.append(cof[L:])
    return a_polys, commons, extra_cofs


def _rng_streams(seed: int, count: int) -> list[np.random.Generator]:
    root = np.random.SeedSequence(int(seed))
    return [np.random.default_rng(s) for s in root.spawn(count)]


def simulate(
    net: DynamicNetwork,
    exc: Optional[ExcitationSpec] = None,
    N: int = 10000,
    seed: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
    include_noise: bool = True,
) -> SignalDataset:
    """Generate a dataset from the network equations.

    Noise and each excitation use independent, deterministic random streams
    spawned from `seed`, so runs are bit-reproducible and a run with
    excitations zeroed keeps the identical noise realization (and vice
    versa), which makes superposition checks exact.

    Raises
    ------
    NotWellPosed
        If validation reports an unresolvable algebraic loop.
    DivergenceDetected
        If any node magnitude exceeds 1e9 (unstable interconnection).
    """
    if N <= 0 or burn_in < 0:
        raise ValueError("need N > 0 and burn_in >= 0")
    report = validate_network(net)
    if not report.well_posed:
        raise NotWellPosed("; ".join(report.messages) or "algebraic loop")
    exc = exc or ExcitationSpec()
    L, p, K = net.L, net.p, net.K
    total = N + burn_in

    streams = _rng_streams(seed, 1 + K)
    e = np.zeros((p, total))
    if p and include_noise:
        e = streams[0].standard_normal((p, total)) * np.sqrt(np.asarray(net.lam))[:, None]
    r = np.zeros((K, total))
    for col, node in enumerate(net.excitations):
        r[col] = exc.kind_for(node).generate(streams[1 + col], total)

    # exogenous part xi_j = D_j(q) * [sum_l H_jl e_l + r_j], with D_j the
    # common denominator of row j of [G H]
    h_rows = [[net.H[j][ell] for ell in range(p)] for j in range(L)]
    a_polys, commons, h_cofs = _assemble_rows(net.G, h_rows)
    xi = np.zeros((total, L))
    for j in range(L):
        acc = np.zeros(total)
        for ell in range(p):
            c = h_cofs[j][ell]
            if c is not None:
                acc += lfilter(c, [1.0], e[ell])
        for col, node in enumerate(net.excitations):
            if node == j + 1:
                acc += lfilter(commons[j], [1.0], r[col])
        xi[:, j] = acc

    w = _feedback_recursion(a_polys, xi)

    return SignalDataset(
        w=np.ascontiguousarray(w[burn_in:].T),
        r=np.ascontiguousarray(r[:, burn_in:]),
        e=np.ascontiguousarray(e[:, burn_in:]) if include_noise and p else None,
        node_names=net.node_names,
        excitation_nodes=net.excitations,
        seed=seed,
        burn_in=burn_in,
        net_digest=net_hash(net),
    )


def simulate_immersed(imm: ImmersedNetwork, e: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Drive an immersed network with explicit noise/excitation realizations.

    `e` (p x T) and `r` (K x T) must be the realizations of the original
    network; the retained node signals are returned as a (kept x T) array.
    Used to verify that immersion leaves the retained signals invariant.
    """
    Lk = len(imm.kept)
    p = len(imm.lam)
    K = len(imm.source_excitations)
    e = np.atleast_2d(np.asarray(e, dtype=float)) if p else np.zeros((0, r.shape[-1]))
    r = np.atleast_2d(np.asarray(r, dtype=float)) if K else np.zeros((0, e.shape[-1]))
    T = e.shape[1] if p else r.shape[1]

    raw = np.zeros((T, Lk))
    for a in range(Lk):
        acc = np.zeros(T)
        for ell in range(p):
            tf = imm.disturbance_map[a][ell]
            if tf is not None:
                acc += lfilter(tf.num, tf.den, e[ell])
        for m in range(K):
            tf = imm.excitation_map[a][m]
            if tf is not None:
                acc += lfilter(tf.num, tf.den, r[m])
        raw[:, a] = acc

    a_polys, commons, _ = _assemble_rows(imm.G, [[] for _ in range(Lk)])
    xi = np.zeros((T, Lk))
    for a in range(Lk):
        xi[:, a] = lfilter(commons[a], [1.0], raw[:, a])
    return _feedback_recursion(a_polys, xi).T


def add_sensor_noise(data: SignalDataset, variances, seed: int = 0) -> SignalDataset:
    """Attach sensor-noisy measurements w + s to a dataset.

    The sensor streams are white Gaussian, mutually independent across nodes
    and drawn from a fresh generator, hence independent of the process noise.
    """
    if np.isscalar(variances):
        variances = [float(variances)] * data.L
    var = np.asarray([float(v) for v in variances])
    if var.shape != (data.L,) or np.any(var < 0):
        raise ValueError("need one nonnegative variance per node")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[int(seed), 0x5E4503]))
    s = rng.standard_normal((data.L, data.N)) * np.sqrt(var)[:, None]
    return replace(data, w_tilde=data.w + s, s_variances=tuple(var))


def cross_correlation(x: np.ndarray, y: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased sample estimate of E[x(t) y(t - tau)] for tau = 0..max_lag."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d series of equal length")
    n = x.size
    if not 0 <= max_lag < n / 4:
        raise ValueError("need 0 <= max_lag < N/4")
    return np.array([np.dot(x[tau:], y[: n - tau]) / n for tau in range(max_lag + 1)])


def cross_correlation_signed(x: np.ndarray, y: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Like cross_correlation, over the signed lag range lo..hi inclusive."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    out = np.empty(hi - lo + 1)
    for pos, tau in enumerate(range(lo, hi + 1)):
        if tau >= 0:
            out[pos] = np.dot(x[tau:], y[: n - tau]) / n
        else:
            s = -tau
            out[pos] = np.dot(x[: n - s], y[s:]) / n
    return out


# -- dataset files ---------------------------------------------------------------

_META_KEYS = {"format", "seed", "burn_in", "net_hash", "nodes", "excitation_nodes",
              "s_variances"}


def _sidecar_path(csv_path: Union[str, Path]) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_suffix(csv_path.suffix + ".meta.json")


def save_dataset(data: SignalDataset, csv_path: Union[str, Path]) -> None:
    """Write `t, w_1..w_L, r_1..r_K [, wt_1..wt_L]` plus a JSON sidecar.

    Both files are written atomically (temp file then rename).
    """
    csv_path = Path(csv_path)
    header = ["t"]
    header += [f"w_{k + 1}" for k in range(data.L)]
    header += [f"r_{k + 1}" for k in range(data.r.shape[0])]
    cols = [np.arange(data.N), *data.w, *data.r]
    if data.w_tilde is not None:
        header += [f"wt_{k + 1}" for k in range(data.L)]
        cols += list(data.w_tilde)
    table = np.column_stack(cols)
    tmp = csv_path.with_suffix(csv_path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in table:
            writer.writerow([f"{v:.17g}" for v in row])
    os.replace(tmp, csv_path)
    meta = {
        "format": 1,
        "seed": data.seed,
        "burn_in": data.burn_in,
        "net_hash": data.net_digest,
        "nodes": list(data.node_names),
        "excitation_nodes": list(data.excitation_nodes),
    }
    if data.s_variances is not None:
        meta["s_variances"] = list(data.s_variances)
    sidecar = _sidecar_path(csv_path)
    tmp = sidecar.with_suffix(sidecar.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, sidecar)


def load_dataset(csv_path: Union[str, Path]) -> SignalDataset:
    """Read a dataset CSV and its sidecar back into memory (without `e`)."""
    csv_path = Path(csv_path)
    with open(_sidecar_path(csv_path), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    unknown = set(meta) - _META_KEYS
    if unknown:
        raise SchemaError(f"unknown key(s) {sorted(unknown)} in dataset sidecar")
    table = np.genfromtxt(csv_path, delimiter=",", names=True)
    names = [str(n) for n in meta["nodes"]]
    L = len(names)
    exc_nodes = tuple(int(x) for x in meta["excitation_nodes"])
    w = np.vstack([table[f"w_{k + 1}"] for k in range(L)]) if L else np.zeros((0, 0))
    if exc_nodes:
        r = np.vstack([table[f"r_{k + 1}"] for k in range(len(exc_nodes))])
    else:
        r = np.zeros((0, w.shape[1]))
    w_tilde = None
    if f"wt_1" in (table.dtype.names or ()):
        w_tilde = np.vstack([table[f"wt_{k + 1}"] for k in range(L)])
    s_var = meta.get("s_variances")
    return SignalDataset(
        w=w,
        r=r,
        node_names=tuple(names),
        excitation_nodes=exc_nodes,
        seed=meta.get("seed"),
        burn_in=int(meta.get("burn_in", 0)),
        w_tilde=w_tilde,
        s_variances=tuple(s_var) if s_var is not None else None,
        net_digest=meta.get("net_hash"),
    )
