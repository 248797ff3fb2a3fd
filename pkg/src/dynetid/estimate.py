"""Single-module identification engines.

Three estimators share one prediction-error core:

* ``direct_miso`` regresses the output node on measured predictor inputs and
  minimizes the filtered prediction error; consistency requires the noise
  model to be rich enough.
* ``two_stage`` first projects the predictor inputs onto selected external
  excitations, then runs the same machinery on the projected inputs, which
  removes the noise-model requirement.
* ``iv_correlation`` replaces time samples by sample cross-correlations with
  instrumental variables, which removes sensor-noise bias.

Model structures: ``arx`` (shared denominator, closed form), ``fir`` (numerator
only) and ``boxjenkins`` (per-input denominators, free noise model); the two
latter fall back to damped Gauss-Newton when they are nonlinear in the
parameters.  All filtering starts from zero initial conditions and the first
``4 * max(order)`` residual samples are excluded from every criterion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import (
    DelayConditionViolated,
    ExternalPathViolation,
    MissingSignal,
    RankDeficientCorrelationBlock,
    RankDeficientRegressor,
    SchemaError,
)
from .graph import ExcitationSource, has_path
from .network import DynamicNetwork
from .sim import SignalDataset, cross_correlation_signed
from .transfer import TransferFunction

__all__ = [
    "InputOrders",
    "NoiseOrders",
    "MisoModelSpec",
    "IvSpec",
    "EstimationResult",
    "residual_target",
    "direct_miso",
    "project_signals",
    "two_stage",
    "iv_correlation",
    "module_coefficient_error",
    "EstimationPlan",
    "plan_from_dict",
    "run_plan",
]

#: Informativity proxy: regressors above this condition number are refused.
COND_LIMIT = 1e10

_GN_MAX_ITER = 200
_GN_TOL = 1e-9
_MULTISTART = 3


@dataclass(frozen=True)
class InputOrders:
    """Orders of one estimated module: numerator length, delay, denominator."""

    nb: int
    nk: int = 1
    nf: int = 0

    def __post_init__(self):
        if self.nb < 1 or self.nk < 0 or self.nf < 0:
            raise ValueError("need nb >= 1, nk >= 0, nf >= 0")


@dataclass(frozen=True)
class NoiseOrders:
    """Orders of a freely parametrized noise model C(q)/D(q)."""

    nc: int
    nd: int

    def __post_init__(self):
        if self.nc < 0 or self.nd < 0 or (self.nc == 0 and self.nd == 0):
            raise ValueError("noise orders must be nonnegative and not both zero")


@dataclass(frozen=True)
class MisoModelSpec:
    """Parametrization of one multi-input single-output predictor model.

    Parameters
    ----------
    j : node
        Output node (1-based index or name, resolved against the dataset).
    inputs : sequence of node
        Predictor input nodes, ordered; must not contain j.
    structure : {"arx", "fir", "boxjenkins"}
        ``arx`` shares one denominator between modules and noise model
        (closed-form least squares); ``fir`` estimates numerators only;
        ``boxjenkins`` gives each module its own denominator.
    orders : InputOrders or mapping node -> InputOrders
        Orders per input (one value applies to every input).
    na : int
        Shared denominator order (``arx`` only).
    noise : NoiseOrders or None
        Free noise-model orders; None fixes the noise model to identity
        (ignored by ``arx``, whose noise model is 1/A by construction).
    known_modules : mapping node -> TransferFunction
        Modules into j that are known a priori and subtracted from the output.
    """

    j: int | str
    inputs: tuple
    structure: str = "boxjenkins"
    orders: InputOrders | Mapping = InputOrders(nb=2, nk=1)
    na: int = 0
    noise: Optional[NoiseOrders] = None
    known_modules: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not self.inputs:
            raise ValueError("inputs must be nonempty")
        if self.structure not in ("arx", "fir", "boxjenkins"):
            raise ValueError(f"unknown structure {self.structure!r}")
        if self.structure == "arx" and self.na < 0:
            raise ValueError("na must be nonnegative")
        object.__setattr__(self, "inputs", tuple(self.inputs))

    def orders_for(self, node) -> InputOrders:
        if isinstance(self.orders, InputOrders):
            return self.orders
        return self.orders[node]


@dataclass(frozen=True)
class IvSpec:
    """Instrument choice for the correlation-based estimator.

    `instruments` are internal nodes whose measured signals serve as
    instruments; they must be disjoint from the output and the predictor
    inputs.  `externals` adds excitation signals as instruments.  `n_z` is
    the maximum correlation lag of the criterion (default: 4x the parameter
    count, never below the parameter count).
    """

    instruments: tuple = ()
    externals: tuple = ()
    n_z: Optional[int] = None

    def __post_init__(self):
        if not self.instruments and not self.externals:
            raise ValueError("need at least one instrument")
        object.__setattr__(self, "instruments", tuple(self.instruments))
        object.__setattr__(self, "externals", tuple(self.externals))


@dataclass
class EstimationResult:
    """Estimated modules plus optimizer diagnostics."""

    j: int
    method: str
    modules: dict[int, TransferFunction]
    noise_model: TransferFunction
    theta: np.ndarray
    residual_variance: float
    regressor_condition_number: float
    iterations: int
    converged: bool
    messages: tuple[str, ...] = ()


def module_coefficient_error(estimate: TransferFunction, truth: TransferFunction) -> float:
    """Max-abs difference of numerator and denominator coefficient vectors."""
    err = 0.0
    for a, b in ((estimate.num, truth.num), (estimate.den, truth.den)):
        n = max(len(a), len(b))
        pa = np.zeros(n)
        pb = np.zeros(n)
        pa[: len(a)] = a
        pb[: len(b)] = b
        err = max(err, float(np.max(np.abs(pa - pb))))
    return err


# -- shared machinery ----------------------------------------------------------


@dataclass
class _Block:
    """One least-squares block: a target series, its input series, and the
    first index that enters the criterion."""

    y: np.ndarray
    X: list[np.ndarray]
    start: int


@dataclass(frozen=True)
class _Orders:
    structure: str                       # 'arx' or 'bj'
    na: int
    per_input: tuple[InputOrders, ...]
    nc: int
    nd: int

    @property
    def n_params(self) -> int:
        n = self.na + self.nc + self.nd
        for o in self.per_input:
            n += o.nb + o.nf
        return n

    @property
    def max_lag(self) -> int:
        lags = [1, self.na, self.nc, self.nd]
        lags += [o.nk + o.nb - 1 for o in self.per_input]
        lags += [o.nf for o in self.per_input]
        return max(lags)

    @property
    def is_linear(self) -> bool:
        if self.structure == "arx":
            return True
        return all(o.nf == 0 for o in self.per_input) and self.nc == 0 and self.nd == 0


def _canonical_orders(spec: MisoModelSpec, input_nodes: Sequence) -> _Orders:
    per = tuple(spec.orders_for(k) for k in input_nodes)
    if spec.structure == "arx":
        return _Orders("arx", spec.na, per, 0, 0)
    if spec.structure == "fir":
        per = tuple(InputOrders(o.nb, o.nk, 0) for o in per)
    nc = spec.noise.nc if spec.noise else 0
    nd = spec.noise.nd if spec.noise else 0
    return _Orders("bj", 0, per, nc, nd)


def _shift(x: np.ndarray, s: int) -> np.ndarray:
    if s == 0:
        return x
    out = np.zeros_like(x)
    out[s:] = x[:-s]
    return out


def _split_theta(theta: np.ndarray, orders: _Orders):
    pos = 0
    a = theta[pos: pos + orders.na]
    pos += orders.na
    b = []
    for o in orders.per_input:
        b.append(theta[pos: pos + o.nb])
        pos += o.nb
    f = []
    for o in orders.per_input:
        f.append(theta[pos: pos + o.nf])
        pos += o.nf
    c = theta[pos: pos + orders.nc]
    pos += orders.nc
    d = theta[pos: pos + orders.nd]
    return a, b, f, c, d


def _residual_one(theta: np.ndarray, block: _Block, orders: _Orders):
    """Prediction error and the intermediate series the Jacobian reuses."""
    a, b, f, c, d = _split_theta(theta, orders)
    if orders.structure == "arx":
        afull = np.concatenate(([1.0], a))
        eps = lfilter(afull, [1.0], block.y)
        for xk, bk, o in zip(block.X, b, orders.per_input):
            bfull = np.concatenate((np.zeros(o.nk), bk))
            eps = eps - lfilter(bfull, [1.0], xk)
        return eps, None
    vhat = block.y.copy()
    mod_outs = []
    for xk, bk, fk, o in zip(block.X, b, f, orders.per_input):
        bfull = np.concatenate((np.zeros(o.nk), bk))
        ffull = np.concatenate(([1.0], fk))
        out = lfilter(bfull, ffull, xk)
        mod_outs.append(out)
        vhat = vhat - out
    cfull = np.concatenate(([1.0], c))
    dfull = np.concatenate(([1.0], d))
    eps = lfilter(dfull, cfull, vhat)
    return eps, (vhat, mod_outs, cfull, dfull)


def _jacobian_one(theta: np.ndarray, block: _Block, orders: _Orders) -> np.ndarray:
    """Columns d eps / d theta, in the packing order of theta."""
    n = block.y.size
    cols = []
    a, b, f, c, d = _split_theta(theta, orders)
    if orders.structure == "arx":
        for m in range(1, orders.na + 1):
            cols.append(_shift(block.y, m))
        for xk, o in zip(block.X, orders.per_input):
            for m in range(o.nb):
                cols.append(-_shift(xk, o.nk + m))
        return np.column_stack(cols) if cols else np.zeros((n, 0))

    eps, aux = _residual_one(theta, block, orders)
    vhat, mod_outs, cfull, dfull = aux
    b_cols, f_cols = [], []
    for xk, fk, out, o in zip(block.X, f, mod_outs, orders.per_input):
        ffull = np.concatenate(([1.0], fk))
        base_b = lfilter(dfull, cfull, lfilter([1.0], ffull, xk))
        for m in range(o.nb):
            b_cols.append(-_shift(base_b, o.nk + m))
        if o.nf:
            base_f = lfilter(dfull, cfull, lfilter([1.0], ffull, out))
            for m in range(1, o.nf + 1):
                f_cols.append(_shift(base_f, m))
    cols = b_cols + f_cols
    if orders.nc:
        base_c = lfilter([1.0], cfull, eps)
        for m in range(1, orders.nc + 1):
            cols.append(-_shift(base_c, m))
    if orders.nd:
        base_d = lfilter([1.0], cfull, vhat)
        for m in range(1, orders.nd + 1):
            cols.append(_shift(base_d, m))
    return np.column_stack(cols) if cols else np.zeros((n, 0))


def _stack(theta, blocks, orders):
    """Residual vector and Jacobian over the criterion rows of all blocks."""
    rs, js = [], []
    for blk in blocks:
        start = max(blk.start, orders.max_lag)
        eps, _ = _residual_one(theta, blk, orders)
        rs.append(eps[start:])
        js.append(_jacobian_one(theta, blk, orders)[start:])
    return np.concatenate(rs), np.vstack(js)


def _sse(theta, blocks, orders) -> float:
    total = 0.0
    for blk in blocks:
        start = max(blk.start, orders.max_lag)
        eps, _ = _residual_one(theta, blk, orders)
        total += float(np.dot(eps[start:], eps[start:]))
    return total


def _cond(mat: np.ndarray) -> float:
    if mat.size == 0:
        return np.inf
    s = np.linalg.svd(mat, compute_uv=False)
    if s[-1] <= 0:
        return np.inf
    return float(s[0] / s[-1])


def _solve_linear(blocks, orders: _Orders, rank_error) -> tuple[np.ndarray, float]:
    """Closed-form least squares for parametrizations linear in theta."""
    theta0 = np.zeros(orders.n_params)
    rows_y, rows_j = [], []
    for blk in blocks:
        start = max(blk.start, orders.max_lag)
        eps0, _ = _residual_one(theta0, blk, orders)
        rows_y.append(eps0[start:])
        rows_j.append(_jacobian_one(theta0, blk, orders)[start:])
    target = np.concatenate(rows_y)
    phi = -np.vstack(rows_j)  # eps(theta) = eps(0) - phi @ theta
    cond = _cond(phi)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise rank_error(f"regressor condition number {cond:.3e} exceeds {COND_LIMIT:.0e}")
    theta, *_ = np.linalg.lstsq(phi, target, rcond=None)
    return theta, cond


def _gauss_newton(theta0, blocks, orders: _Orders):
    """Damped Gauss-Newton with a Levenberg-style fallback."""
    theta = np.asarray(theta0, dtype=float).copy()
    sse = _sse(theta, blocks, orders)
    lam = 1e-6
    iterations = 0
    converged = False
    for _ in range(_GN_MAX_ITER):
        iterations += 1
        r, J = _stack(theta, blocks, orders)
        g = J.T @ r
        H = J.T @ J
        accepted = False
        for _ in range(40):
            try:
                step = np.linalg.solve(H + lam * np.eye(H.shape[0]), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = theta + step
            cand_sse = _sse(cand, blocks, orders)
            if np.isfinite(cand_sse) and cand_sse <= sse:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        rel_drop = (sse - cand_sse) / max(sse, 1e-300)
        rel_step = np.linalg.norm(step) / (1.0 + np.linalg.norm(theta))
        theta, sse = cand, cand_sse
        lam = max(lam / 3.0, 1e-12)
        if rel_drop < _GN_TOL or rel_step < _GN_TOL:
            converged = True
            break
    return theta, sse, iterations, converged


def _initial_theta(blocks, orders: _Orders, rank_error) -> np.ndarray:
    """Start from the shared-denominator projection of the same data."""
    na0 = max(max((o.nf for o in orders.per_input), default=0), orders.nd, orders.na)
    init_orders = _Orders("arx", na0, tuple(InputOrders(o.nb, o.nk, 0) for o in orders.per_input), 0, 0)
    theta_arx, _ = _solve_linear(blocks, init_orders, rank_error)
    a, b, _, _, _ = _split_theta(theta_arx, init_orders)
    parts = list(b)
    for o in orders.per_input:
        parts.append(a[: o.nf])
    parts.append(np.zeros(orders.nc))
    parts.append(a[: orders.nd])
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def _run_engine(blocks, orders: _Orders, rank_error) -> tuple[np.ndarray, float, float, int, bool, tuple[str, ...]]:
    messages: list[str] = []
    if orders.is_linear:
        theta, cond = _solve_linear(blocks, orders, rank_error)
        sse = _sse(theta, blocks, orders)
        return theta, sse, cond, 0, True, tuple(messages)

    theta0 = _initial_theta(blocks, orders, rank_error)
    r0, J0 = _stack(theta0, blocks, orders)
    cond0 = _cond(J0)
    if not np.isfinite(cond0) or cond0 > COND_LIMIT:
        raise rank_error(f"Jacobian condition number {cond0:.3e} exceeds {COND_LIMIT:.0e}")

    theta, sse, iterations, converged = _gauss_newton(theta0, blocks, orders)
    if not converged:
        rng = np.random.default_rng(0)
        for attempt in range(_MULTISTART):
            jitter = theta0 * (1.0 + 0.1 * rng.standard_normal(theta0.size))
            jitter += 0.01 * rng.standard_normal(theta0.size)
            t2, s2, it2, ok2 = _gauss_newton(jitter, blocks, orders)
            iterations += it2
            if s2 < sse:
                theta, sse, converged = t2, s2, ok2
            if converged:
                break
        if not converged:
            messages.append("Gauss-Newton did not converge; best multi-start kept")
    _, J = _stack(theta, blocks, orders)
    return theta, sse, _cond(J), iterations, converged, tuple(messages)


def _criterion_rows(blocks, orders) -> int:
    return sum(max(blk.y.size - max(blk.start, orders.max_lag), 0) for blk in blocks)


def _build_result(j, method, input_nodes, theta, orders, sse, cond, iterations, converged,
                  messages) -> EstimationResult:
    a, b, f, c, d = _split_theta(theta, orders)
    modules = {}
    for node, bk, fk, o in zip(input_nodes, b, f, orders.per_input):
        num = tuple(np.concatenate((np.zeros(o.nk), bk)))
        den = tuple(np.concatenate(([1.0], a))) if orders.structure == "arx" \
            else tuple(np.concatenate(([1.0], fk)))
        modules[node] = TransferFunction(num, den)
    if orders.structure == "arx":
        noise_model = TransferFunction((1.0,), tuple(np.concatenate(([1.0], a))))
    elif orders.nc or orders.nd:
        noise_model = TransferFunction(
            tuple(np.concatenate(([1.0], c))), tuple(np.concatenate(([1.0], d))))
    else:
        noise_model = TransferFunction((1.0,))
    return EstimationResult(
        j=j,
        method=method,
        modules=modules,
        noise_model=noise_model,
        theta=theta,
        residual_variance=sse,
        regressor_condition_number=cond,
        iterations=iterations,
        converged=converged,
        messages=messages,
    )


# -- public operations ----------------------------------------------------------


def residual_target(
    data: SignalDataset,
    j,
    known_modules: Optional[Mapping] = None,
    excitation_present: bool = True,
    measured: bool = False,
) -> np.ndarray:
    """Output series with its own excitation and known contributions removed.

    Computes ``w_j - r_j - sum_k G_jk w_k`` over the known modules, filtering
    from zero initial conditions.  With `measured` the sensor channel is used
    for every node signal.
    """
    y = data.node(j, measured).astype(float).copy()
    j_idx = data._node_pos(j) + 1
    if excitation_present and j_idx in data.excitation_nodes:
        y = y - data.excitation(j_idx)
    for k, tf in (known_modules or {}).items():
        y = y - lfilter(tf.num, tf.den, data.node(k, measured))
    return y


def _resolve_inputs(data: SignalDataset, spec: MisoModelSpec):
    j = data._node_pos(spec.j) + 1
    inputs = tuple(data._node_pos(k) + 1 for k in spec.inputs)
    if j in inputs:
        raise ValueError("output node cannot be a predictor input")
    known = {data._node_pos(k) + 1: tf for k, tf in spec.known_modules.items()}
    return j, inputs, known


def direct_miso(data: SignalDataset, spec: MisoModelSpec, use_measured: bool = False) -> EstimationResult:
    """Prediction-error estimate using measured node signals as inputs.

    Consistent when the noise model can represent the true disturbance, the
    disturbances on distinct nodes are uncorrelated, and every loop through
    the output has a delay; those structural facts are the caller's to check
    (see `validate_network` and `check_input_selection`).

    Raises
    ------
    RankDeficientRegressor
        If the regressor is numerically rank deficient (uninformative data).
    """
    j, input_nodes, known = _resolve_inputs(data, spec)
    orders = _canonical_orders(spec, spec.inputs)
    y = residual_target(data, j, known, measured=use_measured)
    X = [data.node(k, use_measured).astype(float) for k in input_nodes]
    blocks = [_Block(y=y, X=X, start=4 * orders.max_lag)]
    theta, sse, cond, iterations, converged, messages = _run_engine(
        blocks, orders, RankDeficientRegressor)
    rows = _criterion_rows(blocks, orders)
    return _build_result(j, "direct", input_nodes, theta, orders, sse / max(rows, 1),
                         cond, iterations, converged, messages)


def project_signals(
    data: SignalDataset,
    targets,
    externals,
    proj_order: int = 20,
) -> dict[int, np.ndarray]:
    """Project node signals onto external excitations by FIR least squares.

    Fits, for every target node, a length-`proj_order` FIR response from each
    selected excitation and returns the simulated (projected) signals.  The
    regression residual is orthogonal to the excitation regressors by
    construction.

    Raises
    ------
    RankDeficientRegressor
        If the excitations do not excite (rank-deficient regressor).
    """
    if proj_order < 1:
        raise ValueError("proj_order must be >= 1")
    ext = tuple(data._node_pos(m) + 1 for m in externals)
    if not ext:
        raise ValueError("externals must be nonempty")
    cols = []
    for m in ext:
        r = data.excitation(m)
        for tau in range(proj_order):
            cols.append(_shift(r, tau))
    phi = np.column_stack(cols)
    # the first rows lack the true excitation history (the dataset starts
    # after the burn-in), so they are excluded from the fit
    fit_rows = slice(proj_order, None)
    cond = _cond(phi[fit_rows])
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise RankDeficientRegressor(
            f"projection regressor condition number {cond:.3e} exceeds {COND_LIMIT:.0e}")
    nodes = [data._node_pos(k) + 1 for k in targets]
    Y = np.column_stack([data.node(k) for k in nodes])
    coef, *_ = np.linalg.lstsq(phi[fit_rows], Y[fit_rows], rcond=None)
    fitted = phi @ coef
    return {k: fitted[:, i] for i, k in enumerate(nodes)}


def two_stage(
    data: SignalDataset,
    spec: MisoModelSpec,
    externals,
    net: DynamicNetwork,
    proj_order: int = 20,
) -> EstimationResult:
    """Projection-based estimate: inputs are replaced by their excitation part.

    Every selected excitation must reach the output only through the
    predictor inputs; otherwise its unexplained effect on the output would
    correlate with the projected inputs and bias the estimate.

    Raises
    ------
    ExternalPathViolation
        If a selected excitation has a path to the output that avoids the
        predictor inputs.
    RankDeficientRegressor
        If the projected inputs are insufficiently informative.
    """
    j, input_nodes, known = _resolve_inputs(data, spec)
    ext = tuple(data._node_pos(m) + 1 for m in externals)
    for m in ext:
        if has_path(net, ExcitationSource(m), j, avoiding=input_nodes):
            raise ExternalPathViolation(
                f"excitation at node {m} reaches output {j} around the predictor inputs")
    orders = _canonical_orders(spec, spec.inputs)
    projected = project_signals(data, input_nodes, ext, proj_order)
    y = residual_target(data, j, known)
    X = [projected[k] for k in input_nodes]
    # skip the projection's history-free prefix in addition to the transient
    blocks = [_Block(y=y, X=X, start=max(4 * orders.max_lag, proj_order + orders.max_lag))]
    theta, sse, cond, iterations, converged, messages = _run_engine(
        blocks, orders, RankDeficientRegressor)
    rows = _criterion_rows(blocks, orders)
    return _build_result(j, "two_stage", input_nodes, theta, orders, sse / max(rows, 1),
                         cond, iterations, converged, messages)


def iv_correlation(
    data: SignalDataset,
    spec: MisoModelSpec,
    iv: IvSpec,
    net: DynamicNetwork,
) -> EstimationResult:
    """Correlation-based estimate that is immune to sensor noise.

    Sample cross-correlations between the measured signals and the
    instruments replace the raw time series; the quadratic criterion sums the
    squared prediction-error correlation over lags 0..n_z.  Instruments are
    measured signals of *other* nodes (or excitations), so mutually
    independent sensor noise drops out of every correlation used.

    Raises
    ------
    DelayConditionViolated
        If a delay-free path runs from the output to an internal instrument.
    RankDeficientCorrelationBlock
        If the stacked correlation regressor is rank deficient.
    """
    j, input_nodes, known = _resolve_inputs(data, spec)
    instruments = tuple(data._node_pos(x) + 1 for x in iv.instruments)
    overlap = set(instruments) & ({j} | set(input_nodes))
    if overlap:
        raise ValueError(f"instruments {sorted(overlap)} overlap the output or inputs")
    for ell in instruments:
        if _has_delay_free_path(net, j, ell):
            raise DelayConditionViolated(
                f"delay-free path from output {j} to instrument {ell}")

    orders = _canonical_orders(spec, spec.inputs)
    n_params = orders.n_params
    n_z = iv.n_z if iv.n_z is not None else 4 * n_params
    if n_z < n_params:
        raise ValueError(f"n_z={n_z} is below the parameter count {n_params}")

    measured = data.w_tilde is not None
    z_series = [data.node(ell, measured) for ell in instruments]
    z_series += [data.excitation(m) for m in iv.externals]

    ybar = residual_target(data, j, known, measured=measured)
    x_series = [data.node(k, measured).astype(float) for k in input_nodes]

    pad = 4 * orders.max_lag
    blocks = []
    for z in z_series:
        y_corr = cross_correlation_signed(ybar, z, -pad, n_z)
        X_corr = [cross_correlation_signed(x, z, -pad, n_z) for x in x_series]
        blocks.append(_Block(y=y_corr, X=X_corr, start=pad))
    theta, sse, cond, iterations, converged, messages = _run_engine(
        blocks, orders, RankDeficientCorrelationBlock)
    rows = _criterion_rows(blocks, orders)
    return _build_result(j, "iv", input_nodes, theta, orders, sse / max(rows, 1),
                         cond, iterations, converged, messages)


# -- estimation spec files -------------------------------------------------------

_PLAN_KEYS = {"format", "method", "j", "inputs", "structure", "orders", "na", "noise",
              "known", "externals", "proj_order", "instruments",
              "external_instruments", "n_z", "use_measured", "sensor_variances"}
_ORDER_KEYS = {"nb", "nk", "nf"}
_NOISE_KEYS = {"nc", "nd"}


@dataclass(frozen=True)
class EstimationPlan:
    """A fully specified estimation run, as read from a spec file."""

    method: str  # direct | two_stage | iv
    spec: MisoModelSpec
    externals: tuple = ()
    proj_order: int = 20
    iv: Optional[IvSpec] = None
    use_measured: bool = False
    sensor_variances: Optional[tuple[float, ...]] = None


def _parse_orders(doc) -> InputOrders | dict:
    def one(d):
        unknown = set(d) - _ORDER_KEYS
        if unknown:
            raise SchemaError(f"unknown key(s) {sorted(unknown)} in orders")
        return InputOrders(nb=int(d["nb"]), nk=int(d.get("nk", 1)), nf=int(d.get("nf", 0)))

    if all(k in _ORDER_KEYS for k in doc):
        return one(doc)
    out = {}
    for node, d in doc.items():
        key = int(node) if str(node).lstrip("-").isdigit() else node
        out[key] = one(d)
    return out


def plan_from_dict(doc: Mapping) -> EstimationPlan:
    """Parse an estimation spec document; unknown keys are rejected."""
    unknown = set(doc) - _PLAN_KEYS
    if unknown:
        raise SchemaError(f"unknown key(s) {sorted(unknown)} in estimation spec")
    method = doc.get("method", "direct")
    if method not in ("direct", "two_stage", "iv"):
        raise SchemaError(f"unknown method {method!r}")
    known = {}
    for node, tf in doc.get("known", {}).items():
        key = int(node) if str(node).lstrip("-").isdigit() else node
        known[key] = TransferFunction(tuple(tf["num"]), tuple(tf["den"]))
    noise = None
    if doc.get("noise") is not None:
        nd = doc["noise"]
        unknown = set(nd) - _NOISE_KEYS
        if unknown:
            raise SchemaError(f"unknown key(s) {sorted(unknown)} in noise orders")
        noise = NoiseOrders(nc=int(nd.get("nc", 0)), nd=int(nd.get("nd", 0)))
    spec = MisoModelSpec(
        j=doc["j"],
        inputs=tuple(doc["inputs"]),
        structure=doc.get("structure", "boxjenkins"),
        orders=_parse_orders(doc.get("orders", {"nb": 2, "nk": 1})),
        na=int(doc.get("na", 0)),
        noise=noise,
        known_modules=known,
    )
    iv = None
    if method == "iv":
        iv = IvSpec(
            instruments=tuple(doc.get("instruments", ())),
            externals=tuple(doc.get("external_instruments", ())),
            n_z=doc.get("n_z"),
        )
    s_var = doc.get("sensor_variances")
    return EstimationPlan(
        method=method,
        spec=spec,
        externals=tuple(doc.get("externals", ())),
        proj_order=int(doc.get("proj_order", 20)),
        iv=iv,
        use_measured=bool(doc.get("use_measured", False)),
        sensor_variances=tuple(float(v) for v in s_var) if s_var is not None else None,
    )


def run_plan(data: SignalDataset, plan: EstimationPlan, net: DynamicNetwork) -> EstimationResult:
    """Dispatch an estimation plan to the matching engine."""
    if plan.method == "direct":
        return direct_miso(data, plan.spec, use_measured=plan.use_measured)
    if plan.method == "two_stage":
        return two_stage(data, plan.spec, plan.externals, net, plan.proj_order)
    return iv_correlation(data, plan.spec, plan.iv, net)


def _has_delay_free_path(net: DynamicNetwork, src, dst) -> bool:
    """Reachability in the subgraph of modules with direct feedthrough."""
    src = net.node_index(src)
    dst = net.node_index(dst)
    children: dict[int, list[int]] = {n: [] for n in range(1, net.L + 1)}
    for jj in range(net.L):
        for ll in range(net.L):
            tf = net.G[jj][ll]
            if tf is not None and not tf.has_delay:
                children[ll + 1].append(jj + 1)
    seen = set()
    queue = [src]
    while queue:
        v = queue.pop()
        for w in children[v]:
            if w == dst:
                return True
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return False
