"""Structured deep dictionary learning reconstruction.

Patches of the echo stack are modeled through a chain of dictionaries,
``P_i X ~ D_1 Z^1``, ``Z^1 ~ D_2 Z^2``, ..., ``Z^{L-1} ~ D_L Z``, where the
intermediate representations ``Z^k`` are kept nonnegative (the ReLU
constraints) and the deepest code ``Z`` is either row-sparse (l2,1) or
low-rank (nuclear norm) per patch. With one layer there are no proxies and
the model is plain group-sparse dictionary learning.

The solver minimizes the penalty form

    sum_j ||y_j - R_j F x_j||^2
      + lam * ( ||P X - D_1 Z^1||^2 + sum_k mu_k ||Z^k - D_{k+1} Z^{k+1}||^2
                + gamma * reg(Z) )

by cycling image update (P1), dictionary fits (P2..), proxy updates and the
code update once per outer iteration.

Coefficients for all patches share one array of shape
``(atoms, n_patches, 2 * n_echoes)``; ``coeffs[k]`` is ``Z^{k+1}`` for
``k < L - 1`` and the code ``Z`` for ``k = L - 1``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
import logging
import time

import numpy as np
import scipy.sparse.linalg

from . import prox
from ._accel import njit, use_numba
from .kspace import AcquiredData, EchoStack, adjoint, fft2c, ifft2c
from .patches import (
    PatchConfig,
    aggregate_channels,
    extract_channels,
    from_channels,
    to_channels,
    uniform_coverage,
    coverage,
)

log = logging.getLogger(__name__)

REGULARIZERS = ("row_sparse", "low_rank")


class SolverDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Hyperparameters for :func:`solve`.

    ``lam`` weighs the patch model against data fidelity, ``gamma`` the
    sparsity/rank penalty on the deepest code. ``mu1``, ``mu2``, ``mu3`` weigh
    the couplings between successive layers (only the first ``layers - 1``
    are used).
    """

    lam: float = 0.01
    gamma: float = 3.0
    mu1: float = 10.0
    mu2: float = 10.0
    mu3: float = 10.0
    layers: int = 3
    regularizer: str = "row_sparse"
    patch: PatchConfig = PatchConfig(12, 4, "wraparound")
    outer_iters: int = 50
    tol: float = 1e-4
    seed: int = 0
    inner_iters: int = 30
    first_atoms: int | None = None
    cg_tol: float = 1e-8
    warmup: int = 5

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}")
        if self.layers not in (1, 2, 3, 4):
            raise ValueError("layers must be 1..4")
        for name in ("lam", "gamma", "mu1", "mu2", "mu3", "tol"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.outer_iters < 1 or self.inner_iters < 0 or self.warmup < 0:
            raise ValueError("iteration budgets must be positive")

    @property
    def mus(self):
        return (self.mu1, self.mu2, self.mu3)[: self.layers - 1]

    def atom_counts(self):
        a = self.first_atoms or self.patch.patch_size**2
        counts = [a]
        for _ in range(self.layers - 1):
            counts.append(counts[-1] // 2)
        if counts[-1] < 1:
            raise ValueError(f"atom counts {counts} collapse to zero")
        return tuple(counts)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["patch"] = dataclasses.asdict(self.patch)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["patch"] = PatchConfig(**d["patch"])
        return cls(**d)


@dataclass(frozen=True)
class ReconReport:
    objective_trace: tuple
    iterations_run: int
    wall_time: float
    initial_objective: float
    final_snr: float | None
    config: dict
    snr_trace: tuple = ()

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class SolverState:
    cfg: SolverConfig
    data: AcquiredData
    x: np.ndarray
    dicts: list
    coeffs: list
    patches: np.ndarray = field(repr=False, default=None)
    masks: np.ndarray = field(repr=False, default=None)
    kdata: np.ndarray = field(repr=False, default=None)

    @property
    def layers(self):
        return len(self.dicts)

    @property
    def proxies(self):
        return self.coeffs[:-1]

    @property
    def code(self):
        return self.coeffs[-1]

    @property
    def dims(self):
        return self.x.shape[1:]


def _flat(a):
    return a.reshape(a.shape[0], -1)


def _apply(D, C):
    """``D @ C`` for a coefficient block of shape ``(atoms, n_patches, cols)``."""
    return (D @ _flat(C)).reshape((D.shape[0],) + C.shape[1:])


def _target(state, k):
    # what layer k's dictionary-times-coefficients approximates
    return state.patches if k == 0 else state.coeffs[k - 1]


def _weight(state, k):
    return 1.0 if k == 0 else state.cfg.mus[k - 1]


def _regularizer_value(cfg, Z):
    return prox.l21_norm(Z) if cfg.regularizer == "row_sparse" else prox.nuclear_norm(Z)


def _refresh_patches(state):
    state.patches = extract_channels(to_channels(state.x), state.cfg.patch)


def data_residual(state) -> float:
    """``||y - R F x||_2`` over all echoes."""
    r = state.masks * fft2c(state.x) - state.kdata
    return float(np.sqrt(np.sum(np.abs(r) ** 2)))


def model_terms(state):
    """Unweighted pieces of the bracketed patch model: fit terms and ``reg(Z)``."""
    fits = []
    for k in range(state.layers):
        r = _target(state, k) - _apply(state.dicts[k], state.coeffs[k])
        fits.append(float(np.sum(r * r)))
    return fits, _regularizer_value(state.cfg, state.code)


def objective(state) -> float:
    cfg = state.cfg
    fits, reg = model_terms(state)
    model = sum(_weight(state, k) * f for k, f in enumerate(fits)) + cfg.gamma * reg
    return data_residual(state) ** 2 + cfg.lam * model


def _unit_columns(D):
    n = np.linalg.norm(D, axis=0)
    n[n == 0] = 1.0
    return D / n


def init_solver(cfg: SolverConfig, d: AcquiredData) -> SolverState:
    """Zero-filled images, seeded Gaussian dictionaries, and cascaded initial codes.

    ``cfg.warmup`` model-only sweeps (dictionaries, proxies, codes) follow,
    with the images held at the zero-filled estimate.
    """
    dims = d.image_shape
    cfg.patch.validate(dims)
    rng = np.random.default_rng(cfg.seed)
    atoms = cfg.atom_counts()
    p2 = cfg.patch.patch_size**2
    rows = (p2,) + atoms[:-1]
    dicts = [_unit_columns(rng.standard_normal((m, a))) for m, a in zip(rows, atoms)]

    state = SolverState(cfg, d, adjoint(d).data.astype(np.complex128), dicts, [])
    state.masks = d.mask_stack()
    state.kdata = d.zero_filled_kspace()
    _refresh_patches(state)

    L = cfg.layers
    if L == 1:
        state.coeffs = [_apply(dicts[0].T, state.patches)]
    else:
        coeffs = [prox.relu_project(_apply(dicts[0].T, state.patches))]
        for k in range(1, L):
            nxt = _apply(np.linalg.pinv(dicts[k]), coeffs[-1])
            coeffs.append(prox.relu_project(nxt) if k < L - 1 else nxt)
        state.coeffs = coeffs
    # Fit the model to the zero-filled patches before the first image update;
    # random dictionaries would otherwise drag the images toward noise.
    for _ in range(cfg.warmup):
        update_dictionaries(state)
        update_proxies(state)
        update_codes(state)
    return state


# -- P1 ---------------------------------------------------------------------


def _image_normal_rhs(state):
    t = _apply(state.dicts[0], state.coeffs[0])
    agg = from_channels(aggregate_channels(t, state.cfg.patch, state.dims))
    return agg


def update_images(state, method="auto"):
    """Exact minimization over the images with dictionaries and ``Z^1`` fixed.

    With uniform patch coverage ``c`` the normal equations are diagonal in
    K-space: ``(M + lam c) k = M y + lam F(aggregate(D_1 Z^1))``. Otherwise
    (or with ``method="cg"``) conjugate gradients solve
    ``(F^H M F + lam C) x = F^H M y + lam aggregate(D_1 Z^1)``.
    """
    cfg = state.cfg
    agg = _image_normal_rhs(state)
    c = uniform_coverage(cfg.patch, state.dims) if method != "cg" else None
    if method == "fft" and c is None:
        raise ValueError("fft path needs uniform patch coverage")
    if c is not None:
        num = state.kdata + cfg.lam * fft2c(agg)
        den = state.masks + cfg.lam * c
        k = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        state.x = ifft2c(k)
    else:
        state.x = _cg_images(state, agg)
    _refresh_patches(state)
    return state


def _cg_images(state, agg):
    cfg = state.cfg
    cov = coverage(cfg.patch, state.dims)
    shape = state.x.shape
    n = state.x.size

    def matvec(v):
        v = v.reshape(shape)
        return (ifft2c(state.masks * fft2c(v)) + cfg.lam * cov * v).ravel()

    op = scipy.sparse.linalg.LinearOperator((n, n), matvec=matvec, dtype=np.complex128)
    b = (ifft2c(state.kdata) + cfg.lam * agg).ravel()
    x, info = scipy.sparse.linalg.cg(
        op, b, x0=state.x.ravel(), rtol=cfg.cg_tol, atol=0.0, maxiter=10 * n
    )
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(b - matvec(x)) / (bnorm if bnorm > 0 else 1.0)
    if info != 0 or res > 10 * cfg.cg_tol:
        raise SolverDivergedError(f"P1 conjugate gradient stalled (relative residual {res:.2e})")
    return x.reshape(shape)


# -- P2..P4 -----------------------------------------------------------------


def fit_dictionary(target, coeffs, D0=None, damp=None, sweeps=50):
    """``argmin_D ||T - D C||_F^2 + damp ||D||_F^2`` subject to column norms <= 1.

    The ridge solution is returned when it is already feasible. Otherwise
    block coordinate descent over columns, warm-started from ``D0`` (or the
    projected ridge solution), minimizes exactly over one column at a time.
    Returns ``None`` when the coefficients are identically zero.
    """
    C = _flat(coeffs)
    T = _flat(target)
    if not np.any(C):
        return None
    if damp is None:
        damp = prox.default_damp(C.T)
    gram = C @ C.T
    cross = T @ C.T
    D = prox.solve_normal(gram, cross.T, damp).T
    if np.all(np.linalg.norm(D, axis=0) <= 1.0):
        return D
    start = _project_columns(D if D0 is None else D0)
    return column_descent(start, gram + damp * np.eye(gram.shape[0]), cross, sweeps)


def _project_columns(D):
    n = np.linalg.norm(D, axis=0)
    return D / np.maximum(n, 1.0)


def column_descent(D, gram, cross, sweeps=50, tol=1e-12):
    """Minimize ``tr(D G D^T) - 2 tr(D B^T)`` over ``||d_k|| <= 1`` column by column."""
    D = np.array(D, dtype=np.float64, order="F")
    kernel = _column_descent_numba if use_numba() else _column_descent_numpy
    return kernel(D, np.ascontiguousarray(gram), np.asfortranarray(cross), sweeps, tol)


@njit(cache=True)
def _column_descent_numba(D, gram, cross, sweeps, tol):
    m, a = D.shape
    u = np.empty(m)
    for _ in range(sweeps):
        change = 0.0
        scale = 0.0
        for k in range(a):
            gkk = gram[k, k]
            if gkk <= 0.0:
                continue
            nrm = 0.0
            for i in range(m):
                s = cross[i, k]
                for j in range(a):
                    s -= D[i, j] * gram[j, k]
                u[i] = D[i, k] + s / gkk
                nrm += u[i] * u[i]
            nrm = np.sqrt(nrm)
            f = 1.0 / nrm if nrm > 1.0 else 1.0
            for i in range(m):
                v = u[i] * f
                change = max(change, abs(v - D[i, k]))
                scale = max(scale, abs(v))
                D[i, k] = v
        if change <= tol * max(scale, 1e-300):
            break
    return D


def _column_descent_numpy(D, gram, cross, sweeps, tol):
    for _ in range(sweeps):
        change = scale = 0.0
        for k in range(D.shape[1]):
            gkk = gram[k, k]
            if gkk <= 0.0:
                continue
            u = D[:, k] + (cross[:, k] - D @ gram[:, k]) / gkk
            v = u / max(np.linalg.norm(u), 1.0)
            change = max(change, float(np.max(np.abs(v - D[:, k]))))
            scale = max(scale, float(np.max(np.abs(v))))
            D[:, k] = v
        if change <= tol * max(scale, 1e-300):
            break
    return D


def update_dictionaries(state):
    """Refit each layer's dictionary in order, then unit-normalize ``D_1``.

    Every fit keeps column norms at most one; without that bound the deeper
    dictionaries can grow until the coupling penalties stop constraining
    anything.

    ``Z^1`` (the code itself for one layer) absorbs the column norms so that
    ``D_1 Z^1`` is unchanged.
    """
    for k in range(state.layers):
        D = fit_dictionary(_target(state, k), state.coeffs[k], state.dicts[k])
        if D is not None:
            state.dicts[k] = D
        if k == 0:
            _normalize_first(state)
    return state


def _normalize_first(state):
    D = state.dicts[0]
    norms = np.linalg.norm(D, axis=0)
    live = norms > 0
    scale = np.where(live, norms, 1.0)
    state.dicts[0] = D / scale
    state.coeffs[0] = state.coeffs[0] * scale[:, None, None]


# -- P5, P6 -----------------------------------------------------------------


def proxy_normal_equations(state, k):
    """Gram and right-hand side for the unconstrained update of ``coeffs[k]``, ``k < L-1``."""
    wl, wr = _weight(state, k), _weight(state, k + 1)
    Dl, Dr = state.dicts[k], state.dicts[k + 1]
    gram = wl * Dl.T @ Dl + wr * np.eye(Dl.shape[1])
    rhs = wl * _apply(Dl.T, _target(state, k)) + wr * _apply(Dr, state.coeffs[k + 1])
    return gram, rhs


def update_proxies(state):
    """Closed-form proxy updates followed by projection onto ``Z >= 0``."""
    for k in range(state.layers - 1):
        gram, rhs = proxy_normal_equations(state, k)
        try:
            sol = prox.solve_normal(gram, rhs)
        except prox.SingularSystemError:
            sol = prox.solve_normal(gram, rhs, prox.default_damp(state.dicts[k]))
        state.coeffs[k] = prox.relu_project(sol)
    return state


# -- P7 ---------------------------------------------------------------------


def update_codes(state):
    """Regularized code update for every patch by proximal gradient."""
    cfg = state.cfg
    k = state.layers - 1
    ista = prox.ista_l21 if cfg.regularizer == "row_sparse" else prox.ista_nuclear
    state.coeffs[k] = ista(
        state.dicts[k],
        _target(state, k),
        cfg.gamma,
        _weight(state, k),
        cfg.inner_iters,
        Z0=state.coeffs[k],
    )
    return state


# -- driver -----------------------------------------------------------------

_SWEEP = (
    ("P1 (images)", update_images),
    ("P2-P4 (dictionaries)", update_dictionaries),
    ("P5-P6 (proxies)", update_proxies),
    ("P7 (codes)", update_codes),
)


def _check_finite(state, stage):
    arrays = [state.x, *state.dicts, *state.coeffs]
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise SolverDivergedError(f"non-finite values after sub-problem {stage}")


def run(state, truth=None, callback=None):
    """Iterate the sweep on an initialized state. Returns ``(state, report)``."""
    from .metrics import snr_db

    cfg = state.cfg
    t0 = time.perf_counter()
    _check_finite(state, "initialization")
    f_prev = objective(state)
    f0 = f_prev
    trace, snrs = [], []
    for it in range(cfg.outer_iters):
        for stage, step in _SWEEP:
            step(state)
            _check_finite(state, stage)
        f = objective(state)
        if not np.isfinite(f):
            raise SolverDivergedError(f"non-finite objective after outer iteration {it}")
        trace.append(f)
        if truth is not None:
            snrs.append(snr_db(EchoStack(state.x), truth))
        log.debug("iter %d objective %.6g", it, f)
        if callback is not None:
            callback(it, state)
        if abs(f_prev - f) <= cfg.tol * abs(f_prev):
            break
        f_prev = f
    report = ReconReport(
        objective_trace=tuple(trace),
        iterations_run=len(trace),
        wall_time=time.perf_counter() - t0,
        initial_objective=f0,
        final_snr=snrs[-1] if snrs else None,
        config=cfg.to_dict(),
        snr_trace=tuple(snrs),
    )
    return state, report


def solve(d: AcquiredData, cfg: SolverConfig, truth: EchoStack | None = None, return_state=False):
    """Reconstruct the echo stack from undersampled data.

    Returns ``(images, report)``, plus the final :class:`SolverState` when
    ``return_state`` is set.
    """
    state, report = run(init_solver(cfg, d), truth)
    out = EchoStack(state.x)
    return (out, report, state) if return_state else (out, report)


SHALLOW_GAMMA = 1.0


def method_config(method: str, **overrides) -> SolverConfig:
    """Default configuration for ``"rsddl"``, ``"lrddl"`` or ``"shallow"``.

    The one-layer model penalizes its code directly against the patches, so
    it takes a smaller ``gamma`` than the deep models, whose code sits behind
    the ``mu``-weighted couplings.
    """
    if method == "rsddl":
        cfg = SolverConfig()
    elif method == "lrddl":
        cfg = SolverConfig(regularizer="low_rank")
    elif method == "shallow":
        cfg = SolverConfig(layers=1, gamma=SHALLOW_GAMMA)
    else:
        raise ValueError(f"unknown method {method!r}")
    return dataclasses.replace(cfg, **overrides)


def solve_shallow(d: AcquiredData, cfg: SolverConfig, truth=None, return_state=False):
    """One-layer group-sparse dictionary learning (no proxies, no ReLU)."""
    cfg = dataclasses.replace(cfg, layers=1, regularizer="row_sparse")
    return solve(d, cfg, truth, return_state)
