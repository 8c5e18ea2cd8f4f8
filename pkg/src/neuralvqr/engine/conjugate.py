"""
Fenchel conjugates of convex potentials via batched projected L-BFGS

The conjugate phi*(y, x) = max_u u'y - phi(u, x) is computed by minimizing
f(u) = phi(u, x) - u'y. Rows of a batch are independent problems with their own
curvature history, line search and stopping decision; a scalar solve is a
batch of one.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from ..autodiff import as_dense
from ..metrics.prometheus import conjugate_iterations, conjugate_solves_total
from ..types.errors import NanObjectiveError, ShapeMismatchError, SolveNotConvergedError
from ..types.models import Domain, SolverInit, SolverSettings
from .picnn import PicnnParams, potential_value_and_grad_u

logger = logging.getLogger(__name__)

DEFAULT_WORKERS = int(os.getenv("NEURALVQR_WORKERS", "1"))
MIN_PARALLEL_ROWS = 256
CURVATURE_EPS = 1e-10

ObjectiveFn = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


@dataclass
class ConjugateProblem:
    """max_u u'y - phi(u, x) over a domain"""
    potential: PicnnParams
    y: np.ndarray
    x: Optional[np.ndarray] = None
    domain: Domain = field(default_factory=Domain)

    def __post_init__(self):
        self.y = as_dense(self.y).reshape(-1)
        if self.y.shape[0] != self.potential.config.d_u:
            raise ShapeMismatchError(
                f"conjugate problem: y has dimension {self.y.shape[0]}, potential expects {self.potential.config.d_u}"
            )


@dataclass
class ConjugateSolution:
    """Maximizer u_hat, conjugate value and diagnostics of one solve"""
    u_hat: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    status: str


@dataclass
class ConjugateBatchSolution:
    """Row-wise results of a batch of conjugate solves"""
    u_hat: np.ndarray
    value: np.ndarray
    grad_norm: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    status: np.ndarray

    def __len__(self) -> int:
        return self.u_hat.shape[0]

    def __getitem__(self, i: int) -> ConjugateSolution:
        return ConjugateSolution(
            u_hat=self.u_hat[i].copy(),
            value=float(self.value[i]),
            grad_norm=float(self.grad_norm[i]),
            iterations=int(self.iterations[i]),
            converged=bool(self.converged[i]),
            status=str(self.status[i]),
        )

    @classmethod
    def concat(cls, parts) -> "ConjugateBatchSolution":
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                     ("u_hat", "value", "grad_norm", "iterations", "converged", "status")))


def _check_finite(values: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(values)):
        bad = int(np.sum(~np.isfinite(values)))
        raise NanObjectiveError(f"{where}: {bad} non-finite objective value(s)")


def _two_loop(G: np.ndarray, S: np.ndarray, Z: np.ndarray, rho: np.ndarray, h_diag: np.ndarray) -> np.ndarray:
    """Inverse-Hessian approximation times G, row-wise; empty slots have rho = 0"""
    q = G.copy()
    memory = S.shape[1]
    alpha = np.zeros((G.shape[0], memory))
    for j in range(memory - 1, -1, -1):
        a = rho[:, j] * np.einsum("bd,bd->b", S[:, j], q)
        alpha[:, j] = a
        q -= a[:, None] * Z[:, j]
    r = h_diag[:, None] * q
    for j in range(memory):
        beta = rho[:, j] * np.einsum("bd,bd->b", Z[:, j], r)
        r += S[:, j] * (alpha[:, j] - beta)[:, None]
    return r


def _line_search(fg: ObjectiveFn, rows: np.ndarray, U: np.ndarray, F: np.ndarray, G: np.ndarray,
                 D: np.ndarray, slope: np.ndarray, t0: np.ndarray, domain: Domain, settings: SolverSettings):
    """Vectorized bisection search for strong-Wolfe steps.

    Trial points are projected onto the domain. Where the projection is
    active only sufficient decrease is required. A row that never meets the
    conditions falls back to its best sufficient-decrease trial, or fails.
    """
    n = rows.shape[0]
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    t = t0.copy()
    searching = np.ones(n, dtype=bool)
    accepted = np.zeros(n, dtype=bool)
    U_out, F_out, G_out = U.copy(), F.copy(), G.copy()
    best_f = F.copy()
    best_u, best_g = U.copy(), G.copy()
    have_best = np.zeros(n, dtype=bool)
    abs_slope = np.abs(slope)

    for _ in range(settings.max_line_search):
        idx = np.flatnonzero(searching)
        if idx.size == 0:
            break
        raw = U[idx] + t[idx, None] * D[idx]
        Ut = domain.project(raw)
        Ft, Gt = fg(Ut, rows[idx])
        _check_finite(Ft, "line search")

        decrease_bound = F[idx] + settings.c1 * np.einsum("bd,bd->b", G[idx], Ut - U[idx])
        armijo = (Ft <= decrease_bound) & (Ft <= F[idx])
        curvature = np.einsum("bd,bd->b", Gt, D[idx])
        projected = np.any(Ut != raw, axis=1)

        improved = armijo & (Ft < best_f[idx])
        if improved.any():
            k = idx[improved]
            best_f[k], best_u[k], best_g[k] = Ft[improved], Ut[improved], Gt[improved]
            have_best[k] = True

        too_short = armijo & ~projected & (curvature < -settings.c2 * abs_slope[idx])
        overshoot = armijo & ~projected & (curvature > settings.c2 * abs_slope[idx])
        accept = armijo & ~too_short & ~overshoot

        if accept.any():
            k = idx[accept]
            U_out[k], F_out[k], G_out[k] = Ut[accept], Ft[accept], Gt[accept]
            accepted[k] = True
            searching[k] = False

        shrink = idx[~armijo | overshoot]
        hi[shrink] = t[shrink]
        grow = idx[too_short]
        lo[grow] = t[grow]
        t[shrink] = 0.5 * (lo[shrink] + hi[shrink])
        t[grow] = np.where(np.isinf(hi[grow]), 2.0 * t[grow], 0.5 * (lo[grow] + hi[grow]))

    fallback = ~accepted & have_best
    U_out[fallback], F_out[fallback], G_out[fallback] = best_u[fallback], best_f[fallback], best_g[fallback]
    return accepted | fallback, U_out, F_out, G_out


def minimize_batch(fg: ObjectiveFn, U0: np.ndarray, domain: Domain, settings: SolverSettings):
    """Row-wise projected L-BFGS on a smooth convex objective.

    ``fg(U, rows)`` returns values and gradients for the batch rows ``rows``.
    Returns (U, F, projected-gradient norms, iterations, converged, status).
    """
    B, d = U0.shape
    memory = settings.memory
    all_rows = np.arange(B)
    U = domain.project(as_dense(U0).copy())
    F, G = fg(U, all_rows)
    _check_finite(F, "initial point")

    S = np.zeros((B, memory, d))
    Z = np.zeros((B, memory, d))
    rho = np.zeros((B, memory))
    h_diag = np.ones(B)
    iterations = np.zeros(B, dtype=int)
    status = np.full(B, "max_iter", dtype=object)
    grad_norm = np.linalg.norm(domain.projected_gradient(U, G), axis=1)
    done = grad_norm <= settings.eps_norm
    status[done] = "gradient"

    def reset(rows_to_reset: np.ndarray) -> None:
        S[rows_to_reset] = 0.0
        Z[rows_to_reset] = 0.0
        rho[rows_to_reset] = 0.0
        h_diag[rows_to_reset] = 1.0

    for _ in range(settings.max_iter):
        active = np.flatnonzero(~done)
        if active.size == 0:
            break
        Ua, Fa, Ga = U[active], F[active], G[active]
        D = -_two_loop(Ga, S[active], Z[active], rho[active], h_diag[active])
        slope = np.einsum("bd,bd->b", Ga, D)
        not_descent = ~(slope < 0)
        if not_descent.any():
            reset(active[not_descent])
            D[not_descent] = -Ga[not_descent]
            slope[not_descent] = -np.einsum("bd,bd->b", Ga[not_descent], Ga[not_descent])

        had_history = np.any(rho[active] > 0, axis=1)
        first_step = np.minimum(1.0, 1.0 / np.maximum(np.abs(Ga).sum(axis=1), 1e-300))
        t0 = np.where(had_history, 1.0, first_step)

        ok, U_new, F_new, G_new = _line_search(fg, active, Ua, Fa, Ga, D, slope, t0, domain, settings)
        iterations[active] += 1

        failed = ~ok
        if failed.any():
            retry = active[failed & had_history]
            reset(retry)
            stalled = active[failed & ~had_history]
            done[stalled] = True
            status[stalled] = "stalled"

        if ok.any():
            rows = active[ok]
            s = U_new[ok] - Ua[ok]
            z = G_new[ok] - Ga[ok]
            sz = np.einsum("bd,bd->b", s, z)
            keep = sz > CURVATURE_EPS
            if keep.any():
                k = rows[keep]
                S[k] = np.roll(S[k], -1, axis=1)
                Z[k] = np.roll(Z[k], -1, axis=1)
                rho[k] = np.roll(rho[k], -1, axis=1)
                S[k, -1] = s[keep]
                Z[k, -1] = z[keep]
                rho[k, -1] = 1.0 / sz[keep]
                h_diag[k] = sz[keep] / np.einsum("bd,bd->b", z[keep], z[keep])

            decrease = Fa[ok] - F_new[ok]
            U[rows], F[rows], G[rows] = U_new[ok], F_new[ok], G_new[ok]
            grad_norm[rows] = np.linalg.norm(domain.projected_gradient(U[rows], G[rows]), axis=1)
            by_gradient = grad_norm[rows] <= settings.eps_norm
            by_objective = ~by_gradient & (decrease <= settings.eps_obj)
            done[rows[by_gradient]] = True
            status[rows[by_gradient]] = "gradient"
            done[rows[by_objective]] = True
            status[rows[by_objective]] = "objective"

    converged = np.isin(status, ("gradient", "objective"))
    return U, F, grad_norm, iterations, converged, status


def _record_metrics(solution: ConjugateBatchSolution) -> None:
    labels, counts = np.unique(solution.status.astype(str), return_counts=True)
    for label, count in zip(labels, counts):
        conjugate_solves_total.labels(status=label).inc(int(count))
    for it in solution.iterations:
        conjugate_iterations.observe(int(it))


def _initial_points(settings: SolverSettings, B: int, d: int, init: Optional[np.ndarray],
                    rng: Optional[np.random.Generator]) -> np.ndarray:
    if init is not None:
        init = as_dense(init)
        if init.ndim == 1:
            init = np.broadcast_to(init, (B, d))
        if init.shape != (B, d):
            raise ShapeMismatchError(f"conjugate init has shape {init.shape}, expected {(B, d)}")
        return init.copy()
    if settings.init == SolverInit.REFERENCE:
        rng = rng if rng is not None else np.random.default_rng()
        return rng.standard_normal((B, d))
    return np.zeros((B, d))


def _solve_chunk(potential: PicnnParams, Y: np.ndarray, X: np.ndarray, U0: np.ndarray,
                 domain: Domain, settings: SolverSettings) -> ConjugateBatchSolution:
    def fg(U: np.ndarray, rows: np.ndarray):
        values, grads = potential_value_and_grad_u(potential, U, X[rows])
        y = Y[rows]
        return values - np.einsum("bd,bd->b", U, y), grads - y

    U, F, grad_norm, iterations, converged, status = minimize_batch(fg, U0, domain, settings)
    return ConjugateBatchSolution(U, -F, grad_norm, iterations, converged, status)


def solve_conjugate_batch(potential: PicnnParams, Y: np.ndarray, X: Optional[np.ndarray] = None,
                          settings: Optional[SolverSettings] = None, init: Optional[np.ndarray] = None,
                          domain: Optional[Domain] = None,
                          rng: Optional[np.random.Generator] = None) -> ConjugateBatchSolution:
    """Solve max_u u'y_b - phi(u, x_b) for every row b.

    Non-convergence within K_max is reported per row, never raised.
    """
    settings = settings or SolverSettings()
    domain = domain or Domain()
    config = potential.config
    Y = as_dense(Y)
    if Y.ndim != 2 or Y.shape[1] != config.d_u:
        raise ShapeMismatchError(f"conjugate solve: Y has shape {Y.shape}, expected (*, {config.d_u})")
    B = Y.shape[0]
    X = np.zeros((B, config.d_x)) if X is None else as_dense(X).reshape(B, config.d_x)
    U0 = _initial_points(settings, B, config.d_u, init, rng)

    workers = settings.workers or DEFAULT_WORKERS
    if workers > 1 and B >= MIN_PARALLEL_ROWS:
        chunks = np.array_split(np.arange(B), workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(
                lambda idx: _solve_chunk(potential, Y[idx], X[idx], U0[idx], domain, settings), chunks
            ))
        solution = ConjugateBatchSolution.concat(parts)
    else:
        solution = _solve_chunk(potential, Y, X, U0, domain, settings)

    _record_metrics(solution)
    failed = int(np.sum(~solution.converged))
    if failed:
        logger.warning(f"conjugate solve: {failed}/{B} rows hit K_max={settings.max_iter} without converging")
    logger.debug(f"conjugate solve: {B} rows, mean iterations {solution.iterations.mean():.1f}")
    return solution


def solve_conjugate(problem: ConjugateProblem, settings: Optional[SolverSettings] = None,
                    init: Optional[np.ndarray] = None) -> ConjugateSolution:
    """Single conjugate solve; ``init`` is projected onto the domain"""
    x = None if problem.x is None else as_dense(problem.x).reshape(1, -1)
    batch = solve_conjugate_batch(
        problem.potential, problem.y.reshape(1, -1), x, settings,
        init=None if init is None else as_dense(init).reshape(1, -1), domain=problem.domain,
    )
    return batch[0]


def conjugate_objective(potential: PicnnParams, U: np.ndarray, Y: np.ndarray, X: Optional[np.ndarray] = None) -> np.ndarray:
    """J(u; y, x) = u'y - phi(u, x), row-wise"""
    values, _ = potential_value_and_grad_u(potential, U, X)
    return np.einsum("bd,bd->b", as_dense(U), as_dense(Y)) - values


def require_converged(solution: ConjugateBatchSolution, where: str) -> None:
    if not np.all(solution.converged):
        bad = int(np.sum(~solution.converged))
        raise SolveNotConvergedError(f"{where}: {bad} conjugate solve(s) did not converge")
