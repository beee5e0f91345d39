"""Small dense strictly convex QPs with linear inequality rows and box bounds.

Solves ``min 1/2 sum_k quad_diag[k] * x[k]**2`` subject to ``coeffs . x >= rhs``
for every row and ``box_lo <= x <= box_hi``. A phase-1 projection (dual
active-set) decides feasibility exactly; a primal active-set method started
from that point finds the minimiser. The numerics live in the backend kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import nnls

from ._backend import kernels
from .types import ConfigError

FEAS_TOL = 1e-9
ACTIVE_TOL = 1e-9


class QpStatus(str, Enum):
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"


class QpSolverError(RuntimeError):
    """The active-set iterations did not terminate (iteration cap or breakdown)."""


@dataclass(frozen=True)
class ConstraintRow:
    coeffs: np.ndarray
    rhs: float
    tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))
        object.__setattr__(self, "rhs", float(self.rhs))

    def value(self, x) -> float:
        """Slack ``coeffs . x - rhs`` (nonnegative when satisfied)."""
        return float(np.dot(self.coeffs, x)) - self.rhs


@dataclass(frozen=True)
class QpProblem:
    quad_diag: np.ndarray
    rows: tuple[ConstraintRow, ...] = ()
    box_lo: np.ndarray | None = None
    box_hi: np.ndarray | None = None

    def __post_init__(self):
        q = np.asarray(self.quad_diag, dtype=float)
        n = q.shape[0]
        lo = np.full(n, -np.inf) if self.box_lo is None else np.asarray(self.box_lo, dtype=float)
        hi = np.full(n, np.inf) if self.box_hi is None else np.asarray(self.box_hi, dtype=float)
        object.__setattr__(self, "quad_diag", q)
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "box_lo", lo)
        object.__setattr__(self, "box_hi", hi)
        if not np.all(q > 0):
            raise ConfigError("quad_diag must be strictly positive")
        if lo.shape != (n,) or hi.shape != (n,):
            raise ConfigError("box bounds must have length dim")
        if np.any(lo > hi):
            raise ConfigError("box_lo must not exceed box_hi")
        for r in self.rows:
            if r.coeffs.shape != (n,):
                raise ConfigError("constraint row length must equal dim")

    @property
    def dim(self) -> int:
        return self.quad_diag.shape[0]

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        A = np.array([r.coeffs for r in self.rows], dtype=float).reshape(-1, self.dim)
        b = np.array([r.rhs for r in self.rows], dtype=float)
        return A, b

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return 0.5 * float(np.dot(self.quad_diag * x, x))


@dataclass(frozen=True)
class QpSolution:
    status: QpStatus
    x: np.ndarray | None = None
    active_set: tuple[int, ...] = ()
    kkt_residual: float = float("nan")
    iterations: int = 0
    phase1_point: np.ndarray | None = field(default=None, repr=False)

    @property
    def feasible(self) -> bool:
        return self.status is QpStatus.FEASIBLE


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    point: np.ndarray
    max_violation: float


def _raw_args(problem: QpProblem):
    A, b = problem.matrix()
    return problem.dim, problem.quad_diag, A, b, problem.box_lo, problem.box_hi


def solve_qp(problem: QpProblem) -> QpSolution:
    """Unique minimiser of ``problem``, or an Infeasible status.

    ``active_set`` lists tight rows by index; box faces follow the rows, with
    ``len(rows) + 2k`` for ``x_k >= lo_k`` and ``len(rows) + 2k + 1`` for
    ``x_k <= hi_k``.
    """
    n, q, A, b, lo, hi = _raw_args(problem)
    status, x, active, x0, iters = kernels.solve_qp(n, q, A, b, lo, hi)
    if status == kernels.INFEASIBLE:
        return QpSolution(QpStatus.INFEASIBLE, iterations=iters,
                          phase1_point=np.array(x0))
    if status != kernels.OPTIMAL:
        raise QpSolverError(f"active-set solver stopped with status {status}")
    x = np.array(x)
    res = kkt_residual(problem, x)
    if res > 0.0 and active:
        xp = _polish(problem, x, active)
        rp = kkt_residual(problem, xp)
        if rp < res:
            x, res = xp, rp
    return QpSolution(
        QpStatus.FEASIBLE,
        x=x,
        active_set=tuple(active),
        kkt_residual=res,
        iterations=iters,
        phase1_point=np.array(x0),
    )


def _polish(problem: QpProblem, x, active) -> np.ndarray:
    """Recompute the minimiser on the final working set from scratch.

    The active-set updates are incremental, so with large multipliers a
    1e-9 slack on a tight row shows up as a large complementarity term.
    Box faces pin their variable; the remaining equalities are solved as a
    minimum-norm problem in ``sqrt(quad)``-scaled coordinates.
    """
    n, m = problem.dim, len(problem.rows)
    x = x.copy()
    fixed = np.zeros(n, bool)
    rows = []
    for k in active:
        if k < m:
            rows.append(k)
        else:
            v, hi = divmod(k - m, 2)
            x[v] = problem.box_hi[v] if hi else problem.box_lo[v]
            fixed[v] = True
    free = ~fixed
    if not rows or not free.any():
        return x
    A, b = problem.matrix()
    A, b = A[rows], b[rows]
    r = b - A[:, fixed] @ x[fixed]
    s = np.sqrt(problem.quad_diag[free])
    y = np.linalg.lstsq(A[:, free] / s, r, rcond=None)[0]
    x[free] = y / s
    return x


def find_feasible_point(rows, box_lo, box_hi) -> FeasibilityResult:
    """Exact phase-1 decision for ``{x : rows hold, box_lo <= x <= box_hi}``.

    The returned point is the Euclidean projection of the box centre (or the
    finite bound / zero on unbounded axes). When the set is empty the point is
    where the projection stalled and ``max_violation`` exceeds ``1e-9``.
    """
    lo = np.asarray(box_lo, dtype=float)
    hi = np.asarray(box_hi, dtype=float)
    n = lo.shape[0]
    rows = tuple(rows)
    A = np.array([r.coeffs for r in rows], dtype=float).reshape(-1, n)
    b = np.array([r.rhs for r in rows], dtype=float)
    status, x, viol = kernels.feasible_point(n, A, b, lo, hi)
    if status not in (kernels.OPTIMAL, kernels.INFEASIBLE):
        raise QpSolverError(f"phase-1 stopped with status {status}")
    return FeasibilityResult(status == kernels.OPTIMAL, np.array(x), float(viol))


def _all_rows(problem: QpProblem) -> tuple[np.ndarray, np.ndarray]:
    A, b = problem.matrix()
    extra_a, extra_b = [], []
    for k in range(problem.dim):
        e = np.zeros(problem.dim)
        if np.isfinite(problem.box_lo[k]):
            e[k] = 1.0
            extra_a.append(e.copy())
            extra_b.append(problem.box_lo[k])
        if np.isfinite(problem.box_hi[k]):
            e[k] = -1.0
            extra_a.append(e.copy())
            extra_b.append(-problem.box_hi[k])
    if extra_a:
        A = np.vstack([A, np.array(extra_a)])
        b = np.concatenate([b, np.array(extra_b)])
    return A, b


def kkt_residual(problem: QpProblem, candidate) -> float:
    """Optimality audit of ``candidate``; zero at an exact optimum.

    Max of primal violation, stationarity residual ``|H x - A_act^T lam|``
    with nonnegative least-squares multipliers over the rows tight at the
    candidate, and complementary slackness ``max |lam_i * slack_i|``.
    """
    x = np.asarray(candidate, dtype=float)
    if x.shape != (problem.dim,):
        raise ValueError("candidate must have length dim")
    A, b = _all_rows(problem)
    slack = A @ x - b if len(b) else np.zeros(0)
    primal = float(max(0.0, -slack.min())) if len(b) else 0.0
    grad = problem.quad_diag * x
    act = np.flatnonzero(slack <= ACTIVE_TOL * (1.0 + np.abs(b))) if len(b) else np.zeros(0, int)
    if act.size:
        lam, _ = nnls(A[act].T, grad)
        stat = float(np.max(np.abs(grad - A[act].T @ lam)))
        comp = float(np.max(np.abs(lam * slack[act])))
    else:
        stat = float(np.max(np.abs(grad))) if grad.size else 0.0
        comp = 0.0
    return max(primal, stat, comp)
