"""Brute-force checks of the constrained-learning duality claims.

Everything here works on finite grids: a problem is a list of candidate
parameter vectors with cached objective and constraint values, so
primal optima, dual optima, perturbation curves, and saddle points can
be computed by exhaustive enumeration and compared against the
iterative machinery.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import constraints as cons
from . import transforms


class InfeasibleError(ValueError):
    """No grid point satisfies every constraint at the given margin."""


class VerificationError(AssertionError):
    """A brute-force check contradicted the claimed inequality."""


@dataclass(frozen=True)
class ConstrainedProblemSpec:
    """A finite constrained problem: min R(theta) s.t. L_e(theta) <= gamma.

    `thetas` is a (n_grid, dim) array of candidate parameter vectors,
    `R` their objective values, `L` a (n_grid, n_envs) array of
    constraint values.
    """

    thetas: np.ndarray
    R: np.ndarray
    L: np.ndarray
    gamma: float = 0.0

    def __post_init__(self):
        thetas = np.atleast_2d(np.asarray(self.thetas, dtype=np.float64))
        R = np.asarray(self.R, dtype=np.float64).reshape(-1)
        L = np.atleast_2d(np.asarray(self.L, dtype=np.float64))
        if L.shape[0] != R.shape[0] or thetas.shape[0] != R.shape[0]:
            raise ValueError("grid, objective, and constraint sizes differ")
        if R.size == 0:
            raise ValueError("parameter grid must be non-empty")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(L))
                and np.all(np.isfinite(thetas))):
            raise ValueError("cached values must be finite")
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "L", L)

    @property
    def n_envs(self) -> int:
        return self.L.shape[1]


@dataclass(frozen=True)
class GapReport:
    P_star: float
    D_star: float
    gap: float
    feasible: bool
    theta_witness: np.ndarray
    lam_witness: np.ndarray

    def __post_init__(self):
        if self.feasible and self.gap < -1e-9:
            raise VerificationError(
                f"weak duality violated: gap {self.gap}")

    def to_text(self) -> str:
        lines = [
            f"P_star={self.P_star!r}",
            f"D_star={self.D_star!r}",
            f"gap={self.gap!r}",
            f"feasible={str(self.feasible).lower()}",
            "theta_witness=" + " ".join(
                repr(float(v)) for v in np.atleast_1d(self.theta_witness)),
            "lam_witness=" + " ".join(
                repr(float(v)) for v in np.atleast_1d(self.lam_witness)),
        ]
        return "\n".join(lines) + "\n"


def default_lambda_grid(lam_max: float = 10.0,
                        step: float = 1e-2) -> np.ndarray:
    return np.arange(0.0, lam_max + step / 2, step)


# -- enumeration solvers ------------------------------------------------------

def solve_primal_grid(spec: ConstrainedProblemSpec, gamma: float):
    """Exhaustive min of R over the feasible set {L_e <= gamma for all e}."""
    feasible = np.all(spec.L <= gamma, axis=1)
    if not np.any(feasible):
        raise InfeasibleError(
            f"no grid point is feasible at margin {gamma}")
    masked = np.where(feasible, spec.R, np.inf)
    idx = int(np.argmin(masked))
    return float(spec.R[idx]), spec.thetas[idx]


def solve_dual_grid(spec: ConstrainedProblemSpec, gamma: float,
                    lam_grid: np.ndarray):
    """Grid max over lambda >= 0 of min over theta of the Lagrangian.

    The Lagrangian is R(theta) + sum_e lambda(e) * (L_e(theta) - gamma);
    the lambda grid is applied per environment (cartesian product).
    """
    lam_grid = np.asarray(lam_grid, dtype=np.float64).reshape(-1)
    if lam_grid.size == 0 or np.any(lam_grid < 0.0):
        raise ValueError("lambda grid must be non-empty and non-negative")
    slack = spec.L - gamma  # (n_grid, n_envs)
    n_envs = spec.n_envs
    best_val = -np.inf
    best_lam = np.zeros(n_envs)
    # enumerate lambda combinations in chunks to bound memory
    combos = _cartesian_power(lam_grid, n_envs)
    chunk = max(1, int(2_000_000 // max(1, spec.R.size)))
    for start in range(0, combos.shape[0], chunk):
        block = combos[start:start + chunk]
        vals = spec.R[None, :] + block @ slack.T
        mins = vals.min(axis=1)
        k = int(np.argmax(mins))
        if mins[k] > best_val:
            best_val = float(mins[k])
            best_lam = block[k].copy()
    return best_val, best_lam


def _cartesian_power(grid: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return grid[:, None]
    mesh = np.meshgrid(*([grid] * n), indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def gap_report(spec: ConstrainedProblemSpec, gamma: float,
               lam_grid: np.ndarray | None = None) -> GapReport:
    lam_grid = default_lambda_grid() if lam_grid is None else lam_grid
    try:
        P, theta = solve_primal_grid(spec, gamma)
        feasible = True
    except InfeasibleError:
        P, theta, feasible = np.inf, spec.thetas[0], False
    D, lam = solve_dual_grid(spec, gamma, lam_grid)
    return GapReport(float(P), float(D), float(P - D), feasible,
                     np.atleast_1d(theta), np.atleast_1d(lam))


# -- perturbation and sandwich ------------------------------------------------

def perturbation_curve(spec: ConstrainedProblemSpec, gammas,
                       lam_grid: np.ndarray | None = None) -> list:
    """P_star per margin, with monotonicity and zero-margin checks.

    Verifies the curve is non-increasing in gamma, that the value at
    gamma = 0 (when present) equals the best exactly-invariant grid
    point, and the sensitivity bound P(0) - P(gamma) <= gamma * |lam|_1
    using the dual witness at gamma = 0.
    """
    gammas = list(gammas)
    if any(g < 0 for g in gammas) or gammas != sorted(gammas):
        raise ValueError("margins must be sorted ascending and >= 0")
    values = [solve_primal_grid(spec, g)[0] for g in gammas]
    for a, b in zip(values, values[1:]):
        if b > a + 1e-12:
            raise VerificationError("perturbation curve increased in gamma")
    if gammas and gammas[0] == 0.0:
        invariant = np.all(spec.L == 0.0, axis=1)
        if np.any(invariant):
            exact = float(np.min(spec.R[invariant]))
            if abs(values[0] - exact) > 1e-12:
                raise VerificationError(
                    "zero-margin optimum differs from the exactly-"
                    "invariant optimum")
        lam_grid = default_lambda_grid() if lam_grid is None else lam_grid
        _, lam0 = solve_dual_grid(spec, 0.0, lam_grid)
        norm = float(np.abs(lam0).sum())
        grid_slack = _grid_slack(spec)
        for g, v in zip(gammas, values):
            if values[0] - v > g * norm + grid_slack:
                raise VerificationError(
                    "sensitivity bound violated at margin "
                    f"{g}: drop {values[0] - v}, bound {g * norm}")
    return values


def _grid_slack(spec: ConstrainedProblemSpec) -> float:
    # local objective variation between neighboring grid points
    if spec.R.size < 2:
        return 1e-9
    return float(np.max(np.abs(np.diff(spec.R)))) + 1e-9


def curve_csv(gammas, values) -> str:
    buf = io.StringIO()
    buf.write("gamma,P_star\n")
    for g, v in zip(gammas, values):
        buf.write(f"{g:.17g},{v:.17g}\n")
    return buf.getvalue()


@dataclass(frozen=True)
class SandwichReport:
    P_fine: float
    D_coarse: float
    lower_bound_ok: bool
    upper_gap: float


def parameterization_sandwich(spec_fine: ConstrainedProblemSpec,
                              spec_coarse: ConstrainedProblemSpec,
                              gamma: float,
                              lam_grid: np.ndarray | None = None
                              ) -> SandwichReport:
    """Dual over a coarse subclass upper-bounds the fine primal optimum.

    The coarse grid must be a subset of the fine grid; the report
    carries the (unasserted) upper gap alongside the verified lower
    bound P_fine <= D_coarse.
    """
    _require_subgrid(spec_coarse, spec_fine)
    lam_grid = default_lambda_grid() if lam_grid is None else lam_grid
    P, _ = solve_primal_grid(spec_fine, gamma)
    D, _ = solve_dual_grid(spec_coarse, gamma, lam_grid)
    # both enumerations are grid approximations; allow resolution slack
    # from the objective grid and the lambda grid
    lam_step = float(np.min(np.diff(np.unique(lam_grid)))) \
        if lam_grid.size > 1 else 0.0
    tol = _grid_slack(spec_fine) + lam_step * float(
        np.max(np.abs(spec_fine.L - gamma))) + 1e-9
    ok = D >= P - tol
    if not ok:
        raise VerificationError(
            f"coarse dual {D} fell below the fine primal {P}")
    return SandwichReport(float(P), float(D), ok, float(D - P))


def _require_subgrid(coarse, fine):
    fine_rows = {tuple(row) for row in fine.thetas}
    for row in coarse.thetas:
        if tuple(row) not in fine_rows:
            raise ValueError("coarse grid is not a subset of the fine grid")


# -- empirical gap decay ------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalPopulation:
    """Per-example losses/constraints of every grid predictor.

    `loss_matrix` has one row per population example and one column per
    grid point; `cons_matrix` adds a trailing environment axis.
    Averaging rows yields the population problem; averaging a sampled
    subset yields an empirical problem on the same grid.
    """

    thetas: np.ndarray
    loss_matrix: np.ndarray  # (n_pop, n_grid)
    cons_matrix: np.ndarray  # (n_pop, n_grid, n_envs)
    gamma: float

    def __post_init__(self):
        if self.loss_matrix.shape[0] != self.cons_matrix.shape[0]:
            raise ValueError("population sizes differ")
        if self.loss_matrix.shape[1] != self.cons_matrix.shape[1]:
            raise ValueError("grid sizes differ")

    @property
    def n_pop(self) -> int:
        return self.loss_matrix.shape[0]

    def problem(self, rows=None) -> ConstrainedProblemSpec:
        loss = self.loss_matrix if rows is None else self.loss_matrix[rows]
        con = self.cons_matrix if rows is None else self.cons_matrix[rows]
        return ConstrainedProblemSpec(
            self.thetas, loss.mean(axis=0), con.mean(axis=0), self.gamma)


def empirical_gap_experiment(pop: EmpiricalPopulation, n_list, trials: int,
                             seed: int,
                             lam_grid: np.ndarray | None = None) -> list:
    """Mean |D_star - D_star_N| per sample size N, decreasing in N.

    Samples are drawn without replacement from the fixed population;
    raises if the mean deviation fails to decrease from the smallest to
    the largest N.
    """
    n_list = list(n_list)
    if n_list != sorted(n_list):
        raise ValueError("sample sizes must be ascending")
    if trials < 10:
        raise ValueError("need at least 10 trials")
    if n_list[-1] > pop.n_pop:
        raise ValueError("sample size exceeds the population")
    lam_grid = default_lambda_grid() if lam_grid is None else lam_grid
    D_pop, _ = solve_dual_grid(pop.problem(), pop.gamma, lam_grid)
    rng = np.random.default_rng(seed)
    means = []
    for n in n_list:
        devs = []
        for _ in range(trials):
            rows = rng.choice(pop.n_pop, size=n, replace=False)
            D_n, _ = solve_dual_grid(pop.problem(rows), pop.gamma, lam_grid)
            devs.append(abs(D_pop - D_n))
        means.append(float(np.mean(devs)))
    for a, b in zip(means, means[1:]):
        if not b < a:
            raise VerificationError(
                f"empirical gap did not decrease: {means}")
    return means


# -- saddle-point checks ------------------------------------------------------

@dataclass(frozen=True)
class SlacknessReport:
    residual: float
    lam_witness: np.ndarray
    theta_witness: np.ndarray
    ok: bool


def complementary_slackness_check(spec: ConstrainedProblemSpec,
                                  gamma: float,
                                  lam_grid: np.ndarray | None = None,
                                  tol: float = 1e-3) -> SlacknessReport:
    """|sum_e lambda(e) * (L_e(theta) - gamma)| at the grid saddle point."""
    lam_grid = default_lambda_grid() if lam_grid is None else lam_grid
    _, theta = solve_primal_grid(spec, gamma)
    _, lam = solve_dual_grid(spec, gamma, lam_grid)
    idx = int(np.argmin(np.abs(spec.thetas - theta).sum(axis=1)))
    residual = float(abs(np.dot(lam, spec.L[idx] - gamma)))
    return SlacknessReport(residual, lam, theta, residual <= tol)


@dataclass(frozen=True)
class ScheduleReport:
    gap: float
    T: int
    P_star: float
    lam_final: np.ndarray
    lagrangian_final: float


def theorem2_schedule_check(spec: ConstrainedProblemSpec, kappa: float,
                            eta: float, B: float) -> ScheduleReport:
    """Exact-argmin primal-dual for the prescribed number of steps.

    The primal player returns a grid argmin of the Lagrangian at the
    current dual weights; the dual player ascends with step eta for
    T = ceil(1 / (2 eta kappa)) + 1 steps.  Reports the final
    Lagrangian's distance to the enumerated primal optimum.
    """
    if kappa <= 0 or B <= 0:
        raise ValueError("kappa and B must be positive")
    bound = 2.0 * kappa / (spec.n_envs * B * B)
    if eta > bound + 1e-15:
        raise ValueError(
            f"dual step {eta} exceeds its bound {bound}")
    P_star, _ = solve_primal_grid(spec, spec.gamma)
    if eta > 0:
        T = int(np.ceil(1.0 / (2.0 * eta * kappa))) + 1
    else:
        T = int(np.ceil(1.0 / (2.0 * 1e-3 * kappa))) + 1
    lam = np.zeros(spec.n_envs)
    slack = spec.L - spec.gamma
    idx = 0
    for _ in range(T):
        idx = int(np.argmin(spec.R + slack @ lam))
        lam = np.maximum(lam + eta * slack[idx], 0.0)
    lagrangian = float(spec.R[idx] + np.dot(lam, slack[idx]))
    return ScheduleReport(abs(P_star - lagrangian), T, float(P_star),
                          lam, lagrangian)


# -- invariance measurement ---------------------------------------------------

@dataclass(frozen=True)
class InvarianceSummary:
    values: np.ndarray
    median: float
    hist_counts: np.ndarray
    hist_edges: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("example,distreg\n")
        for i, v in enumerate(self.values):
            buf.write(f"{i},{v:.17g}\n")
        return buf.getvalue()


def measure_g_invariance(p, data, G, m: cons.DistanceMetric,
                         samples_per_point: int, seed: int = 0,
                         bins: int = 20) -> InvarianceSummary:
    """Per-example distance to fresh transformed counterparts.

    Each example is paired with `samples_per_point` freshly sampled
    environment codes; its value is the mean distance over those pairs.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    if samples_per_point < 1:
        raise ValueError("need at least one sample per point")
    rng = np.random.default_rng(seed)
    totals = np.zeros(len(data))
    for _ in range(samples_per_point):
        Xt = transforms.generate_batch(G, data.X, rng)
        totals += cons.per_example_dist(p, data.X, Xt, m)
    values = totals / samples_per_point
    counts, edges = np.histogram(values, bins=bins)
    return InvarianceSummary(values, float(np.median(values)),
                             counts, edges)


# -- instance builders --------------------------------------------------------

def convex_1d_instance(step: float = 1e-3,
                       gamma: float = 0.1) -> ConstrainedProblemSpec:
    """min theta^2 subject to 0.5 - theta <= gamma over [-1, 1]."""
    thetas = np.arange(-1.0, 1.0 + step / 2, step)
    return ConstrainedProblemSpec(
        thetas[:, None], thetas ** 2, (0.5 - thetas)[:, None], gamma)


def random_spec(rng: np.random.Generator, n_grid: int = 50,
                n_envs: int = 2, gamma: float = 0.5
                ) -> ConstrainedProblemSpec:
    """An arbitrary finite problem with non-negative constraints."""
    thetas = rng.uniform(-1, 1, size=(n_grid, 1))
    R = rng.uniform(0, 5, size=n_grid)
    L = rng.uniform(0, 2, size=(n_grid, n_envs))
    L[rng.integers(0, n_grid)] = 0.0  # keep at least one feasible point
    return ConstrainedProblemSpec(thetas, R, L, gamma)


def random_convex_spec(rng: np.random.Generator, n_grid: int = 201,
                       gamma: float | None = None
                       ) -> ConstrainedProblemSpec:
    """A sampled 1-d convex instance: quadratic R, affine constraint."""
    thetas = np.linspace(-1.0, 1.0, n_grid)
    center = rng.uniform(-0.5, 0.5)
    a = rng.uniform(0.5, 2.0)
    R = a * (thetas - center) ** 2
    slope = rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0])
    offset = rng.uniform(-0.3, 0.3)
    L = slope * thetas + offset
    if gamma is None:
        gamma = float(L.min() + rng.uniform(0.3, 0.9) * (L.max() - L.min()))
    return ConstrainedProblemSpec(thetas[:, None], R, L[:, None], gamma)
