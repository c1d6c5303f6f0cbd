"""
Linear programming and branch-and-bound machinery.

LPs are solved with the HiGHS dual simplex through scipy.optimize.linprog.
The branch and bound on top of it is a small best-bound search over binary
variables with two hooks:

- on_incumbent inspects every integral solution before it is accepted and may
  return variables to fix to 0. Fixes are global and permanent, and the
  current incumbent objective is recomputed under them.
- on_relaxation sees the (possibly fractional) LP solution of every node and
  may propose an integral assignment to try as an incumbent.

All models are maximization problems.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Set, Tuple, Union
import heapq
import itertools
import logging
import math
import time

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .constants import SEARCH_SETTINGS, TOLERANCES

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when an LP cannot be solved reliably."""


class Relation(str, Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


class SearchStatus(str, Enum):
    PROVED_OPTIMAL = "proved_optimal"
    STOPPED = "stopped"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class Constraint:
    coeffs: Dict[int, float]
    relation: Relation
    rhs: float
    name: Optional[str] = None


@dataclass(frozen=True, eq=False)
class _LpMatrices:
    c: np.ndarray
    a_ub: Optional[sparse.csr_matrix]
    b_ub: Optional[np.ndarray]
    a_eq: Optional[sparse.csr_matrix]
    b_eq: Optional[np.ndarray]


class LinearProgram:
    """
    Maximization LP built incrementally.

    Variables carry [lb, ub] bounds (infinite allowed); constraints are sparse
    coefficient maps with a relation and a finite right-hand side.
    """

    def __init__(self) -> None:
        self._lower: List[float] = []
        self._upper: List[float] = []
        self.names: List[str] = []
        self.constraints: List[Constraint] = []
        self.objective: Dict[int, float] = {}
        self._matrices: Optional[_LpMatrices] = None

    @property
    def num_vars(self) -> int:
        return len(self._lower)

    def add_variable(self, lb: float = 0.0, ub: float = math.inf, name: Optional[str] = None) -> int:
        if math.isnan(lb) or math.isnan(ub):
            raise ValueError(f"Variable bounds must not be NaN: [{lb}, {ub}]")
        if lb > ub:
            raise ValueError(f"Variable lower bound {lb} exceeds upper bound {ub}")
        index = self.num_vars
        self._lower.append(float(lb))
        self._upper.append(float(ub))
        self.names.append(name if name is not None else f"v{index}")
        self._matrices = None
        return index

    def add_constraint(
        self,
        coeffs: Dict[int, float],
        relation: Union[Relation, str],
        rhs: float,
        name: Optional[str] = None,
    ) -> int:
        relation = Relation(relation)
        if not math.isfinite(rhs):
            raise ValueError(f"Constraint right-hand side must be finite, got {rhs}")
        clean = {}
        for index, value in coeffs.items():
            if not 0 <= index < self.num_vars:
                raise ValueError(f"Coefficient index {index} out of range ({self.num_vars} variables)")
            if not math.isfinite(value):
                raise ValueError(f"Coefficient for variable {index} is not finite")
            if value != 0.0:
                clean[int(index)] = float(value)
        self.constraints.append(Constraint(clean, relation, float(rhs), name))
        self._matrices = None
        return len(self.constraints) - 1

    def set_objective(self, coeffs: Dict[int, float]) -> None:
        for index, value in coeffs.items():
            if not 0 <= index < self.num_vars:
                raise ValueError(f"Objective index {index} out of range")
            if not math.isfinite(value):
                raise ValueError(f"Objective coefficient for variable {index} is not finite")
        self.objective = {int(i): float(v) for i, v in coeffs.items() if v != 0.0}
        self._matrices = None

    def var_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.array(self._lower), np.array(self._upper)

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.num_vars)
        for index, value in self.objective.items():
            c[index] = value
        return c

    def objective_value(self, values: np.ndarray) -> float:
        return float(sum(v * values[i] for i, v in self.objective.items()))

    def matrices(self) -> _LpMatrices:
        if self._matrices is None:
            self._matrices = self._build_matrices()
        return self._matrices

    def _build_matrices(self) -> _LpMatrices:
        ub_rows: List[Tuple[Dict[int, float], float]] = []
        eq_rows: List[Tuple[Dict[int, float], float]] = []
        for con in self.constraints:
            if con.relation is Relation.LE:
                ub_rows.append((con.coeffs, con.rhs))
            elif con.relation is Relation.GE:
                ub_rows.append(({i: -v for i, v in con.coeffs.items()}, -con.rhs))
            else:
                eq_rows.append((con.coeffs, con.rhs))

        def assemble(rows: List[Tuple[Dict[int, float], float]]) -> Tuple[Optional[sparse.csr_matrix], Optional[np.ndarray]]:
            if not rows:
                return None, None
            data, indices, indptr = [], [], [0]
            for coeffs, _ in rows:
                for col in sorted(coeffs):
                    indices.append(col)
                    data.append(coeffs[col])
                indptr.append(len(indices))
            matrix = sparse.csr_matrix(
                (np.array(data, dtype=np.float64), np.array(indices, dtype=np.int64), np.array(indptr)),
                shape=(len(rows), self.num_vars),
            )
            return matrix, np.array([rhs for _, rhs in rows])

        a_ub, b_ub = assemble(ub_rows)
        a_eq, b_eq = assemble(eq_rows)
        return _LpMatrices(self.objective_vector(), a_ub, b_ub, a_eq, b_eq)

    def max_violation(
        self,
        values: np.ndarray,
        lower: Optional[np.ndarray] = None,
        upper: Optional[np.ndarray] = None,
    ) -> float:
        """Largest violation of bounds and constraints, scaled by 1 + |rhs|."""
        if lower is None or upper is None:
            lower, upper = self.var_bounds()
        worst = float(max(np.max(lower - values, initial=0.0), np.max(values - upper, initial=0.0)))
        m = self.matrices()
        if m.a_ub is not None:
            excess = (m.a_ub @ values - m.b_ub) / (1.0 + np.abs(m.b_ub))
            worst = max(worst, float(np.max(excess, initial=0.0)))
        if m.a_eq is not None:
            residual = np.abs(m.a_eq @ values - m.b_eq) / (1.0 + np.abs(m.b_eq))
            worst = max(worst, float(np.max(residual, initial=0.0)))
        return worst


@dataclass(eq=False)
class MilpModel:
    """LP plus the set of binary variables."""
    lp: LinearProgram
    integer_vars: FrozenSet[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        self.integer_vars = frozenset(int(i) for i in self.integer_vars)
        lower, upper = self.lp.var_bounds()
        for index in self.integer_vars:
            if not 0 <= index < self.lp.num_vars:
                raise ValueError(f"Integer variable {index} out of range")
            if lower[index] < 0 or upper[index] > 1:
                raise ValueError(
                    f"Integer variable {self.lp.names[index]} must be binary, "
                    f"bounds are [{lower[index]}, {upper[index]}]"
                )


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: LpStatus
    values: Optional[np.ndarray] = None
    objective: float = math.nan


@dataclass
class SearchCallbacks:
    """
    Hooks invoked on the search thread; they must not re-enter the solver.

    Attributes:
        on_incumbent: Sees every integral solution; returns variables to fix to 0
        on_relaxation: Sees every fractional node solution; returns a candidate assignment
    """
    on_incumbent: Optional[Callable[[np.ndarray], Optional[Sequence[int]]]] = None
    on_relaxation: Optional[Callable[[np.ndarray], Optional[np.ndarray]]] = None


@dataclass
class SearchConfig:
    time_limit: Optional[float] = SEARCH_SETTINGS["TIME_LIMIT_S"]
    node_limit: Optional[int] = SEARCH_SETTINGS["NODE_LIMIT"]
    objective_cutoff: Optional[float] = None
    gap: float = TOLERANCES["GAP"]

    def __post_init__(self) -> None:
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError(f"time_limit must be positive, got {self.time_limit}")
        if self.node_limit is not None and self.node_limit < 0:
            raise ValueError(f"node_limit must be non-negative, got {self.node_limit}")
        if self.gap < 0:
            raise ValueError(f"gap must be non-negative, got {self.gap}")


@dataclass(eq=False)
class SearchResult:
    status: SearchStatus
    best_objective: float
    best_values: Optional[np.ndarray]
    best_bound: float
    incumbents_found: int
    nodes_explored: int
    wall_time: float
    fixed_vars: FrozenSet[int] = field(default_factory=frozenset)


def solve_lp(
    lp: LinearProgram,
    lower: Optional[np.ndarray] = None,
    upper: Optional[np.ndarray] = None,
) -> LpSolution:
    """
    Solve the LP, optionally with overriding variable bounds.

    Numerical trouble inside HiGHS is reported as NUMERICAL_FAILURE, never
    as a wrong optimum.
    """
    if lower is None or upper is None:
        lower, upper = lp.var_bounds()
    if np.any(lower > upper):
        return LpSolution(LpStatus.INFEASIBLE)
    m = lp.matrices()
    bounds = [
        (None if math.isinf(lb) else lb, None if math.isinf(ub) else ub)
        for lb, ub in zip(lower.tolist(), upper.tolist())
    ]
    res = linprog(
        -m.c,
        A_ub=m.a_ub,
        b_ub=m.b_ub,
        A_eq=m.a_eq,
        b_eq=m.b_eq,
        bounds=bounds,
        method=SEARCH_SETTINGS["LP_METHOD"],
        options={
            "primal_feasibility_tolerance": TOLERANCES["LP_FEASIBILITY"],
            "dual_feasibility_tolerance": TOLERANCES["LP_OPTIMALITY"],
            "presolve": True,
        },
    )
    if res.status == 0:
        values = np.asarray(res.x, dtype=np.float64)
        return LpSolution(LpStatus.OPTIMAL, values, float(m.c @ values))
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE)
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED)
    logger.warning(f"LP solve failed with status {res.status}: {res.message}")
    return LpSolution(LpStatus.NUMERICAL_FAILURE)


@dataclass(eq=False)
class _Node:
    lower: np.ndarray
    upper: np.ndarray
    bound: float
    depth: int


class BranchAndBound:
    """
    Best-bound branch and bound over binary variables.

    Nodes are taken by best LP bound, ties by most recently pushed. Branching
    uses the most fractional binary variable, ties by smallest index.
    """

    def __init__(self, model: MilpModel, callbacks: SearchCallbacks, config: SearchConfig):
        self.model = model
        self.lp = model.lp
        self.callbacks = callbacks
        self.config = config
        self.fixed: Set[int] = set()
        self.incumbent_values: Optional[np.ndarray] = None
        self.incumbent_obj = -math.inf
        self.incumbents_found = 0
        self.nodes_explored = 0
        self._heap: List[Tuple[float, int, _Node]] = []
        self._counter = itertools.count()
        self._integer_index = np.array(sorted(model.integer_vars), dtype=np.int64)

    def solve(self) -> SearchResult:
        start = time.perf_counter()
        lower, upper = self.lp.var_bounds()
        self._push(_Node(lower, upper, math.inf, 0))
        status: Optional[SearchStatus] = None
        while self._heap:
            if self._limit_reached(start):
                status = SearchStatus.STOPPED
                break
            _, _, node = heapq.heappop(self._heap)
            if self._can_prune(node.bound):
                continue
            self._process(node)

        if status is None:
            status = SearchStatus.PROVED_OPTIMAL if self.incumbent_values is not None else SearchStatus.INFEASIBLE
            best_bound = self.incumbent_obj
        else:
            best_bound = max([self.incumbent_obj] + [entry[2].bound for entry in self._heap])
        wall = time.perf_counter() - start
        logger.debug(
            f"Search {status.value}: objective {self.incumbent_obj}, "
            f"{self.nodes_explored} nodes, {self.incumbents_found} incumbents, {wall:.3f}s"
        )
        return SearchResult(
            status=status,
            best_objective=self.incumbent_obj,
            best_values=self.incumbent_values,
            best_bound=best_bound,
            incumbents_found=self.incumbents_found,
            nodes_explored=self.nodes_explored,
            wall_time=wall,
            fixed_vars=frozenset(self.fixed),
        )

    def _push(self, node: _Node) -> None:
        heapq.heappush(self._heap, (-node.bound, -next(self._counter), node))

    def _limit_reached(self, start: float) -> bool:
        if self.config.node_limit is not None and self.nodes_explored >= self.config.node_limit:
            return True
        if self.config.time_limit is not None and time.perf_counter() - start >= self.config.time_limit:
            return True
        return False

    def _can_prune(self, bound: float) -> bool:
        threshold = self.incumbent_obj
        if self.config.objective_cutoff is not None:
            threshold = max(threshold, self.config.objective_cutoff)
        return bound <= threshold + self.config.gap

    def _apply_fixes(self, node: _Node) -> Tuple[np.ndarray, np.ndarray]:
        lower, upper = node.lower.copy(), node.upper.copy()
        if self.fixed:
            index = np.fromiter(self.fixed, dtype=np.int64)
            upper[index] = 0.0
            lower[index] = np.minimum(lower[index], 0.0)
        return lower, upper

    def _most_fractional(self, values: np.ndarray) -> Optional[int]:
        if self._integer_index.size == 0:
            return None
        candidates = values[self._integer_index]
        distance = np.abs(candidates - np.round(candidates))
        best = int(np.argmax(distance))
        if distance[best] <= TOLERANCES["INTEGRALITY"]:
            return None
        return int(self._integer_index[best])

    def _process(self, node: _Node) -> None:
        lower, upper = self._apply_fixes(node)
        solution = solve_lp(self.lp, lower, upper)
        self.nodes_explored += 1
        if solution.status is LpStatus.INFEASIBLE:
            return
        if solution.status is LpStatus.UNBOUNDED:
            raise SolverError("LP relaxation is unbounded; branch and bound needs bounded relaxations")
        if solution.status is LpStatus.NUMERICAL_FAILURE:
            raise SolverError(f"LP relaxation failed numerically at depth {node.depth}")
        assert solution.values is not None
        objective = solution.objective
        if self._can_prune(objective):
            return

        fixes_before = len(self.fixed)
        branch_var = self._most_fractional(solution.values)
        if branch_var is None:
            self._inspect(solution.values)
            if len(self.fixed) > fixes_before:
                # stale under the new fixes
                self._push(replace(node, bound=objective))
            return

        if self.callbacks.on_relaxation is not None:
            candidate = self.callbacks.on_relaxation(solution.values.copy())
            if candidate is not None:
                self._offer_candidate(np.asarray(candidate, dtype=np.float64))
            if len(self.fixed) > fixes_before:
                self._push(replace(node, bound=objective))
                return
            if self._can_prune(objective):
                return

        value = solution.values[branch_var]
        down_upper = node.upper.copy()
        down_upper[branch_var] = math.floor(value)
        up_lower = node.lower.copy()
        up_lower[branch_var] = math.ceil(value)
        self._push(_Node(node.lower, down_upper, objective, node.depth + 1))
        self._push(_Node(up_lower, node.upper, objective, node.depth + 1))

    def _offer_candidate(self, candidate: np.ndarray) -> None:
        if candidate.shape != (self.lp.num_vars,):
            logger.debug(f"Dropping candidate of shape {candidate.shape}")
            return
        adjusted = self._zero_fixed(candidate)
        ints = adjusted[self._integer_index]
        if np.any(np.abs(ints - np.round(ints)) > TOLERANCES["INTEGRALITY"]):
            logger.debug("Dropping non-integral candidate")
            return
        violation = self.lp.max_violation(adjusted)
        if violation > TOLERANCES["CANDIDATE"]:
            logger.debug(f"Dropping infeasible candidate (violation {violation:.3g})")
            return
        self._inspect(candidate)

    def _zero_fixed(self, values: np.ndarray) -> np.ndarray:
        adjusted = values.copy()
        if self.fixed:
            adjusted[np.fromiter(self.fixed, dtype=np.int64)] = 0.0
        return adjusted

    def _inspect(self, values: np.ndarray) -> None:
        self.incumbents_found += 1
        if self.callbacks.on_incumbent is not None:
            requested = self.callbacks.on_incumbent(values.copy()) or []
            new = {int(i) for i in requested} - self.fixed
            for index in new:
                if not 0 <= index < self.lp.num_vars:
                    raise ValueError(f"on_incumbent returned invalid variable index {index}")
            if new:
                self.fixed |= new
                logger.debug(f"Fixed {len(new)} variables to 0 ({len(self.fixed)} in total)")
                if self.incumbent_values is not None:
                    self.incumbent_values = self._zero_fixed(self.incumbent_values)
                    self.incumbent_obj = self.lp.objective_value(self.incumbent_values)
        adjusted = self._zero_fixed(values)
        objective = self.lp.objective_value(adjusted)
        if objective > self.incumbent_obj:
            self.incumbent_obj = objective
            self.incumbent_values = adjusted


def solve_milp(
    model: MilpModel,
    callbacks: Optional[SearchCallbacks] = None,
    config: Optional[SearchConfig] = None,
) -> SearchResult:
    """
    Solve a MILP by branch and bound over LP relaxations.

    Args:
        model: Model with binary integer variables
        callbacks: Optional incumbent/relaxation hooks
        config: Time, node and cutoff limits

    Returns:
        SearchResult: proved_optimal when the best bound under all accumulated
        fixes meets the best fix-adjusted incumbent within the gap

    Raises:
        SolverError: If an LP relaxation fails numerically or is unbounded
    """
    search = BranchAndBound(model, callbacks or SearchCallbacks(), config or SearchConfig())
    return search.solve()


# ---------------------------------------------------------------------------
# LP-format export
# ---------------------------------------------------------------------------

def _format_expr(coeffs: Dict[int, float], names: List[str]) -> str:
    if not coeffs:
        return "0 " + names[0] if names else "0"
    terms = []
    for index in sorted(coeffs):
        value = coeffs[index]
        sign = "-" if value < 0 else "+"
        terms.append(f"{sign} {abs(value):.17g} {names[index]}")
    return " ".join(terms)


def to_lp_format(model: MilpModel) -> str:
    """Render the model in CPLEX LP format for cross-checking with external solvers."""
    lp = model.lp
    names = lp.names
    lines = ["\\ stablenet model", "Maximize", f" obj: {_format_expr(lp.objective, names)}", "Subject To"]
    for k, con in enumerate(lp.constraints):
        label = con.name or f"c{k}"
        lines.append(f" {label}: {_format_expr(con.coeffs, names)} {con.relation.value} {con.rhs:.17g}")
    lines.append("Bounds")
    lower, upper = lp.var_bounds()
    for index, name in enumerate(names):
        lb, ub = lower[index], upper[index]
        if math.isinf(lb) and math.isinf(ub):
            lines.append(f" {name} free")
        else:
            lb_text = "-inf" if math.isinf(lb) else f"{lb:.17g}"
            ub_text = "+inf" if math.isinf(ub) else f"{ub:.17g}"
            lines.append(f" {lb_text} <= {name} <= {ub_text}")
    if model.integer_vars:
        lines.append("Binaries")
        lines.append(" " + " ".join(names[i] for i in sorted(model.integer_vars)))
    lines.append("End")
    return "\n".join(lines) + "\n"


def write_lp(model: MilpModel, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(to_lp_format(model))
