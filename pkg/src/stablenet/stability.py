"""
Identification of stable neurons.

The main entry point is run_isa, which finds every stably active and stably
inactive hidden neuron of a network over an input domain:

1. The interval bounds seed the sets, then preprocessing evaluates a dataset
   and keeps, per hidden layer, the set P of neurons never seen active and
   the set Q of neurons never seen inactive.
2. A single MILP maximizes the number of still-unobserved states an input can
   produce (sum of p over P plus q over Q, with p <= z and q <= 1 - z).
3. During branch and bound every incumbent removes the states it exhibits
   from P/Q and their p/q variables are fixed to 0 for the rest of the
   search. LP relaxations at each node are turned into incumbents by
   evaluating the network on their input part.
4. Once the optimum is proved to be 0, the remaining members of P are stably
   inactive and those of Q are stably active. States an incumbent reached only
   at y = 0 are settled afterwards with one exact extreme each. A neuron in
   both sets is identically 0 and is reported inactive.

run_baseline (two MILPs per neuron) and brute_force_oracle (enumeration of
activation patterns) are slower references used for validation and
benchmarking.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Set, Tuple
import logging
import time

import numpy as np

from .bounds import BoundClassification, LayerBounds, bounds_table, classify_by_bounds, compute_bounds
from .constants import ISA_SETTINGS, ORACLE_SETTINGS, REPORT_SCHEMA_VERSION, SEARCH_SETTINGS, TOLERANCES
from .netio import Dataset, InputDomain, Network, forward, forward_batch
from .optcore import (
    LinearProgram,
    LpStatus,
    MilpModel,
    Relation,
    SearchCallbacks,
    SearchConfig,
    SearchStatus,
    SolverError,
    solve_lp,
    solve_milp,
)

logger = logging.getLogger(__name__)

VarKey = Tuple[object, ...]
NeuronKey = Tuple[int, int]
WitnessKey = Tuple[str, int, int]


class OracleTooLargeError(ValueError):
    """Raised when pattern enumeration is requested for too many neurons."""


class IsaMode(str, Enum):
    SINGLE_CALL = "single_call"
    SEQUENTIAL = "sequential"
    PREPROCESS_ONLY = "preprocess_only"


@dataclass
class StabilitySets:
    """
    Unobserved activation states.

    Attributes:
        p_sets: Per hidden layer, neurons never observed active
        q_sets: Per hidden layer, neurons never observed inactive
        witnesses: ("active" | "inactive", layer, neuron) -> input that exhibited the state
        boundary: ("p" | "q", layer, neuron) dropped on an incumbent that sat on
            the kink (|y| within GAP); each still needs an exact extreme
    """
    p_sets: List[Set[int]]
    q_sets: List[Set[int]]
    witnesses: Dict[WitnessKey, np.ndarray] = field(default_factory=dict)
    boundary: Set[Tuple[str, int, int]] = field(default_factory=set)

    @classmethod
    def unobserved(cls, widths: List[int]) -> "StabilitySets":
        return cls([set(range(n)) for n in widths], [set(range(n)) for n in widths])

    @classmethod
    def from_bounds(cls, classification: BoundClassification, net: Network, point: np.ndarray) -> "StabilitySets":
        """
        Start from what the interval bounds already decide.

        hi <= 0 rules the active state out, so the neuron leaves Q. lo >= 0
        only rules out y < 0, so the neuron leaves P once the point shows
        y > GAP there.
        """
        widths = net.hidden_widths
        sets = cls.unobserved(widths)
        traces = forward(net, point)
        for layer in range(len(widths)):
            shows_active, shows_inactive = shown_states(traces[layer].pre)
            for neuron in classification.stable_inactive[layer]:
                sets.q_sets[layer].discard(neuron)
                if shows_inactive[neuron]:
                    sets.witnesses[("inactive", layer, neuron)] = np.array(point, dtype=np.float64)
            for neuron in classification.stable_active[layer]:
                if shows_active[neuron]:
                    sets.p_sets[layer].discard(neuron)
                    sets.witnesses[("active", layer, neuron)] = np.array(point, dtype=np.float64)
        return sets

    def copy(self) -> "StabilitySets":
        return StabilitySets(
            [set(s) for s in self.p_sets],
            [set(s) for s in self.q_sets],
            dict(self.witnesses),
            set(self.boundary),
        )

    @property
    def size(self) -> int:
        return sum(len(s) for s in self.p_sets) + sum(len(s) for s in self.q_sets)

    def observe(
        self,
        x0: np.ndarray,
        pres: List[np.ndarray],
        pattern: Optional[List[np.ndarray]] = None,
    ) -> List[Tuple[str, int, int]]:
        """
        Drop the states an evaluated input shows; returns what was dropped.

        pres are the hidden preactivations at x0. A state counts as shown
        when |y| exceeds GAP on the right side. With a MILP pattern, a live
        state whose z claims it without the strict evidence is dropped as well
        and queued in boundary.
        """
        dropped = []
        for layer, pre in enumerate(pres):
            shows_active, shows_inactive = shown_states(pre)
            claimed = pattern[layer] if pattern is not None else None
            for neuron in sorted(self.p_sets[layer]):
                if shows_active[neuron]:
                    self.witnesses[("active", layer, neuron)] = np.array(x0, dtype=np.float64)
                elif claimed is not None and claimed[neuron]:
                    self.boundary.add(("p", layer, neuron))
                else:
                    continue
                self.p_sets[layer].discard(neuron)
                dropped.append(("p", layer, neuron))
            for neuron in sorted(self.q_sets[layer]):
                if shows_inactive[neuron]:
                    self.witnesses[("inactive", layer, neuron)] = np.array(x0, dtype=np.float64)
                elif claimed is not None and not claimed[neuron]:
                    self.boundary.add(("q", layer, neuron))
                else:
                    continue
                self.q_sets[layer].discard(neuron)
                dropped.append(("q", layer, neuron))
        return dropped


def shown_states(pre: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    States an evaluation proves: active where y > GAP, inactive where y < -GAP.

    Values within GAP of the kink prove neither. Together with the tie rule
    (a neuron that is both stably active and stably inactive is reported
    inactive) this is the one stability convention used by ISA, the baseline,
    the oracle and preprocessing.
    """
    tol = TOLERANCES["GAP"]
    return pre > tol, pre < -tol


@dataclass(eq=False)
class StabilityMilp:
    """
    MILP instance over which stability is decided.

    Every hidden neuron is encoded with y = w.x + b = x - chi, 0 <= x <= M z,
    0 <= chi <= mu (1 - z), z binary. p-variables exist for P members and
    q-variables for Q members; both are continuous in [0, 1].
    """
    model: MilpModel
    net: Network
    domain: InputDomain
    use_sum_constraint: bool
    var_index: Dict[VarKey, int]
    bounds_used: List[LayerBounds]
    input_vars: List[int]
    z_vars: List[List[int]]
    p_vars: Dict[NeuronKey, int]
    q_vars: Dict[NeuronKey, int]

    def var(self, *key: object) -> int:
        return self.var_index[tuple(key)]


@dataclass
class IsaConfig:
    """
    Settings for run_isa.

    Attributes:
        mode: single_call (one search with lazy fixes), sequential (re-solve
            until the optimum is 0) or preprocess_only (dataset only, uncertified)
        time_limit: Wall-clock limit in seconds for the whole analysis
        use_sum_constraint: Enforce the domain's sum-of-inputs interval
        seed: Seed for the optional random warm-up inputs
        preprocess: Evaluate the dataset before searching
        warm_inputs: Number of random domain points added to preprocessing
    """
    mode: IsaMode = IsaMode(ISA_SETTINGS["MODE"])
    time_limit: float = SEARCH_SETTINGS["TIME_LIMIT_S"]
    use_sum_constraint: bool = ISA_SETTINGS["USE_SUM_CONSTRAINT"]
    seed: int = ISA_SETTINGS["SEED"]
    preprocess: bool = ISA_SETTINGS["PREPROCESS"]
    warm_inputs: int = 0

    def __post_init__(self) -> None:
        self.mode = IsaMode(self.mode)
        if self.time_limit <= 0:
            raise ValueError(f"time_limit must be positive, got {self.time_limit}")
        if self.warm_inputs < 0:
            raise ValueError(f"warm_inputs must be non-negative, got {self.warm_inputs}")


@dataclass(eq=False)
class IsaResult:
    """
    Outcome of run_isa.

    stable_inactive/stable_active are filled only when certified, except in
    preprocess_only mode where they hold the unproven dataset guess. After a
    timeout the remaining candidates are listed in unproven. boundary_checks
    counts the extra per-neuron MILPs spent on states only reached at y = 0.
    """
    mode: IsaMode
    stable_inactive: List[Set[int]]
    stable_active: List[Set[int]]
    unproven: List[Set[int]]
    certified: bool
    solve_calls: int
    nodes: int
    incumbents: int
    wall_time: float
    bounds: List[LayerBounds]
    witnesses: Dict[WitnessKey, np.ndarray] = field(default_factory=dict)
    nonintegral_completions: int = 0
    set_size_history: List[int] = field(default_factory=list)
    preprocessed_size: int = 0
    boundary_checks: int = 0

    @property
    def num_stable(self) -> int:
        return sum(len(s) for s in self.stable_inactive) + sum(len(s) for s in self.stable_active)

    def to_report(self) -> Dict[str, object]:
        return {
            "schema": REPORT_SCHEMA_VERSION,
            "mode": self.mode.value,
            "certified": self.certified,
            "stable_inactive": [sorted(s) for s in self.stable_inactive],
            "stable_active": [sorted(s) for s in self.stable_active],
            "unproven": [sorted(s) for s in self.unproven],
            "solve_calls": self.solve_calls,
            "nodes": self.nodes,
            "incumbents": self.incumbents,
            "boundary_checks": self.boundary_checks,
            "wall_time_ms": round(self.wall_time * 1000.0, 3),
            "bounds": bounds_table(self.bounds),
        }


@dataclass(eq=False)
class BaselineResult:
    """Exact preactivation ranges from two MILPs per neuron."""
    ranges: List[np.ndarray]
    stable_inactive: List[Set[int]]
    stable_active: List[Set[int]]
    unknown: List[Set[int]]
    solve_calls: int
    nodes: int
    wall_time: float


@dataclass(eq=False)
class OracleResult:
    stable_inactive: List[Set[int]]
    stable_active: List[Set[int]]
    feasible_patterns: int
    lp_checks: int


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

def preprocess(net: Network, dataset: Dataset, sets: Optional[StabilitySets] = None) -> StabilitySets:
    """
    Evaluate a dataset and keep the activation states it never shows.

    Args:
        net: Network to evaluate
        dataset: Valid inputs
        sets: Starting sets (for instance seeded from the bounds); a fresh
            all-unobserved pair when omitted

    Returns:
        StabilitySets: P = neurons no row shows active, Q = neurons no row
        shows inactive, with one witness row for each state that was shown.
        An empty dataset leaves the starting sets untouched.
    """
    sets = sets if sets is not None else StabilitySets.unobserved(net.hidden_widths)
    if dataset.is_empty:
        return sets
    _, pres = forward_batch(net, dataset.rows)
    for layer, pre in enumerate(pres[:-1]):
        shows_active, shows_inactive = shown_states(pre)
        for neuron in range(pre.shape[1]):
            hits = np.flatnonzero(shows_active[:, neuron])
            misses = np.flatnonzero(shows_inactive[:, neuron])
            if hits.size and neuron in sets.p_sets[layer]:
                sets.p_sets[layer].discard(neuron)
                sets.witnesses[("active", layer, neuron)] = dataset.rows[hits[0]].copy()
            if misses.size and neuron in sets.q_sets[layer]:
                sets.q_sets[layer].discard(neuron)
                sets.witnesses[("inactive", layer, neuron)] = dataset.rows[misses[0]].copy()
    logger.info(
        f"Preprocessing {len(dataset)} rows left {sum(map(len, sets.p_sets))} never-active and "
        f"{sum(map(len, sets.q_sets))} never-inactive neurons"
    )
    return sets


def preprocessing_error(net: Network, sets: StabilitySets, holdout: Dataset) -> float:
    """
    Fraction of dataset-"stable" neurons that a held-out dataset contradicts.

    This estimates how much a preprocess-only compression would over-remove.
    """
    claimed = sum(len(s) for s in sets.p_sets) + sum(len(s) for s in sets.q_sets)
    if claimed == 0 or holdout.is_empty:
        return 0.0
    _, pres = forward_batch(net, holdout.rows)
    contradicted = 0
    for layer, pre in enumerate(pres[:-1]):
        shows_active, shows_inactive = shown_states(pre)
        contradicted += sum(1 for i in sets.p_sets[layer] if shows_active[:, i].any())
        contradicted += sum(1 for i in sets.q_sets[layer] if shows_inactive[:, i].any())
    return contradicted / claimed


# ---------------------------------------------------------------------------
# MILP encoding
# ---------------------------------------------------------------------------

def _bound_fixings(bounds: List[LayerBounds]) -> Dict[NeuronKey, int]:
    # y == 0 satisfies both z states, so the closed tests leave the feasible set unchanged
    fixings = {}
    for layer, b in enumerate(bounds[:-1]):
        for neuron in np.flatnonzero(b.lo >= 0).tolist():
            fixings[(layer, neuron)] = 1
        for neuron in np.flatnonzero(b.hi <= 0).tolist():
            fixings[(layer, neuron)] = 0
    return fixings


def _encode_network(
    lp: LinearProgram,
    net: Network,
    domain: InputDomain,
    bounds: List[LayerBounds],
    num_layers: int,
    use_sum_constraint: bool,
    fixings: Dict[NeuronKey, int],
) -> Tuple[Dict[VarKey, int], List[int], List[List[int]], List[int]]:
    """Encode the input domain and the first num_layers hidden layers."""
    var_index: Dict[VarKey, int] = {}
    inputs = []
    for j in range(net.input_dim):
        index = lp.add_variable(float(domain.lower[j]), float(domain.upper[j]), f"x0_{j}")
        var_index[("x0", j)] = index
        inputs.append(index)
    if use_sum_constraint and domain.sum_bounds is not None:
        total = {index: 1.0 for index in inputs}
        lp.add_constraint(total, Relation.GE, domain.sum_bounds[0], "sum_lo")
        lp.add_constraint(total, Relation.LE, domain.sum_bounds[1], "sum_hi")

    previous = inputs
    z_vars: List[List[int]] = []
    for layer in range(num_layers):
        weights, bias = net.layers[layer].weights, net.layers[layer].bias
        big_m, big_mu = bounds[layer].big_m, bounds[layer].big_mu
        outputs, zs = [], []
        for i in range(weights.shape[0]):
            y = lp.add_variable(-np.inf, np.inf, f"y_{layer}_{i}")
            x = lp.add_variable(0.0, float(big_m[i]), f"x_{layer}_{i}")
            chi = lp.add_variable(0.0, float(big_mu[i]), f"chi_{layer}_{i}")
            state = fixings.get((layer, i))
            z = lp.add_variable(
                0.0 if state is None else float(state),
                1.0 if state is None else float(state),
                f"z_{layer}_{i}",
            )
            affine = {y: 1.0}
            for j, w in enumerate(weights[i]):
                if w != 0.0:
                    affine[previous[j]] = affine.get(previous[j], 0.0) - float(w)
            lp.add_constraint(affine, Relation.EQ, float(bias[i]), f"pre_{layer}_{i}")
            lp.add_constraint({y: 1.0, x: -1.0, chi: 1.0}, Relation.EQ, 0.0, f"split_{layer}_{i}")
            lp.add_constraint({x: 1.0, z: -float(big_m[i])}, Relation.LE, 0.0, f"on_{layer}_{i}")
            lp.add_constraint({chi: 1.0, z: float(big_mu[i])}, Relation.LE, float(big_mu[i]), f"off_{layer}_{i}")
            for kind, index in (("y", y), ("x", x), ("chi", chi), ("z", z)):
                var_index[(kind, layer, i)] = index
            outputs.append(x)
            zs.append(z)
        z_vars.append(zs)
        previous = outputs
    return var_index, inputs, z_vars, previous


def build_stability_milp(
    net: Network,
    domain: InputDomain,
    sets: StabilitySets,
    bounds: Optional[List[LayerBounds]] = None,
    use_sum_constraint: bool = True,
) -> StabilityMilp:
    """
    Build the joint stability MILP for the current P/Q sets.

    The objective is the sum of p over P members and q over Q members; the
    output layer is not encoded.
    """
    if bounds is None:
        bounds = compute_bounds(net, domain)
    lp = LinearProgram()
    hidden = net.depth - 1
    var_index, inputs, z_vars, _ = _encode_network(
        lp, net, domain, bounds, hidden, use_sum_constraint, _bound_fixings(bounds)
    )
    p_vars: Dict[NeuronKey, int] = {}
    q_vars: Dict[NeuronKey, int] = {}
    for layer in range(hidden):
        for i in sorted(sets.p_sets[layer]):
            p = lp.add_variable(0.0, 1.0, f"p_{layer}_{i}")
            lp.add_constraint({p: 1.0, z_vars[layer][i]: -1.0}, Relation.LE, 0.0, f"seen_on_{layer}_{i}")
            p_vars[(layer, i)] = p
            var_index[("p", layer, i)] = p
        for i in sorted(sets.q_sets[layer]):
            q = lp.add_variable(0.0, 1.0, f"q_{layer}_{i}")
            lp.add_constraint({q: 1.0, z_vars[layer][i]: 1.0}, Relation.LE, 1.0, f"seen_off_{layer}_{i}")
            q_vars[(layer, i)] = q
            var_index[("q", layer, i)] = q
    lp.set_objective({v: 1.0 for v in list(p_vars.values()) + list(q_vars.values())})
    integer_vars = frozenset(z for zs in z_vars for z in zs)
    logger.debug(
        f"Stability MILP: {lp.num_vars} variables, {len(lp.constraints)} constraints, "
        f"{len(integer_vars)} binaries, {len(p_vars)} p and {len(q_vars)} q variables"
    )
    return StabilityMilp(
        model=MilpModel(lp, integer_vars),
        net=net,
        domain=domain,
        use_sum_constraint=use_sum_constraint and domain.sum_bounds is not None,
        var_index=var_index,
        bounds_used=bounds,
        input_vars=inputs,
        z_vars=z_vars,
        p_vars=p_vars,
        q_vars=q_vars,
    )


def input_to_solution(
    milp: StabilityMilp,
    x0: np.ndarray,
    sets: Optional[StabilitySets] = None,
) -> Optional[np.ndarray]:
    """
    Turn a network input into an integral MILP assignment.

    The input is clamped into the box first; if the sum constraint is in force
    and still violated the candidate is discarded (None). p and q follow z for
    neurons still in the live sets and are 0 otherwise.
    """
    x = milp.domain.clamp(x0)
    if milp.use_sum_constraint and not milp.domain.satisfies_sum(x):
        return None
    values = np.zeros(milp.model.lp.num_vars)
    values[milp.input_vars] = x
    traces = forward(milp.net, x)
    for layer, trace in enumerate(traces[:-1]):
        for i in range(trace.pre.shape[0]):
            z = 1.0 if trace.active[i] else 0.0
            values[milp.var("y", layer, i)] = trace.pre[i]
            values[milp.var("x", layer, i)] = trace.post[i]
            values[milp.var("chi", layer, i)] = max(0.0, -trace.pre[i])
            values[milp.var("z", layer, i)] = z
            p = milp.p_vars.get((layer, i))
            if p is not None and (sets is None or i in sets.p_sets[layer]):
                values[p] = z
            q = milp.q_vars.get((layer, i))
            if q is not None and (sets is None or i in sets.q_sets[layer]):
                values[q] = 1.0 - z
    return values


# ---------------------------------------------------------------------------
# ISA
# ---------------------------------------------------------------------------

class _IsaSession:
    """Callback state shared with the branch and bound of one ISA search."""

    def __init__(self, milp: StabilityMilp, sets: StabilitySets):
        self.milp = milp
        self.sets = sets
        self.seen_patterns: Set[bytes] = set()
        self.nonintegral_completions = 0
        self.size_history = [sets.size]

    def _pattern(self, values: np.ndarray) -> List[np.ndarray]:
        return [values[zs] > 0.5 for zs in self.milp.z_vars]

    def _key(self, pattern: List[np.ndarray]) -> bytes:
        return b"|".join(np.packbits(layer).tobytes() for layer in pattern)

    def _audit(self, values: np.ndarray, pattern: List[np.ndarray]) -> None:
        # live p/q must equal their completion p = z, q = 1 - z
        tol = TOLERANCES["INTEGRALITY"]
        for (layer, i), var in self.milp.p_vars.items():
            if i in self.sets.p_sets[layer] and abs(values[var] - float(pattern[layer][i])) > tol:
                self.nonintegral_completions += 1
                return
        for (layer, i), var in self.milp.q_vars.items():
            if i in self.sets.q_sets[layer] and abs(values[var] - (1.0 - float(pattern[layer][i]))) > tol:
                self.nonintegral_completions += 1
                return

    def absorb(self, values: np.ndarray) -> List[int]:
        """Update P/Q from an integral solution; returns the p/q variables to fix."""
        pattern = self._pattern(values)
        self.seen_patterns.add(self._key(pattern))
        self._audit(values, pattern)
        x0 = self.milp.domain.clamp(values[self.milp.input_vars])
        pres = [trace.pre for trace in forward(self.milp.net, x0)[:-1]]
        dropped = self.sets.observe(x0, pres, pattern)
        self.size_history.append(self.sets.size)
        fixes = []
        for kind, layer, i in dropped:
            table = self.milp.p_vars if kind == "p" else self.milp.q_vars
            if (layer, i) in table:
                fixes.append(table[(layer, i)])
        if fixes:
            logger.debug(f"Incumbent exposed {len(fixes)} new states, {self.sets.size} remain")
        return fixes

    def propose(self, values: np.ndarray) -> Optional[np.ndarray]:
        """Candidate incumbent from the input part of an LP relaxation."""
        candidate = input_to_solution(self.milp, values[self.milp.input_vars], self.sets)
        if candidate is None:
            return None
        if self._key(self._pattern(candidate)) in self.seen_patterns:
            return None
        return candidate


def _empty_sets(widths: List[int]) -> List[Set[int]]:
    return [set() for _ in widths]


def run_isa(
    net: Network,
    domain: InputDomain,
    dataset: Optional[Dataset] = None,
    config: Optional[IsaConfig] = None,
) -> IsaResult:
    """
    Identify all stable neurons of a network over a domain.

    Args:
        net: Network to analyze
        domain: Valid inputs
        dataset: Optional sample of valid inputs for preprocessing
        config: Mode, time limit and sum-constraint handling

    Returns:
        IsaResult: certified stable sets, or unproven candidates after a timeout

    Raises:
        ValueError: If the inputs are inconsistent or preprocess_only lacks a dataset
    """
    config = config or IsaConfig()
    start = time.perf_counter()
    if domain.dim != net.input_dim:
        raise ValueError(f"Domain has {domain.dim} inputs, network expects {net.input_dim}")
    use_sum = config.use_sum_constraint and domain.sum_bounds is not None
    widths = net.hidden_widths
    bounds = compute_bounds(net, domain)

    if dataset is not None:
        dataset.check_against(domain, use_sum_constraint=use_sum)
    if config.mode is IsaMode.PREPROCESS_ONLY and (dataset is None or dataset.is_empty):
        raise ValueError("preprocess_only mode needs a non-empty dataset")

    rows = dataset.rows if (dataset is not None and config.preprocess) else np.empty((0, net.input_dim))
    if config.warm_inputs:
        rng = np.random.default_rng(config.seed)
        rows = np.vstack([rows, domain.sample(config.warm_inputs, rng, use_sum)])
    seed = StabilitySets.from_bounds(classify_by_bounds(bounds), net, domain.representative_point(use_sum))
    sets = preprocess(net, Dataset(rows=rows), seed)
    preprocessed_size = sets.size

    if config.mode is IsaMode.PREPROCESS_ONLY:
        inactive = [set(s) for s in sets.p_sets]
        return IsaResult(
            mode=config.mode,
            stable_inactive=inactive,
            stable_active=[q - p for p, q in zip(inactive, sets.q_sets)],
            unproven=_empty_sets(widths),
            certified=False,
            solve_calls=0,
            nodes=0,
            incumbents=0,
            wall_time=time.perf_counter() - start,
            bounds=bounds,
            witnesses=sets.witnesses,
            preprocessed_size=preprocessed_size,
        )

    if config.mode is IsaMode.SINGLE_CALL:
        result = _run_single_call(net, domain, sets, bounds, use_sum, config.time_limit)
    else:
        result = _run_sequential(net, domain, sets, bounds, use_sum, config.time_limit, start)
    if result.certified and sets.boundary:
        remaining = config.time_limit - (time.perf_counter() - start)
        result = _settle_boundary(net, domain, sets, result, use_sum, remaining)
    result.wall_time = time.perf_counter() - start
    result.preprocessed_size = preprocessed_size
    if result.certified:
        logger.info(
            f"ISA certified {sum(map(len, result.stable_inactive))} stably inactive and "
            f"{sum(map(len, result.stable_active))} stably active neurons "
            f"({result.solve_calls} solve calls, {result.nodes} nodes, {result.wall_time:.2f}s)"
        )
    else:
        logger.warning(
            f"ISA stopped before proving optimality; {sum(map(len, result.unproven))} neurons unproven"
        )
    return result


def _finish(
    mode: IsaMode,
    sets: StabilitySets,
    certified: bool,
    bounds: List[LayerBounds],
    calls: int,
    nodes: int,
    incumbents: int,
    audit: int,
    history: List[int],
) -> IsaResult:
    widths = [len(b) for b in bounds[:-1]]
    if certified:
        inactive = [set(s) for s in sets.p_sets]
        active = [q - p for p, q in zip(inactive, sets.q_sets)]
        unproven = _empty_sets(widths)
    else:
        inactive, active = _empty_sets(widths), _empty_sets(widths)
        unproven = [p | q for p, q in zip(sets.p_sets, sets.q_sets)]
        for _, layer, neuron in sets.boundary:
            unproven[layer].add(neuron)
    return IsaResult(
        mode=mode,
        stable_inactive=inactive,
        stable_active=active,
        unproven=unproven,
        certified=certified,
        solve_calls=calls,
        nodes=nodes,
        incumbents=incumbents,
        wall_time=0.0,
        bounds=bounds,
        witnesses=sets.witnesses,
        nonintegral_completions=audit,
        set_size_history=history,
    )


def _run_single_call(
    net: Network,
    domain: InputDomain,
    sets: StabilitySets,
    bounds: List[LayerBounds],
    use_sum: bool,
    time_limit: float,
) -> IsaResult:
    milp = build_stability_milp(net, domain, sets, bounds, use_sum)
    session = _IsaSession(milp, sets)
    callbacks = SearchCallbacks(on_incumbent=session.absorb, on_relaxation=session.propose)
    search = solve_milp(milp.model, callbacks, SearchConfig(time_limit=time_limit))
    certified = search.status is SearchStatus.PROVED_OPTIMAL and search.best_objective <= TOLERANCES["GAP"]
    if search.status is SearchStatus.INFEASIBLE:
        logger.error("Stability MILP reported no feasible solution; the domain may be empty")
    return _finish(
        IsaMode.SINGLE_CALL, sets, certified, bounds, 1, search.nodes_explored,
        search.incumbents_found, session.nonintegral_completions, session.size_history,
    )


def _run_sequential(
    net: Network,
    domain: InputDomain,
    sets: StabilitySets,
    bounds: List[LayerBounds],
    use_sum: bool,
    time_limit: float,
    start: float,
) -> IsaResult:
    calls = nodes = incumbents = audit = 0
    history = [sets.size]
    certified = False
    while True:
        remaining = time_limit - (time.perf_counter() - start)
        if remaining <= 0:
            break
        milp = build_stability_milp(net, domain, sets, bounds, use_sum)
        session = _IsaSession(milp, sets)
        proposer: Callable[[np.ndarray], Optional[np.ndarray]] = (
            lambda values, m=milp: input_to_solution(m, values[m.input_vars], sets)
        )
        search = solve_milp(milp.model, SearchCallbacks(on_relaxation=proposer), SearchConfig(time_limit=remaining))
        calls += 1
        nodes += search.nodes_explored
        incumbents += search.incumbents_found
        if search.status is not SearchStatus.PROVED_OPTIMAL:
            break
        if search.best_objective <= TOLERANCES["GAP"]:
            certified = True
            break
        assert search.best_values is not None
        before = sets.size
        session.absorb(search.best_values)
        audit += session.nonintegral_completions
        history.append(sets.size)
        if sets.size >= before:
            raise SolverError("Positive optimum did not expose any new activation state")
        logger.debug(f"Solve {calls}: optimum {search.best_objective:g}, {sets.size} states remain")
    return _finish(IsaMode.SEQUENTIAL, sets, certified, bounds, calls, nodes, incumbents, audit, history)


def _settle_boundary(
    net: Network,
    domain: InputDomain,
    sets: StabilitySets,
    result: IsaResult,
    use_sum: bool,
    time_limit: float,
) -> IsaResult:
    """
    Decide the states that were only reached on the kink.

    Each queued P member gets one MILP for max y and each Q member one for
    max -y. Within GAP of 0 the neuron is stable after all and returns to its
    set; otherwise the argmax is its witness.
    """
    deadline = time.perf_counter() + time_limit
    fixings = _bound_fixings(result.bounds)
    layers: Dict[int, _LayerModel] = {}
    checks = nodes = 0
    for kind, layer, neuron in sorted(sets.boundary):
        remaining = deadline - time.perf_counter()
        if remaining <= 0:
            break
        if layer not in layers:
            layers[layer] = _LayerModel.build(net, domain, result.bounds, layer, use_sum, fixings)
        sign = 1.0 if kind == "p" else -1.0
        extreme = layers[layer].extreme(net, neuron, sign, remaining)
        checks += 1
        nodes += extreme.nodes
        if extreme.value is None:
            break
        sets.boundary.discard((kind, layer, neuron))
        if extreme.value <= TOLERANCES["GAP"]:
            (sets.p_sets if kind == "p" else sets.q_sets)[layer].add(neuron)
        else:
            state = "active" if kind == "p" else "inactive"
            sets.witnesses[(state, layer, neuron)] = extreme.point
    settled = _finish(
        result.mode, sets, not sets.boundary, result.bounds, result.solve_calls, result.nodes + nodes,
        result.incumbents, result.nonintegral_completions, result.set_size_history,
    )
    settled.boundary_checks = checks
    logger.debug(f"Settled kink states with {checks} extra MILPs")
    return settled


# ---------------------------------------------------------------------------
# Per-neuron extremes
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class NeuronExtreme:
    """max of sign * y for one neuron; value is None when the search was cut short."""
    value: Optional[float]
    point: Optional[np.ndarray]
    nodes: int


@dataclass(eq=False)
class _LayerModel:
    """The domain and the hidden layers below one layer, ready for per-neuron objectives."""
    model: MilpModel
    layer: int
    inputs: List[int]
    previous: List[int]

    @classmethod
    def build(
        cls,
        net: Network,
        domain: InputDomain,
        bounds: List[LayerBounds],
        layer: int,
        use_sum: bool,
        fixings: Dict[NeuronKey, int],
    ) -> "_LayerModel":
        lp = LinearProgram()
        _, inputs, z_vars, previous = _encode_network(lp, net, domain, bounds, layer, use_sum, fixings)
        return cls(MilpModel(lp, frozenset(z for zs in z_vars for z in zs)), layer, inputs, previous)

    def extreme(self, net: Network, neuron: int, sign: float, time_limit: Optional[float]) -> NeuronExtreme:
        weights = net.layers[self.layer].weights[neuron]
        bias = float(net.layers[self.layer].bias[neuron])
        self.model.lp.set_objective(
            {self.previous[j]: sign * float(w) for j, w in enumerate(weights) if w != 0.0}
        )
        config = SearchConfig(time_limit=time_limit) if time_limit else SearchConfig()
        search = solve_milp(self.model, None, config)
        if search.status is not SearchStatus.PROVED_OPTIMAL or search.best_values is None:
            return NeuronExtreme(None, None, search.nodes_explored)
        point = np.array(search.best_values[self.inputs], dtype=np.float64)
        return NeuronExtreme(search.best_objective + sign * bias, point, search.nodes_explored)


def run_baseline(
    net: Network,
    domain: InputDomain,
    use_sum_constraint: bool = True,
    time_limit: Optional[float] = None,
) -> BaselineResult:
    """
    Exact preactivation range of every hidden neuron, two MILPs per neuron.

    Layers are processed in order; neurons already shown stable fix their z in
    the problems of later layers. hi <= GAP is stably inactive and otherwise
    lo >= -GAP stably active, so a neuron that is identically 0 counts as
    inactive. A neuron whose solve hits the time limit is left unknown.
    """
    start = time.perf_counter()
    bounds = compute_bounds(net, domain)
    use_sum = use_sum_constraint and domain.sum_bounds is not None
    fixings = _bound_fixings(bounds)
    tol = TOLERANCES["GAP"]
    ranges, inactive, active, unknown = [], [], [], []
    calls = nodes = 0
    for layer in range(net.depth - 1):
        model = _LayerModel.build(net, domain, bounds, layer, use_sum, fixings)
        width = net.layers[layer].weights.shape[0]
        layer_ranges = np.full((width, 2), np.nan)
        dead, alive, open_ = set(), set(), set()
        for i in range(width):
            bottom = model.extreme(net, i, -1.0, time_limit)
            top = model.extreme(net, i, 1.0, time_limit)
            calls += 2
            nodes += bottom.nodes + top.nodes
            lo = np.nan if bottom.value is None else -bottom.value
            hi = np.nan if top.value is None else top.value
            layer_ranges[i] = (lo, hi)
            if np.isnan(lo) or np.isnan(hi):
                open_.add(i)
            elif hi <= tol:
                dead.add(i)
                fixings[(layer, i)] = 0
            elif lo >= -tol:
                alive.add(i)
                fixings[(layer, i)] = 1
        ranges.append(layer_ranges)
        inactive.append(dead)
        active.append(alive)
        unknown.append(open_)
    wall = time.perf_counter() - start
    logger.info(f"Baseline solved {calls} MILPs with {nodes} nodes in {wall:.2f}s")
    return BaselineResult(ranges, inactive, active, unknown, calls, nodes, wall)


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------

class _PatternEnumerator:
    """Depth-first enumeration of feasible activation patterns in neuron order."""

    def __init__(self, net: Network, domain: InputDomain, use_sum: bool):
        self.net = net
        self.domain = domain
        self.use_sum = use_sum
        self.bounds = compute_bounds(net, domain)
        self.hidden = net.depth - 1
        self.seen_active = [np.zeros(w, dtype=bool) for w in net.hidden_widths]
        self.seen_inactive = [np.zeros(w, dtype=bool) for w in net.hidden_widths]
        self.feasible_patterns = 0
        self.lp_checks = 0

    def _maximize(
        self,
        rows: List[Tuple[np.ndarray, float]],
        coeffs: np.ndarray,
        const: float,
    ) -> Optional[Tuple[float, np.ndarray]]:
        """max coeffs.x + const over the domain cut by rows (coeffs.x <= rhs); None if empty."""
        lp = LinearProgram()
        inputs = [
            lp.add_variable(float(lo), float(hi), f"x0_{j}")
            for j, (lo, hi) in enumerate(zip(self.domain.lower, self.domain.upper))
        ]
        if self.use_sum and self.domain.sum_bounds is not None:
            total = {index: 1.0 for index in inputs}
            lp.add_constraint(total, Relation.GE, self.domain.sum_bounds[0])
            lp.add_constraint(total, Relation.LE, self.domain.sum_bounds[1])
        for row, rhs in rows:
            lp.add_constraint({inputs[j]: float(c) for j, c in enumerate(row)}, Relation.LE, rhs)
        lp.set_objective({inputs[j]: float(c) for j, c in enumerate(coeffs)})
        self.lp_checks += 1
        solution = solve_lp(lp)
        if solution.status is LpStatus.OPTIMAL:
            point = solution.values[inputs]
            return float(coeffs @ point) + const, point
        if solution.status is LpStatus.NUMERICAL_FAILURE:
            raise SolverError("Oracle LP failed numerically")
        return None

    def run(self) -> None:
        found = self._maximize([], np.zeros(self.net.input_dim), 0.0)
        if found is None:
            raise ValueError("Input domain is empty")
        identity = np.eye(self.net.input_dim)
        self._layer(0, identity, np.zeros(self.net.input_dim), [], found[1])

    def _layer(self, layer: int, a: np.ndarray, c: np.ndarray, rows: List[Tuple[np.ndarray, float]], point: np.ndarray) -> None:
        if layer == self.hidden:
            self.feasible_patterns += 1
            return
        weights, bias = self.net.layers[layer].weights, self.net.layers[layer].bias
        g_mat, g_vec = weights @ a, weights @ c + bias
        self._neuron(layer, 0, g_mat, g_vec, rows, point, [])

    def _neuron(
        self,
        layer: int,
        i: int,
        g_mat: np.ndarray,
        g_vec: np.ndarray,
        rows: List[Tuple[np.ndarray, float]],
        point: np.ndarray,
        states: List[int],
    ) -> None:
        if i == g_mat.shape[0]:
            mask = np.array(states, dtype=np.float64)
            self._layer(layer + 1, g_mat * mask[:, None], g_vec * mask, rows, point)
            return
        lo, hi = self.bounds[layer].lo[i], self.bounds[layer].hi[i]
        tol = TOLERANCES["GAP"]
        for state in (0, 1):
            # y == 0 is covered by the z=0 branch whenever hi <= 0
            if (state == 1 and hi <= 0) or (state == 0 and lo > 0):
                continue
            sign = 1.0 if state else -1.0
            seen = self.seen_active if state else self.seen_inactive
            signed = sign * g_mat[i]
            offset = sign * float(g_vec[i])
            value = float(signed @ point) + offset
            witness: Optional[np.ndarray] = point
            if value < 0 or (value <= tol and not seen[layer][i]):
                found = self._maximize(rows, signed, offset)
                if found is None or found[0] < -TOLERANCES["LP_FEASIBILITY"]:
                    continue
                value, witness = found
            if value > tol:
                seen[layer][i] = True
            # z=1 requires y >= 0, z=0 requires y <= 0
            extended = rows + [(-signed, offset)]
            self._neuron(layer, i + 1, g_mat, g_vec, extended, witness, states + [state])


def brute_force_oracle(
    net: Network,
    domain: InputDomain,
    use_sum_constraint: bool = True,
    max_neurons: int = ORACLE_SETTINGS["MAX_NEURONS"],
) -> OracleResult:
    """
    Stability labels by enumerating activation patterns.

    A pattern is feasible when some domain input gives y >= 0 for every z=1
    neuron and y <= 0 for every z=0 neuron. A neuron counts as seen active
    when a feasible region reaches y > GAP, and as seen inactive when one
    reaches y < -GAP. It is stably inactive iff never seen active, stably
    active iff never seen inactive and not already inactive. Infeasible
    prefixes are pruned, which yields the same labels as checking all 2^N
    patterns.

    Raises:
        OracleTooLargeError: If the network has more than max_neurons hidden neurons
    """
    total = net.num_hidden_neurons
    if total > max_neurons:
        raise OracleTooLargeError(f"Oracle enumeration limited to {max_neurons} neurons, network has {total}")
    use_sum = use_sum_constraint and domain.sum_bounds is not None
    enumerator = _PatternEnumerator(net, domain, use_sum)
    enumerator.run()
    inactive = [set(np.flatnonzero(~seen).tolist()) for seen in enumerator.seen_active]
    active = [set(np.flatnonzero(~seen).tolist()) - dead for seen, dead in zip(enumerator.seen_inactive, inactive)]
    logger.debug(
        f"Oracle: {enumerator.feasible_patterns} feasible patterns, {enumerator.lp_checks} LP checks"
    )
    return OracleResult(inactive, active, enumerator.feasible_patterns, enumerator.lp_checks)
