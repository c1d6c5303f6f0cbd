"""
Exact compression of ReLU networks from certified stable neurons.

Each hidden layer is handled in turn, using the stable sets from run_isa:

- a layer whose neurons are all stably inactive makes the network constant,
  so the whole network collapses to a single constant layer;
- a layer whose neurons are all stable is affine and is folded into the next layer;
- otherwise linearly dependent stably active neurons are merged into the
  others and stably inactive neurons are removed.

Every transformation preserves the network function on the input domain, and
run_leo checks the result against the original by sampling.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set, Tuple, Union
import logging

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .constants import COMPRESSION_SETTINGS, REPORT_SCHEMA_VERSION, TOLERANCES
from .netio import InputDomain, Layer, Network, forward, forward_batch
from .stability import IsaResult

logger = logging.getLogger(__name__)


class CompressionError(ValueError):
    """Raised when a transformation's preconditions do not hold."""


@dataclass
class MergePlan:
    """
    How the stably active neurons of one layer were merged.

    Attributes:
        kept: Active neurons forming the row basis, in index order
        rank: Numerical rank of the active rows
        alphas: Removed neuron -> coefficients over kept, w_i = sum_j alpha_j w_j
        bias_residuals: Removed neuron -> b_i - sum_j alpha_j b_j
        skipped: Dependent neurons kept because their reconstruction was not exact enough
    """
    kept: List[int]
    rank: int
    alphas: Dict[int, np.ndarray] = field(default_factory=dict)
    bias_residuals: Dict[int, float] = field(default_factory=dict)
    skipped: List[int] = field(default_factory=list)

    @property
    def removed(self) -> List[int]:
        return sorted(self.alphas)

    def to_dict(self) -> Dict[str, object]:
        return {
            "kept": list(self.kept),
            "rank": self.rank,
            "removed": self.removed,
            "alphas": {str(i): self.alphas[i].tolist() for i in self.removed},
            "bias_residuals": {str(i): self.bias_residuals[i] for i in self.removed},
            "skipped": list(self.skipped),
        }


@dataclass(frozen=True)
class RemovedConnection:
    """A weight deleted together with a stably inactive neuron (original layer index)."""
    layer: int
    row: int
    col: int
    weight: float


@dataclass
class LayerAction:
    layer: int
    removed: int = 0
    merged: int = 0
    folded: bool = False
    collapsed: bool = False

    @property
    def tag(self) -> str:
        if self.collapsed:
            return "collapsed"
        if self.folded:
            return "folded"
        parts = []
        if self.merged:
            parts.append(f"merged({self.merged})")
        if self.removed:
            parts.append(f"removed({self.removed})")
        return "+".join(parts) if parts else "none"


@dataclass
class CompressionReport:
    """Summary of a run_leo pass; percentages refer to the original network."""
    actions: List[LayerAction]
    certified: bool
    original_neurons: int
    neurons_removed: int
    original_connections: int
    connections_removed: int
    equivalence_residual: float = 0.0
    seed_inputs_checked: int = 0
    merge_plans: Dict[int, MergePlan] = field(default_factory=dict)
    removed_connections: List[RemovedConnection] = field(default_factory=list)

    @property
    def neurons_removed_pct(self) -> float:
        if self.original_neurons == 0:
            return 0.0
        return 100.0 * self.neurons_removed / self.original_neurons

    @property
    def connections_removed_pct(self) -> float:
        if self.original_connections == 0:
            return 0.0
        return 100.0 * self.connections_removed / self.original_connections

    def to_dict(self) -> Dict[str, object]:
        return {
            "schema": REPORT_SCHEMA_VERSION,
            "certified": self.certified,
            "actions": [action.tag for action in self.actions],
            "neurons_removed": self.neurons_removed,
            "neurons_removed_pct": round(self.neurons_removed_pct, 4),
            "connections_removed": self.connections_removed,
            "connections_removed_pct": round(self.connections_removed_pct, 4),
            "equivalence_residual": self.equivalence_residual,
            "seed_inputs_checked": self.seed_inputs_checked,
            "merge_plans": {str(layer): plan.to_dict() for layer, plan in sorted(self.merge_plans.items())},
        }


@dataclass
class MagnitudeStats:
    """Where exactly removable weights sit in the magnitude ranking of all weights."""
    percentiles: np.ndarray
    max_percentile: float
    missed_by_magnitude: float

    @property
    def is_empty(self) -> bool:
        return self.percentiles.size == 0


def _check_layer(net: Network, layer: int) -> None:
    if not 0 <= layer < net.depth - 1:
        raise CompressionError(f"Layer {layer} is not a hidden layer of a depth-{net.depth} network")


def _check_indices(net: Network, layer: int, indices: Iterable[int]) -> List[int]:
    width = net.layers[layer].width
    result = sorted(int(i) for i in indices)
    bad = [i for i in result if not 0 <= i < width]
    if bad:
        raise CompressionError(f"Neuron indices {bad} out of range for layer {layer} of width {width}")
    return result


def remove_inactive(net: Network, layer: int, inactive: Iterable[int]) -> Network:
    """
    Delete stably inactive neurons of a hidden layer.

    Rows of the layer and the matching columns of the next layer go away;
    nothing else changes since those neurons always output 0.

    Raises:
        CompressionError: On bad indices or if the whole layer would be removed
    """
    _check_layer(net, layer)
    dead = _check_indices(net, layer, inactive)
    if not dead:
        return net
    current, following = net.layers[layer], net.layers[layer + 1]
    if len(dead) == current.width:
        raise CompressionError(f"Removing all of layer {layer} requires collapse_network")
    keep = np.setdiff1d(np.arange(current.width), dead)
    layers = list(net.layers)
    layers[layer] = Layer(current.weights[keep], current.bias[keep])
    layers[layer + 1] = Layer(following.weights[:, keep], following.bias)
    return net.replace_layers(layers)


def plan_merge(
    weights: np.ndarray,
    bias: np.ndarray,
    active: Iterable[int],
    rank_tol: float = TOLERANCES["RANK"],
    merge_tol: float = TOLERANCES["MERGE"],
) -> MergePlan:
    """
    Pick a row basis of the active neurons and express the others in it.

    Rows are visited in index order and a row joins the basis when its
    distance to the span of the basis exceeds rank_tol times the largest row
    norm. The remaining rows get least-squares coefficients, kept only if the
    reconstruction error stays within merge_tol.
    """
    rows = sorted(int(i) for i in active)
    if not rows:
        return MergePlan(kept=[], rank=0)
    scale = float(np.max(np.linalg.norm(weights[rows], axis=1)))
    kept: List[int] = []
    dependent: List[int] = []
    for i in rows:
        if kept:
            basis = weights[kept].T
            coeffs, *_ = linalg.lstsq(basis, weights[i])
            distance = float(np.linalg.norm(weights[i] - basis @ coeffs))
        else:
            distance = float(np.linalg.norm(weights[i]))
        if distance > rank_tol * scale:
            kept.append(i)
        else:
            dependent.append(i)

    plan = MergePlan(kept=kept, rank=len(kept))
    for i in dependent:
        if kept:
            basis = weights[kept].T
            coeffs, *_ = linalg.lstsq(basis, weights[i])
            coeffs = np.asarray(coeffs, dtype=np.float64)
            error = float(np.max(np.abs(weights[i] - basis @ coeffs), initial=0.0))
        else:
            coeffs = np.zeros(0)
            error = float(np.max(np.abs(weights[i]), initial=0.0))
        if error > merge_tol * max(1.0, scale):
            logger.warning(f"Skipping merge of neuron {i}: reconstruction error {error:.3g}")
            plan.skipped.append(i)
            continue
        plan.alphas[i] = coeffs
        plan.bias_residuals[i] = float(bias[i] - coeffs @ bias[kept]) if kept else float(bias[i])
    return plan


def merge_active(
    net: Network,
    layer: int,
    active: Iterable[int],
    rank_tol: float = TOLERANCES["RANK"],
    merge_tol: float = TOLERANCES["MERGE"],
) -> Tuple[Network, MergePlan]:
    """
    Merge linearly dependent stably active neurons into a row basis.

    A stably active neuron i with w_i = sum_j alpha_j w_j outputs
    sum_j alpha_j x_j + (b_i - sum_j alpha_j b_j), so its outgoing weights
    are added to the basis neurons and the constant goes to the next bias.

    Returns:
        Tuple[Network, MergePlan]: The smaller network and the merge bookkeeping
    """
    _check_layer(net, layer)
    current, following = net.layers[layer], net.layers[layer + 1]
    plan = plan_merge(current.weights, current.bias, _check_indices(net, layer, active), rank_tol, merge_tol)
    if not plan.alphas:
        return net, plan

    next_weights = following.weights.copy()
    next_bias = following.bias.copy()
    for i in plan.removed:
        outgoing = following.weights[:, i]
        if plan.kept:
            next_weights[:, plan.kept] += np.outer(outgoing, plan.alphas[i])
        next_bias += outgoing * plan.bias_residuals[i]
    keep = np.setdiff1d(np.arange(current.width), plan.removed)
    layers = list(net.layers)
    layers[layer] = Layer(current.weights[keep], current.bias[keep])
    layers[layer + 1] = Layer(next_weights[:, keep], next_bias)
    logger.debug(f"Layer {layer}: rank {plan.rank}, merged {len(plan.removed)} active neurons")
    return net.replace_layers(layers), plan


def fold_layer(
    net: Network,
    layer: int,
    active: Iterable[int],
    inactive: Optional[Iterable[int]] = None,
) -> Network:
    """
    Fold a fully stable hidden layer into the next one.

    With all neurons stable the layer computes D (W x + b) for the 0/1 mask D
    of its active neurons, so the next layer becomes V D W x + (V D b + c).

    Raises:
        CompressionError: If some neuron is not covered or no neuron is active
    """
    _check_layer(net, layer)
    alive = _check_indices(net, layer, active)
    width = net.layers[layer].width
    if inactive is not None:
        dead = _check_indices(net, layer, inactive)
        if set(alive) & set(dead):
            raise CompressionError(f"Layer {layer} has neurons marked both active and inactive")
        if len(alive) + len(dead) != width:
            raise CompressionError(f"Layer {layer} is not fully stable; cannot fold")
    if not alive:
        raise CompressionError(f"Layer {layer} has no active neuron; use collapse_network")
    current, following = net.layers[layer], net.layers[layer + 1]
    selected = following.weights[:, alive]
    folded = Layer(selected @ current.weights[alive], selected @ current.bias[alive] + following.bias)
    layers = list(net.layers[:layer]) + [folded] + list(net.layers[layer + 2:])
    return net.replace_layers(layers)


def collapse_network(
    net: Network,
    layer: int,
    domain: InputDomain,
    use_sum_constraint: bool = True,
) -> Network:
    """
    Replace a network with a stably inactive hidden layer by its constant output.

    Any domain point gives the constant; the box midpoint (moved into the sum
    interval when needed) is used.
    """
    _check_layer(net, layer)
    point = domain.representative_point(use_sum_constraint)
    constant = forward(net, point)[-1].post
    return Network(
        layers=(Layer(np.zeros((net.output_dim, net.input_dim)), constant),),
        input_dim=net.input_dim,
    )


def verify_equivalence(
    net_a: Network,
    net_b: Network,
    domain: InputDomain,
    n_samples: int = COMPRESSION_SETTINGS["EQUIVALENCE_SAMPLES"],
    seed: int = 0,
    use_sum_constraint: bool = True,
) -> Tuple[float, int]:
    """
    Largest output difference between two networks on domain inputs.

    Inputs are uniform samples (rejection-sampled under the sum constraint)
    plus every feasible box vertex when the input dimension is small.

    Returns:
        Tuple[float, int]: max infinity-norm residual and number of inputs checked

    Raises:
        ValueError: If the networks' input or output sizes differ
    """
    if net_a.input_dim != net_b.input_dim or net_a.output_dim != net_b.output_dim:
        raise ValueError(
            f"Networks are not comparable: {net_a.input_dim}->{net_a.output_dim} "
            f"vs {net_b.input_dim}->{net_b.output_dim}"
        )
    if domain.dim != net_a.input_dim:
        raise ValueError(f"Domain has {domain.dim} inputs, networks expect {net_a.input_dim}")
    rng = np.random.default_rng(seed)
    inputs = [domain.sample(n_samples, rng, use_sum_constraint)]
    if domain.dim <= COMPRESSION_SETTINGS["MAX_VERTEX_DIM"]:
        corners = list(domain.vertices(use_sum_constraint))
        if corners:
            inputs.append(np.vstack(corners))
    points = np.vstack(inputs)
    if points.shape[0] == 0:
        return 0.0, 0
    out_a, _ = forward_batch(net_a, points)
    out_b, _ = forward_batch(net_b, points)
    return float(np.max(np.abs(out_a - out_b))), int(points.shape[0])


def _stable_sets(net: Network, result: IsaResult) -> Tuple[List[Set[int]], List[Set[int]]]:
    widths = net.hidden_widths
    if len(result.stable_inactive) != len(widths) or len(result.stable_active) != len(widths):
        raise CompressionError(
            f"Stability result covers {len(result.stable_inactive)} layers, network has {len(widths)} hidden layers"
        )
    for layer, (dead, alive) in enumerate(zip(result.stable_inactive, result.stable_active)):
        if dead & alive:
            raise CompressionError(f"Layer {layer} lists neurons {sorted(dead & alive)} as both active and inactive")
        out_of_range = [i for i in dead | alive if not 0 <= i < widths[layer]]
        if out_of_range:
            raise CompressionError(f"Layer {layer} stable set has invalid indices {out_of_range}")
    return result.stable_inactive, result.stable_active


def run_leo(
    net: Network,
    isa_result: IsaResult,
    domain: InputDomain,
    allow_uncertified: bool = False,
    n_samples: int = COMPRESSION_SETTINGS["EQUIVALENCE_SAMPLES"],
    seed: int = 0,
    use_sum_constraint: bool = True,
) -> Tuple[Network, CompressionReport]:
    """
    Compress a network with its stable neuron sets.

    Args:
        net: Network that was analyzed
        isa_result: Output of run_isa for net and domain
        domain: Input domain of the analysis
        allow_uncertified: Accept stable sets that were not proved
        n_samples: Samples for the final equivalence check
        seed: Seed of the equivalence sampler
        use_sum_constraint: Whether the domain's sum interval applies

    Returns:
        Tuple[Network, CompressionReport]: Compressed network and what was done

    Raises:
        CompressionError: If the sets are uncertified without opt-in or inconsistent
    """
    if not isa_result.certified and not allow_uncertified:
        raise CompressionError("Stable sets are not certified; pass allow_uncertified to compress anyway")
    inactive_sets, active_sets = _stable_sets(net, isa_result)
    hidden = net.depth - 1
    report = CompressionReport(
        actions=[LayerAction(layer=l) for l in range(hidden)],
        certified=isa_result.certified,
        original_neurons=net.num_hidden_neurons,
        neurons_removed=0,
        original_connections=net.num_connections,
        connections_removed=0,
    )

    current = net
    position = 0
    for layer in range(hidden):
        width = net.layers[layer].width
        dead, alive = inactive_sets[layer], active_sets[layer]
        action = report.actions[layer]
        if len(dead) == width:
            current = collapse_network(current, position, domain, use_sum_constraint)
            for later in report.actions[layer:]:
                later.collapsed = True
            logger.info(f"Layer {layer} is stably inactive; network collapsed to a constant")
            break
        if len(dead) + len(alive) == width:
            current = fold_layer(current, position, alive, dead)
            action.folded = True
            logger.info(f"Layer {layer} is fully stable; folded into the next layer")
            continue

        if alive:
            current, plan = merge_active(current, position, alive)
            if plan.alphas:
                action.merged = len(plan.alphas)
                report.merge_plans[layer] = plan
            merged = plan.removed
        else:
            merged = []
        if dead:
            shifted = [i - sum(1 for m in merged if m < i) for i in sorted(dead)]
            report.removed_connections.extend(_removed_connections(current, position, layer, shifted))
            current = remove_inactive(current, position, shifted)
            action.removed = len(dead)
        if action.tag != "none":
            logger.info(f"Layer {layer}: {action.tag}")
        position += 1

    report.neurons_removed = net.num_hidden_neurons - current.num_hidden_neurons
    report.connections_removed = net.num_connections - current.num_connections
    residual, checked = verify_equivalence(net, current, domain, n_samples, seed, use_sum_constraint)
    report.equivalence_residual = residual
    report.seed_inputs_checked = checked
    logger.info(
        f"Compression removed {report.neurons_removed_pct:.1f}% of neurons and "
        f"{report.connections_removed_pct:.1f}% of connections (residual {residual:.3g})"
    )
    return current, report


def _removed_connections(net: Network, position: int, layer: int, neurons: List[int]) -> List[RemovedConnection]:
    incoming, outgoing = net.layers[position].weights, net.layers[position + 1].weights
    removed = []
    for i in neurons:
        removed.extend(RemovedConnection(layer, i, j, float(w)) for j, w in enumerate(incoming[i]))
        removed.extend(RemovedConnection(layer + 1, k, i, float(w)) for k, w in enumerate(outgoing[:, i]))
    return removed


def magnitude_analysis(net: Network, removed: List[RemovedConnection]) -> MagnitudeStats:
    """
    Rank removed connections among all connection magnitudes of net.

    The percentile of a weight is the share of all |w| that are <= it. The
    miss rate is the fraction of removed connections that magnitude pruning
    of the same number of smallest weights would keep.
    """
    if not removed:
        return MagnitudeStats(np.zeros(0), 0.0, 0.0)
    magnitudes = np.concatenate([np.abs(layer.weights).ravel() for layer in net.layers])
    values = np.abs(np.array([c.weight for c in removed]))
    percentiles = np.array([stats.percentileofscore(magnitudes, v, kind="weak") for v in values])
    count = min(len(removed), magnitudes.size)
    cutoff = np.sort(magnitudes)[count - 1]
    missed = float(np.mean(values > cutoff))
    return MagnitudeStats(percentiles, float(percentiles.max()), missed)


def export_removed_connections(report: CompressionReport, path: Union[str, Path]) -> None:
    frame = pd.DataFrame(
        [(c.layer, c.row, c.col, c.weight) for c in report.removed_connections],
        columns=["layer", "row", "col", "weight"],
    )
    frame.to_csv(path, index=False, float_format="%.17g")
