"""
Interval bounds on preactivations.

Propagates the input box through the network with interval arithmetic to get
valid big-M constants for the MILP encodings and a cheap, sound but
incomplete classification of stable neurons. The optional sum-of-inputs
constraint is ignored here, so the bounds stay valid and may only be looser.
"""

from dataclasses import dataclass
from typing import Dict, List, Set
import logging

import numpy as np

from .netio import InputDomain, Network

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NeuronBounds:
    """
    Bounds of one neuron.

    Attributes:
        lo: Lower bound on the preactivation y
        hi: Upper bound on y
    """
    lo: float
    hi: float

    @property
    def big_m(self) -> float:
        """Upper bound on the ReLU output x."""
        return max(0.0, self.hi)

    @property
    def big_mu(self) -> float:
        """Upper bound on the negative part chi = max(0, -y)."""
        return max(0.0, -self.lo)


@dataclass(frozen=True, eq=False)
class LayerBounds:
    """Vectorized bounds for all neurons of a layer."""
    lo: np.ndarray
    hi: np.ndarray

    def __len__(self) -> int:
        return int(self.lo.shape[0])

    @property
    def big_m(self) -> np.ndarray:
        return np.maximum(0.0, self.hi)

    @property
    def big_mu(self) -> np.ndarray:
        return np.maximum(0.0, -self.lo)

    def neuron(self, index: int) -> NeuronBounds:
        return NeuronBounds(lo=float(self.lo[index]), hi=float(self.hi[index]))

    def post_activation(self) -> "LayerBounds":
        return LayerBounds(lo=np.maximum(0.0, self.lo), hi=np.maximum(0.0, self.hi))


@dataclass
class BoundClassification:
    """Per hidden layer neuron sets decided by interval bounds alone."""
    stable_inactive: List[Set[int]]
    stable_active: List[Set[int]]
    unknown: List[Set[int]]

    @property
    def num_stable(self) -> int:
        return sum(len(s) for s in self.stable_inactive) + sum(len(s) for s in self.stable_active)


def _affine_interval(weights: np.ndarray, bias: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> LayerBounds:
    positive = np.maximum(weights, 0.0)
    negative = np.minimum(weights, 0.0)
    lo = positive @ lower + negative @ upper + bias
    hi = positive @ upper + negative @ lower + bias
    return LayerBounds(lo=lo, hi=hi)


def compute_bounds(net: Network, domain: InputDomain) -> List[LayerBounds]:
    """
    Propagate the input box through the network.

    Args:
        net: Network to bound
        domain: Input domain (its box part is used)

    Returns:
        List[LayerBounds]: Preactivation bounds for every layer, output layer included

    Raises:
        ValueError: If the domain dimension does not match the network input
    """
    if domain.dim != net.input_dim:
        raise ValueError(f"Domain has {domain.dim} inputs, network expects {net.input_dim}")
    lower, upper = domain.lower, domain.upper
    result = []
    for layer in net.layers:
        bounds = _affine_interval(layer.weights, layer.bias, lower, upper)
        result.append(bounds)
        post = bounds.post_activation()
        lower, upper = post.lo, post.hi
    logger.debug(f"Interval bounds computed for {net.depth} layers")
    return result


def classify_by_bounds(bounds: List[LayerBounds]) -> BoundClassification:
    """
    Mark neurons whose interval already decides their state.

    hi <= 0 is stably inactive, lo >= 0 stably active, anything else unknown.
    Only hidden layers are classified; the last entry of bounds is the output layer.
    """
    inactive, active, unknown = [], [], []
    for layer_bounds in bounds[:-1]:
        dead = set(np.flatnonzero(layer_bounds.hi <= 0).tolist())
        alive = set(np.flatnonzero(layer_bounds.lo >= 0).tolist()) - dead
        inactive.append(dead)
        active.append(alive)
        unknown.append(set(range(len(layer_bounds))) - dead - alive)
    classification = BoundClassification(inactive, active, unknown)
    logger.debug(f"Interval bounds decide {classification.num_stable} neurons")
    return classification


def bounds_table(bounds: List[LayerBounds]) -> List[Dict[str, List[float]]]:
    """JSON-ready table of bounds and big-M constants per layer."""
    return [
        {
            "lo": b.lo.tolist(),
            "hi": b.hi.tolist(),
            "big_m": b.big_m.tolist(),
            "big_mu": b.big_mu.tolist(),
        }
        for b in bounds
    ]
