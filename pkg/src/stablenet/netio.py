"""
Network, input-domain and dataset handling.

This module holds the data model of a fully-connected ReLU network together
with its JSON/CSV formats and the forward evaluation every other module
relies on. Hidden layers apply ReLU; the final layer is affine.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union
import itertools
import json
import logging

import numpy as np
import pandas as pd

from .constants import COMPRESSION_SETTINGS, TOLERANCES

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class NetworkFormatError(ValueError):
    """Raised when a network, domain or dataset is malformed."""


def _frozen_array(values: object, ndim: int, what: str) -> np.ndarray:
    try:
        arr = np.array(values, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise NetworkFormatError(f"{what} is not numeric: {e}") from e
    if arr.ndim != ndim:
        raise NetworkFormatError(f"{what} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NetworkFormatError(f"{what} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Layer:
    """
    One affine layer.

    Attributes:
        weights: Matrix of shape (n_l, n_{l-1}); row i holds the incoming weights of neuron i
        bias: Vector of length n_l
    """
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", _frozen_array(self.weights, 2, "Layer weights"))
        object.__setattr__(self, "bias", _frozen_array(self.bias, 1, "Layer bias"))
        if self.weights.shape[0] != self.bias.shape[0]:
            raise NetworkFormatError(
                f"Bias length {self.bias.shape[0]} does not match "
                f"{self.weights.shape[0]} weight rows"
            )

    @property
    def width(self) -> int:
        return int(self.weights.shape[0])

    @property
    def fan_in(self) -> int:
        return int(self.weights.shape[1])


@dataclass(frozen=True, eq=False)
class Network:
    """
    Feedforward ReLU network.

    ReLU is applied after every layer except the last one, which is the
    affine output layer.
    """
    layers: Tuple[Layer, ...]
    input_dim: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise NetworkFormatError("Network needs at least one layer")
        if int(self.input_dim) < 1:
            raise NetworkFormatError(f"input_dim must be positive, got {self.input_dim}")
        expected = int(self.input_dim)
        for index, layer in enumerate(self.layers):
            if layer.fan_in != expected:
                raise NetworkFormatError(
                    f"Dimension chain broken at layer {index}: expected {expected} "
                    f"inputs, weight matrix is {layer.width}x{layer.fan_in}"
                )
            expected = layer.width

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def widths(self) -> List[int]:
        return [layer.width for layer in self.layers]

    @property
    def hidden_widths(self) -> List[int]:
        return self.widths[:-1]

    @property
    def num_hidden_neurons(self) -> int:
        return sum(self.hidden_widths)

    @property
    def num_connections(self) -> int:
        return sum(layer.weights.size for layer in self.layers)

    @property
    def output_dim(self) -> int:
        return self.layers[-1].width

    def replace_layers(self, layers: Sequence[Layer]) -> "Network":
        return Network(layers=tuple(layers), input_dim=self.input_dim)

    def to_dict(self) -> Dict[str, object]:
        return {
            "input_dim": int(self.input_dim),
            "layers": [
                {"weights": layer.weights.tolist(), "bias": layer.bias.tolist()}
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "Network":
        try:
            input_dim = int(data["input_dim"])  # type: ignore[arg-type]
            raw_layers = data["layers"]
            layers = tuple(
                Layer(weights=entry["weights"], bias=entry["bias"])  # type: ignore[index]
                for entry in raw_layers  # type: ignore[union-attr]
            )
        except (KeyError, TypeError) as e:
            raise NetworkFormatError(f"Network JSON is missing a field: {e}") from e
        return cls(layers=layers, input_dim=input_dim)


@dataclass(frozen=True, eq=False)
class LayerTrace:
    """Evaluation record of one layer: y (pre), x (post) and z (active)."""
    pre: np.ndarray
    post: np.ndarray
    active: np.ndarray


@dataclass(frozen=True, eq=False)
class InputDomain:
    """
    Box of valid inputs, optionally intersected with a sum-of-inputs interval.

    Attributes:
        lower: Per-input lower bounds
        upper: Per-input upper bounds
        sum_bounds: Optional (s_lo, s_hi) bounding the sum of all inputs
    """
    lower: np.ndarray
    upper: np.ndarray
    sum_bounds: Optional[Tuple[float, float]] = None

    def __post_init__(self) -> None:
        lower = _frozen_array(self.lower, 1, "Domain lower bounds")
        upper = _frozen_array(self.upper, 1, "Domain upper bounds")
        if lower.shape != upper.shape:
            raise NetworkFormatError(
                f"Domain bounds differ in length: {lower.shape[0]} vs {upper.shape[0]}"
            )
        if np.any(lower > upper):
            bad = int(np.argmax(lower > upper))
            raise NetworkFormatError(
                f"Domain lower bound exceeds upper bound at input {bad}: "
                f"{lower[bad]} > {upper[bad]}"
            )
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if self.sum_bounds is not None:
            s_lo, s_hi = (float(v) for v in self.sum_bounds)
            if not (np.isfinite(s_lo) and np.isfinite(s_hi)) or s_lo > s_hi:
                raise NetworkFormatError(f"Invalid sum bounds ({s_lo}, {s_hi})")
            if s_hi < lower.sum() or s_lo > upper.sum():
                raise NetworkFormatError(
                    f"Sum bounds ({s_lo}, {s_hi}) do not intersect the box sum range "
                    f"[{lower.sum()}, {upper.sum()}]"
                )
            object.__setattr__(self, "sum_bounds", (s_lo, s_hi))

    @property
    def dim(self) -> int:
        return int(self.lower.shape[0])

    def with_sum_bounds(self, sum_bounds: Optional[Tuple[float, float]]) -> "InputDomain":
        return InputDomain(lower=self.lower, upper=self.upper, sum_bounds=sum_bounds)

    def clamp(self, x0: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(x0, dtype=np.float64), self.lower, self.upper)

    def satisfies_sum(self, x0: np.ndarray, tol: float = TOLERANCES["BOUND_SLACK"]) -> bool:
        if self.sum_bounds is None:
            return True
        total = float(np.sum(x0))
        return self.sum_bounds[0] - tol <= total <= self.sum_bounds[1] + tol

    def contains(
        self,
        x0: np.ndarray,
        use_sum_constraint: bool = True,
        tol: float = TOLERANCES["BOUND_SLACK"],
    ) -> bool:
        x0 = np.asarray(x0, dtype=np.float64)
        if x0.shape != self.lower.shape:
            return False
        if np.any(x0 < self.lower - tol) or np.any(x0 > self.upper + tol):
            return False
        return self.satisfies_sum(x0, tol) if use_sum_constraint else True

    def representative_point(self, use_sum_constraint: bool = True) -> np.ndarray:
        """Box midpoint, slid along the lower-upper diagonal into the sum interval if needed."""
        mid = 0.5 * (self.lower + self.upper)
        if not use_sum_constraint or self.sum_bounds is None or self.satisfies_sum(mid):
            return mid
        lo_sum, hi_sum = float(self.lower.sum()), float(self.upper.sum())
        target = float(np.clip(mid.sum(), *self.sum_bounds))
        theta = 0.0 if hi_sum == lo_sum else (target - lo_sum) / (hi_sum - lo_sum)
        return self.lower + float(np.clip(theta, 0.0, 1.0)) * (self.upper - self.lower)

    def vertices(self, use_sum_constraint: bool = True) -> Iterator[np.ndarray]:
        """Yield every box vertex (inside the sum interval when it is used)."""
        for corner in itertools.product((0, 1), repeat=self.dim):
            mask = np.array(corner, dtype=bool)
            point = np.where(mask, self.upper, self.lower)
            if not use_sum_constraint or self.satisfies_sum(point):
                yield point

    def sample(
        self,
        n: int,
        rng: np.random.Generator,
        use_sum_constraint: bool = True,
        max_rounds: int = COMPRESSION_SETTINGS["REJECTION_ROUNDS"],
    ) -> np.ndarray:
        """Draw up to n uniform points; the sum constraint is enforced by rejection."""
        if n <= 0:
            return np.empty((0, self.dim))
        if not use_sum_constraint or self.sum_bounds is None:
            return rng.uniform(self.lower, self.upper, size=(n, self.dim))
        accepted: List[np.ndarray] = []
        count = 0
        for _ in range(max_rounds):
            batch = rng.uniform(self.lower, self.upper, size=(n, self.dim))
            sums = batch.sum(axis=1)
            keep = batch[(sums >= self.sum_bounds[0]) & (sums <= self.sum_bounds[1])]
            accepted.append(keep)
            count += keep.shape[0]
            if count >= n:
                break
        points = np.vstack(accepted)[:n]
        if points.shape[0] < n:
            logger.warning(
                f"Rejection sampling under the sum constraint produced "
                f"{points.shape[0]} of {n} requested points"
            )
        return points

    def to_dict(self) -> Dict[str, object]:
        return {
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "sum_bounds": list(self.sum_bounds) if self.sum_bounds is not None else None,
            "normalize": None,
        }


@dataclass(frozen=True, eq=False)
class Dataset:
    """Sample of network inputs, one row per input vector."""
    rows: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    def __post_init__(self) -> None:
        rows = np.array(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise NetworkFormatError(f"Dataset rows must form a matrix, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise NetworkFormatError("Dataset contains non-finite values")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return int(self.rows.shape[0])

    @property
    def is_empty(self) -> bool:
        return self.rows.shape[0] == 0

    def check_against(self, domain: InputDomain, use_sum_constraint: bool = True) -> None:
        """Reject rows that are not valid domain points."""
        if self.is_empty:
            return
        if self.rows.shape[1] != domain.dim:
            raise NetworkFormatError(
                f"Dataset rows have length {self.rows.shape[1]}, domain has {domain.dim} inputs"
            )
        for index, row in enumerate(self.rows):
            if not domain.contains(row, use_sum_constraint=use_sum_constraint):
                raise NetworkFormatError(f"Dataset row {index} lies outside the input domain")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def forward(net: Network, x0: Sequence[float]) -> List[LayerTrace]:
    """
    Evaluate the network on one input and record every layer.

    Args:
        net: Network to evaluate
        x0: Input vector of length net.input_dim

    Returns:
        List[LayerTrace]: One trace per layer; the last one is the affine output

    Raises:
        ValueError: If the input length does not match
    """
    x = np.asarray(x0, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise ValueError(f"Input has shape {x.shape}, network expects ({net.input_dim},)")
    traces = []
    last = net.depth - 1
    for index, layer in enumerate(net.layers):
        pre = layer.weights @ x + layer.bias
        # boundary convention: a zero preactivation is inactive
        active = pre > 0
        post = np.maximum(pre, 0.0) if index < last else pre.copy()
        traces.append(LayerTrace(pre=pre, post=post, active=active))
        x = post
    return traces


def forward_batch(net: Network, inputs: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Vectorized forward pass; returns (outputs, per-layer preactivations)."""
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if x.shape[1] != net.input_dim:
        raise ValueError(f"Inputs have {x.shape[1]} columns, network expects {net.input_dim}")
    pres = []
    last = net.depth - 1
    for index, layer in enumerate(net.layers):
        pre = x @ layer.weights.T + layer.bias
        pres.append(pre)
        x = np.maximum(pre, 0.0) if index < last else pre
    return x, pres


def activation_pattern(net: Network, x0: Sequence[float]) -> List[np.ndarray]:
    """Per hidden layer boolean activation vector for one input."""
    return [trace.active for trace in forward(net, x0)[:-1]]


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------

def build_domain(
    lower: Sequence[float],
    upper: Sequence[float],
    sum_bounds: Optional[Tuple[float, float]] = None,
    norm: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
) -> InputDomain:
    """
    Build an input domain, folding data normalization into the box.

    With norm=(mean, std) the bounds become ((lower - mean)/std, (upper - mean)/std).
    The sum interval refers to the normalized coordinates and is kept as given.

    Raises:
        NetworkFormatError: If std <= 0 or the resulting bounds are inverted
    """
    lo = np.asarray(lower, dtype=np.float64)
    hi = np.asarray(upper, dtype=np.float64)
    if lo.shape != hi.shape:
        raise NetworkFormatError(f"Domain bounds differ in length: {lo.shape} vs {hi.shape}")
    if norm is not None:
        mean = np.broadcast_to(np.asarray(norm[0], dtype=np.float64), lo.shape)
        std = np.broadcast_to(np.asarray(norm[1], dtype=np.float64), lo.shape)
        if np.any(std <= 0):
            raise NetworkFormatError("Normalization std must be positive")
        lo = (lo - mean) / std
        hi = (hi - mean) / std
    return InputDomain(lower=lo, upper=hi, sum_bounds=sum_bounds)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def _read_json(path: PathLike, what: str) -> Dict[str, object]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except json.JSONDecodeError as e:
        raise NetworkFormatError(f"Cannot parse {what} file {path}: {e}") from e
    if not isinstance(data, dict):
        raise NetworkFormatError(f"{what} file {path} must contain a JSON object")
    return data


def load_network(path: PathLike) -> Network:
    """
    Load and validate a network JSON file.

    Raises:
        NetworkFormatError: On parse errors, broken dimension chains or non-finite weights
    """
    net = Network.from_dict(_read_json(path, "network"))
    logger.info(f"Loaded network {path}: widths {net.widths}, input_dim {net.input_dim}")
    return net


def save_network(net: Network, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(net.to_dict(), handle, indent=2)
        handle.write("\n")


def load_domain(path: PathLike) -> InputDomain:
    data = _read_json(path, "domain")
    try:
        lower, upper = data["lower"], data["upper"]
    except KeyError as e:
        raise NetworkFormatError(f"Domain JSON is missing a field: {e}") from e
    sum_bounds = data.get("sum_bounds")
    normalize = data.get("normalize")
    norm = None
    if normalize is not None:
        try:
            norm = (normalize["mean"], normalize["std"])  # type: ignore[index]
        except (KeyError, TypeError) as e:
            raise NetworkFormatError(f"Domain normalize block is malformed: {e}") from e
    if sum_bounds is not None:
        if not isinstance(sum_bounds, list) or len(sum_bounds) != 2:
            raise NetworkFormatError(f"sum_bounds must be [lo, hi] or null, got {sum_bounds}")
        sum_bounds = (float(sum_bounds[0]), float(sum_bounds[1]))
    return build_domain(lower, upper, sum_bounds=sum_bounds, norm=norm)  # type: ignore[arg-type]


def save_domain(domain: InputDomain, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(domain.to_dict(), handle, indent=2)
        handle.write("\n")


def load_dataset(
    path: PathLike,
    domain: Optional[InputDomain] = None,
    use_sum_constraint: bool = True,
) -> Dataset:
    """
    Load a header-less CSV of input vectors.

    When a domain is given every row must lie inside it; out-of-domain rows are
    an error rather than being clipped.
    """
    try:
        frame = pd.read_csv(path, header=None, dtype=np.float64)
    except pd.errors.EmptyDataError:
        width = domain.dim if domain is not None else 0
        return Dataset(rows=np.empty((0, width)))
    except ValueError as e:
        raise NetworkFormatError(f"Cannot parse dataset {path}: {e}") from e
    dataset = Dataset(rows=frame.to_numpy())
    if domain is not None:
        dataset.check_against(domain, use_sum_constraint=use_sum_constraint)
    logger.info(f"Loaded dataset {path}: {len(dataset)} rows")
    return dataset


def save_dataset(dataset: Dataset, path: PathLike) -> None:
    pd.DataFrame(dataset.rows).to_csv(path, header=False, index=False, float_format="%.17g")


# ---------------------------------------------------------------------------
# Random instances
# ---------------------------------------------------------------------------

def random_network(
    rng: np.random.Generator,
    widths: Sequence[int],
    input_dim: int,
    output_dim: int = 1,
    bias_shift: float = 0.0,
    bias_noise: float = 0.5,
) -> Network:
    """
    Draw a network with N(0, 1/fan_in) weights and biases bias_shift + bias_noise * N(0, 1).

    Negative shifts make neurons stably inactive more often, positive shifts
    stably active.
    """
    if not widths or any(int(w) < 1 for w in widths):
        raise NetworkFormatError(f"Hidden widths must be positive, got {list(widths)}")
    if input_dim < 1 or output_dim < 1:
        raise NetworkFormatError(f"Input and output sizes must be positive, got {input_dim}, {output_dim}")
    sizes = [int(input_dim)] + [int(w) for w in widths] + [int(output_dim)]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        bias = bias_shift + bias_noise * rng.standard_normal(fan_out)
        layers.append(Layer(weights, bias))
    return Network(layers=tuple(layers), input_dim=int(input_dim))
