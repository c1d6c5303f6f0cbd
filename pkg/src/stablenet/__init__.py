"""
stablenet Package

Exact compression of fully-connected ReLU networks.

This package provides:
- Identification of all stably active / stably inactive neurons over an
  input domain with a single MILP and lazy fixes (run_isa)
- Exact network compression from those neurons (run_leo)
- Per-neuron MILP baseline and brute-force oracle for validation
- JSON/CSV formats for networks, domains, datasets and reports

Example:
    >>> from stablenet import load_network, load_domain, run_isa, run_leo
    >>> net = load_network("model.net.json")
    >>> domain = load_domain("model.domain.json")
    >>> result = run_isa(net, domain)
    >>> small, report = run_leo(net, result, domain)
    >>> print(f"Removed {report.neurons_removed_pct:.1f}% of neurons")
"""

__version__ = "1.0.0"

from .bounds import LayerBounds, NeuronBounds, classify_by_bounds, compute_bounds
from .compress import (
    CompressionError,
    CompressionReport,
    MergePlan,
    collapse_network,
    fold_layer,
    magnitude_analysis,
    merge_active,
    remove_inactive,
    run_leo,
    verify_equivalence,
)
from .constants import STABLENET_CONSTANTS, TOLERANCES
from .netio import (
    Dataset,
    InputDomain,
    Layer,
    Network,
    NetworkFormatError,
    build_domain,
    forward,
    load_dataset,
    load_domain,
    load_network,
    save_network,
)
from .optcore import SolverError, solve_lp, solve_milp
from .stability import (
    IsaConfig,
    IsaMode,
    IsaResult,
    OracleTooLargeError,
    brute_force_oracle,
    preprocess,
    run_baseline,
    run_isa,
)

__all__ = [
    "CompressionError",
    "CompressionReport",
    "Dataset",
    "InputDomain",
    "IsaConfig",
    "IsaMode",
    "IsaResult",
    "Layer",
    "LayerBounds",
    "MergePlan",
    "Network",
    "NetworkFormatError",
    "NeuronBounds",
    "OracleTooLargeError",
    "STABLENET_CONSTANTS",
    "SolverError",
    "TOLERANCES",
    "brute_force_oracle",
    "build_domain",
    "classify_by_bounds",
    "collapse_network",
    "compute_bounds",
    "fold_layer",
    "forward",
    "load_dataset",
    "load_domain",
    "load_network",
    "magnitude_analysis",
    "merge_active",
    "preprocess",
    "remove_inactive",
    "run_baseline",
    "run_isa",
    "run_leo",
    "save_network",
    "solve_lp",
    "solve_milp",
    "verify_equivalence",
]
