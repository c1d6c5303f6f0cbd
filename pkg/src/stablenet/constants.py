"""
Constants and configuration for stablenet.

Tolerances, solver limits, generator defaults and exit codes used across the
package. Every other module reads its defaults from here so that a single
place documents the numerical contract of the analysis.
"""

from typing import Dict, Any
import logging

logger = logging.getLogger(__name__)

# Numerical tolerances
TOLERANCES = {
    "LP_FEASIBILITY": 1e-7,   # primal feasibility of every LP solution
    "LP_OPTIMALITY": 1e-7,    # dual feasibility / relative optimality
    "INTEGRALITY": 1e-6,      # |v - round(v)| below this counts as integral
    "GAP": 1e-6,              # absolute gap for a proved optimum
    "CANDIDATE": 1e-6,        # max violation accepted for heuristic incumbents
    "RANK": 1e-8,             # relative to the largest row norm
    "MERGE": 1e-7,            # reconstruction residual of a merged neuron
    "BOUND_SLACK": 1e-9,      # slack for bound soundness and domain membership
    "EQUIVALENCE": 1e-6,      # default residual tolerance for compressed networks
}

# Branch-and-bound limits
SEARCH_SETTINGS = {
    "TIME_LIMIT_S": 600.0,
    "NODE_LIMIT": None,             # unlimited
    "LP_METHOD": "highs-ds",        # HiGHS dual simplex
}

# ISA defaults
ISA_SETTINGS = {
    "MODE": "single_call",
    "SEED": 0,
    "PREPROCESS": True,
    "USE_SUM_CONSTRAINT": True,
}

# Compression and equivalence checking
COMPRESSION_SETTINGS = {
    "EQUIVALENCE_SAMPLES": 10_000,
    "MAX_VERTEX_DIM": 12,           # enumerate box vertices up to this input size
    "REJECTION_ROUNDS": 100,
}

# Brute-force oracle
ORACLE_SETTINGS = {
    "MAX_NEURONS": 20,
}

# Random instance generator
GENERATOR_SETTINGS = {
    "DEPTH": 2,
    "WIDTHS": (4, 4),
    "INPUT_DIM": 2,
    "OUTPUT_DIM": 1,
    "BIAS_SHIFT": 0.0,
    "BIAS_NOISE": 0.5,
    "COUNT": 20,
    "DATASET_ROWS": 0,
}

# CLI exit codes
EXIT_CODES = {
    "OK": 0,
    "USAGE": 2,                     # I/O and validation errors
    "UNCERTIFIED": 3,               # timeout or preprocess-only analysis
    "EXACTNESS": 4,                 # compressed network differs from original
    "DISAGREEMENT": 5,              # two stability procedures disagree
    "SOLVER": 6,                    # LP solver failed numerically
}

# Version of the JSON report layout
REPORT_SCHEMA_VERSION = 1

# Logging Configuration
LOGGING_CONFIG = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "standard": {
            "format": "%(name)s: %(message)s"
        },
    },
    "level": "INFO",
    "verbose_level": "DEBUG",
}

# Consolidated constants
STABLENET_CONSTANTS: Dict[str, Any] = {
    "tolerances": TOLERANCES,
    "search": SEARCH_SETTINGS,
    "isa": ISA_SETTINGS,
    "compression": COMPRESSION_SETTINGS,
    "oracle": ORACLE_SETTINGS,
    "generator": GENERATOR_SETTINGS,
    "exit_codes": EXIT_CODES,
}


def validate_constants() -> bool:
    """
    Validate that all constants are properly defined and consistent.

    Returns:
        bool: True if all validations pass

    Raises:
        ValueError: If any validation fails
    """
    logger.debug("Validating stablenet constants...")

    for name, value in TOLERANCES.items():
        if not (0 < value < 1e-2):
            raise ValueError(f"Tolerance {name} must lie in (0, 1e-2), got {value}")

    # An LP-feasible point must count as a valid heuristic incumbent
    if TOLERANCES["LP_FEASIBILITY"] > TOLERANCES["CANDIDATE"]:
        raise ValueError("LP feasibility tolerance exceeds candidate tolerance")

    # A rank-independent row can never pass as a merge
    if TOLERANCES["RANK"] > TOLERANCES["MERGE"]:
        raise ValueError("Rank tolerance must not exceed merge tolerance")

    if SEARCH_SETTINGS["TIME_LIMIT_S"] <= 0:
        raise ValueError(f"Invalid time limit: {SEARCH_SETTINGS['TIME_LIMIT_S']}")

    if ISA_SETTINGS["MODE"] not in ("single_call", "sequential", "preprocess_only"):
        raise ValueError(f"Unknown ISA mode: {ISA_SETTINGS['MODE']}")

    codes = list(EXIT_CODES.values())
    if len(set(codes)) != len(codes):
        raise ValueError(f"Exit codes are not distinct: {EXIT_CODES}")

    if len(GENERATOR_SETTINGS["WIDTHS"]) != GENERATOR_SETTINGS["DEPTH"]:
        raise ValueError("Generator widths must match generator depth")

    if LOGGING_CONFIG["version"] != 1:
        raise ValueError("logging.config.dictConfig only understands schema version 1")
    if "standard" not in LOGGING_CONFIG["formatters"]:
        raise ValueError("LOGGING_CONFIG needs a 'standard' formatter")

    logger.debug("All stablenet constants validated successfully")
    return True


# Validate constants on import
if __name__ != "__main__":
    validate_constants()
