"""
Command-line interface.

Commands:
    analyze   find stable neurons and write a stability report
    compress  analyze, compress exactly and verify the result
    oracle    compare the analysis with brute-force pattern enumeration
    bench     compare single-call analysis with the per-neuron baseline
    gen       write random test instances

Exit codes are the machine contract (see EXIT_CODES); human-readable output
goes to stderr.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple
import json
import logging
import logging.config

import numpy as np
import pandas as pd
import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from .bounds import classify_by_bounds, compute_bounds
from .compress import export_removed_connections, run_leo, verify_equivalence
from .constants import (
    COMPRESSION_SETTINGS,
    EXIT_CODES,
    GENERATOR_SETTINGS,
    ISA_SETTINGS,
    LOGGING_CONFIG,
    REPORT_SCHEMA_VERSION,
    SEARCH_SETTINGS,
    TOLERANCES,
)
from .netio import (
    Dataset,
    InputDomain,
    Network,
    build_domain,
    load_dataset,
    load_domain,
    load_network,
    random_network,
    save_dataset,
    save_domain,
    save_network,
)
from .optcore import SolverError
from .stability import (
    IsaConfig,
    IsaMode,
    IsaResult,
    StabilitySets,
    brute_force_oracle,
    preprocessing_error,
    run_baseline,
    run_isa,
)

logger = logging.getLogger(__name__)

console = Console(stderr=True)

app = typer.Typer(
    name="stablenet",
    help="Find stable ReLU neurons and compress networks exactly.",
    add_completion=False,
    no_args_is_help=True,
)

COMMANDS = ("analyze", "compress", "oracle", "bench", "gen")
MODES = {"single-call": IsaMode.SINGLE_CALL, "sequential": IsaMode.SEQUENTIAL, "preprocess-only": IsaMode.PREPROCESS_ONLY}


@dataclass
class RunConfig:
    """
    Options of one CLI invocation.

    Attributes:
        command: One of analyze, compress, oracle, bench, gen
        network: Network JSON (analyze, compress, oracle)
        domain: Domain JSON (analyze, compress, oracle)
        dataset: Optional dataset CSV
        output: Report, network or directory path depending on the command
        mode: ISA mode
        time_limit_s: Wall-clock limit of the analysis
        tol: Accepted equivalence residual
        seed: Seed for sampling and generation
        sum_bounds: Override of the domain's sum interval
        use_sum_constraint: Whether the sum interval is enforced
        uncertified_ok: Compress with sets that were not proved
    """
    command: str
    network: Optional[Path] = None
    domain: Optional[Path] = None
    dataset: Optional[Path] = None
    output: Optional[Path] = None
    mode: IsaMode = IsaMode(ISA_SETTINGS["MODE"])
    time_limit_s: float = SEARCH_SETTINGS["TIME_LIMIT_S"]
    tol: float = TOLERANCES["EQUIVALENCE"]
    seed: int = ISA_SETTINGS["SEED"]
    sum_bounds: Optional[Tuple[float, float]] = None
    use_sum_constraint: bool = ISA_SETTINGS["USE_SUM_CONSTRAINT"]
    uncertified_ok: bool = False

    def __post_init__(self) -> None:
        if self.command not in COMMANDS:
            raise ValueError(f"Unknown command {self.command!r}")
        if self.tol <= 0:
            raise ValueError(f"--tol must be positive, got {self.tol}")
        if self.time_limit_s <= 0:
            raise ValueError(f"--time-limit must be positive, got {self.time_limit_s}")
        if self.command in ("analyze", "compress", "oracle") and (self.network is None or self.domain is None):
            raise ValueError(f"{self.command} needs a network and a domain")
        if self.mode is IsaMode.PREPROCESS_ONLY and self.dataset is None:
            raise ValueError("preprocess-only mode needs --dataset")

    def isa_config(self) -> IsaConfig:
        return IsaConfig(
            mode=self.mode,
            time_limit=self.time_limit_s,
            use_sum_constraint=self.use_sum_constraint,
            seed=self.seed,
        )


def logging_dict(verbose: bool) -> Dict[str, object]:
    """dictConfig schema for LOGGING_CONFIG with a rich handler on the stderr console."""
    return {
        "version": LOGGING_CONFIG["version"],
        "disable_existing_loggers": LOGGING_CONFIG["disable_existing_loggers"],
        "formatters": {name: dict(spec) for name, spec in LOGGING_CONFIG["formatters"].items()},
        "handlers": {
            "rich": {
                "()": RichHandler,
                "console": console,
                "show_path": False,
                "show_time": False,
                "formatter": "standard",
            },
        },
        "root": {
            "level": LOGGING_CONFIG["verbose_level"] if verbose else LOGGING_CONFIG["level"],
            "handlers": ["rich"],
        },
    }


def _configure_logging(verbose: bool) -> None:
    logging.config.dictConfig(logging_dict(verbose))


def _parse_sum_bounds(text: Optional[str]) -> Optional[Tuple[float, float]]:
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"--sum-bounds expects LO,HI, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError as e:
        raise ValueError(f"--sum-bounds expects numbers, got {text!r}") from e


def _parse_mode(text: str) -> IsaMode:
    if text not in MODES:
        raise ValueError(f"--mode must be one of {', '.join(MODES)}, got {text!r}")
    return MODES[text]


def _fail(message: str, code: str) -> typer.Exit:
    console.print(f"[bold red]Error:[/bold red] {message}")
    return typer.Exit(code=EXIT_CODES[code])


def _load_inputs(cfg: RunConfig) -> Tuple[Network, InputDomain, Optional[Dataset]]:
    assert cfg.network is not None and cfg.domain is not None
    net = load_network(cfg.network)
    domain = load_domain(cfg.domain)
    if cfg.sum_bounds is not None:
        domain = domain.with_sum_bounds(cfg.sum_bounds)
    if domain.dim != net.input_dim:
        raise ValueError(f"Domain has {domain.dim} inputs, network expects {net.input_dim}")
    dataset = None
    if cfg.dataset is not None:
        dataset = load_dataset(cfg.dataset, domain, use_sum_constraint=cfg.use_sum_constraint)
    return net, domain, dataset


def _write_json(data: Dict[str, object], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(data, handle, indent=2)
        handle.write("\n")


def _stability_summary(net: Network, result: IsaResult) -> None:
    table = Table(title="Stable neurons", show_header=True, header_style="bold")
    table.add_column("Layer", justify="right")
    table.add_column("Width", justify="right")
    table.add_column("Inactive", justify="right")
    table.add_column("Active", justify="right")
    table.add_column("Unproven", justify="right")
    for layer, width in enumerate(net.hidden_widths):
        table.add_row(
            str(layer),
            str(width),
            str(len(result.stable_inactive[layer])),
            str(len(result.stable_active[layer])),
            str(len(result.unproven[layer])),
        )
    console.print(table)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_analyze(cfg: RunConfig, holdout: Optional[Path] = None) -> int:
    """Run bounds, preprocessing and ISA; write the stability report."""
    net, domain, dataset = _load_inputs(cfg)
    screened = classify_by_bounds(compute_bounds(net, domain))
    logger.info(f"Interval bounds alone decide {screened.num_stable} of {net.num_hidden_neurons} hidden neurons")
    result = run_isa(net, domain, dataset, cfg.isa_config())
    report = result.to_report()
    if holdout is not None:
        if dataset is None:
            raise ValueError("--holdout needs --dataset")
        held = load_dataset(holdout, domain, use_sum_constraint=cfg.use_sum_constraint)
        preprocessed = run_isa(net, domain, dataset, IsaConfig(mode=IsaMode.PREPROCESS_ONLY))
        guessed = StabilitySets(preprocessed.stable_inactive, preprocessed.stable_active)
        sets_error = preprocessing_error(net, guessed, held)
        report["preprocessing_error"] = sets_error
        logger.info(f"Held-out data contradicts {100.0 * sets_error:.2f}% of dataset-only stable neurons")
    if cfg.output is not None:
        _write_json(report, cfg.output)
    _stability_summary(net, result)
    return EXIT_CODES["OK"] if result.certified else EXIT_CODES["UNCERTIFIED"]


def cmd_compress(cfg: RunConfig, report_path: Optional[Path] = None, removed_csv: Optional[Path] = None,
                 samples: int = COMPRESSION_SETTINGS["EQUIVALENCE_SAMPLES"]) -> int:
    """Analyze, compress, verify and write the compressed network."""
    if cfg.output is None:
        raise ValueError("compress needs --output for the compressed network")
    net, domain, dataset = _load_inputs(cfg)
    if cfg.mode is IsaMode.PREPROCESS_ONLY and not cfg.uncertified_ok:
        raise ValueError("preprocess-only stable sets are not certified; pass --uncertified-ok to compress anyway")
    result = run_isa(net, domain, dataset, cfg.isa_config())
    if not result.certified and not cfg.uncertified_ok:
        console.print("[yellow]Analysis did not finish; refusing to compress with unproven sets[/yellow]")
        return EXIT_CODES["UNCERTIFIED"]
    compressed, report = run_leo(
        net,
        result,
        domain,
        allow_uncertified=cfg.uncertified_ok,
        n_samples=samples,
        seed=cfg.seed,
        use_sum_constraint=cfg.use_sum_constraint,
    )
    save_network(compressed, cfg.output)
    reloaded = load_network(cfg.output)
    reload_residual, _ = verify_equivalence(compressed, reloaded, domain, samples, cfg.seed, cfg.use_sum_constraint)
    if report_path is not None:
        _write_json(
            {"schema": REPORT_SCHEMA_VERSION, "stability": result.to_report(), "compression": report.to_dict()},
            report_path,
        )
    if removed_csv is not None:
        export_removed_connections(report, removed_csv)
    console.print(
        f"Removed {report.neurons_removed} of {report.original_neurons} hidden neurons "
        f"({report.connections_removed_pct:.1f}% of connections), residual {report.equivalence_residual:.3g}"
    )
    if reload_residual != 0.0:
        console.print(f"[bold red]Reloaded network differs from the in-memory result by {reload_residual:.3g}[/bold red]")
        return EXIT_CODES["EXACTNESS"]
    if report.equivalence_residual > cfg.tol:
        console.print(f"[bold red]Compressed network deviates by {report.equivalence_residual:.3g} > {cfg.tol:g}[/bold red]")
        return EXIT_CODES["EXACTNESS"]
    if not result.certified:
        console.print("[yellow]Compressed with unproven stable sets; the residual check above is the only guarantee[/yellow]")
    return EXIT_CODES["OK"]


def cmd_oracle(cfg: RunConfig) -> int:
    """Compare ISA with brute-force enumeration."""
    net, domain, _ = _load_inputs(cfg)
    oracle = brute_force_oracle(net, domain, cfg.use_sum_constraint)
    result = run_isa(net, domain, None, cfg.isa_config())
    agree = result.certified and (
        result.stable_inactive == oracle.stable_inactive and result.stable_active == oracle.stable_active
    )
    if cfg.output is not None:
        _write_json(
            {
                "schema": REPORT_SCHEMA_VERSION,
                "agree": agree,
                "oracle": {
                    "stable_inactive": [sorted(s) for s in oracle.stable_inactive],
                    "stable_active": [sorted(s) for s in oracle.stable_active],
                    "feasible_patterns": oracle.feasible_patterns,
                    "lp_checks": oracle.lp_checks,
                },
                "isa": result.to_report(),
            },
            cfg.output,
        )
    if not result.certified:
        return EXIT_CODES["UNCERTIFIED"]
    if not agree:
        console.print("[bold red]ISA and brute-force enumeration disagree[/bold red]")
        return EXIT_CODES["DISAGREEMENT"]
    console.print(f"ISA agrees with enumeration of {oracle.feasible_patterns} feasible patterns")
    return EXIT_CODES["OK"]


def _instance_paths(directory: Path) -> List[Tuple[str, Path, Path, Optional[Path]]]:
    instances = []
    for net_path in sorted(directory.glob("*.net.json")):
        name = net_path.name[: -len(".net.json")]
        domain_path = directory / f"{name}.domain.json"
        if not domain_path.exists():
            raise ValueError(f"Instance {name} has no domain file {domain_path.name}")
        csv_path = directory / f"{name}.csv"
        instances.append((name, net_path, domain_path, csv_path if csv_path.exists() else None))
    return instances


def _bench_instance(
    name: str,
    net_path: Path,
    domain_path: Path,
    csv_path: Optional[Path],
    time_limit: float,
) -> Dict[str, object]:
    net = load_network(net_path)
    domain = load_domain(domain_path)
    dataset = load_dataset(csv_path, domain) if csv_path is not None else None
    isa = run_isa(net, domain, dataset, IsaConfig(time_limit=time_limit))
    bare = run_isa(net, domain, dataset, IsaConfig(time_limit=time_limit, preprocess=False))
    baseline = run_baseline(net, domain, time_limit=time_limit)
    agree = (
        isa.certified
        and not any(baseline.unknown)
        and isa.stable_inactive == baseline.stable_inactive
        and isa.stable_active == baseline.stable_active
    )
    return {
        "instance": name,
        "neurons": net.num_hidden_neurons,
        "stable": isa.num_stable,
        "isa_nodes": isa.nodes,
        "isa_wall_s": isa.wall_time,
        "isa_nopre_nodes": bare.nodes,
        "baseline_nodes": baseline.nodes,
        "baseline_calls": baseline.solve_calls,
        "baseline_wall_s": baseline.wall_time,
        "wall_ratio": baseline.wall_time / isa.wall_time if isa.wall_time > 0 else float("nan"),
        "agree": agree,
    }


def cmd_bench(directory: Path, time_limit: float, workers: int, output: Optional[Path] = None) -> int:
    """Benchmark ISA against the per-neuron baseline on an instance directory."""
    if not directory.is_dir():
        raise ValueError(f"Instance directory {directory} does not exist")
    instances = _instance_paths(directory)
    if not instances:
        raise ValueError(f"No *.net.json instances in {directory}")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(pool.map(lambda entry: _bench_instance(*entry, time_limit), instances))
    frame = pd.DataFrame(rows)
    disagreeing = frame.loc[~frame["agree"], "instance"].tolist()
    frame = frame.drop(columns=["agree"])
    frame["median_wall_ratio"] = frame["wall_ratio"].median()
    text = frame.to_csv(index=False)
    if output is not None:
        output.write_text(text, encoding="utf-8")
    typer.echo(text, nl=False)
    if disagreeing:
        console.print(f"[bold red]Classification disagreement on: {', '.join(disagreeing)}[/bold red]")
        return EXIT_CODES["DISAGREEMENT"]
    return EXIT_CODES["OK"]


def cmd_gen(
    output: Path,
    seed: int,
    count: int,
    widths: List[int],
    input_dim: int,
    output_dim: int,
    bias_shift: float,
    dataset_rows: int,
    oracle_sized: bool = False,
) -> int:
    """Write count random instances into output."""
    if count < 1:
        raise ValueError(f"--count must be positive, got {count}")
    if oracle_sized and sum(widths) > 20:
        raise ValueError(f"Oracle-sized instances need at most 20 hidden neurons, got {sum(widths)}")
    output.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    domain = build_domain(np.zeros(input_dim), np.ones(input_dim))
    for index in range(count):
        net = random_network(rng, widths, input_dim, output_dim, bias_shift, GENERATOR_SETTINGS["BIAS_NOISE"])
        stem = output / f"net_{index:03d}"
        save_network(net, stem.with_name(stem.name + ".net.json"))
        save_domain(domain, stem.with_name(stem.name + ".domain.json"))
        if dataset_rows > 0:
            save_dataset(Dataset(rows=domain.sample(dataset_rows, rng)), stem.with_name(stem.name + ".csv"))
    console.print(f"Wrote {count} instances to {output}")
    return EXIT_CODES["OK"]


# ---------------------------------------------------------------------------
# Typer wiring
# ---------------------------------------------------------------------------

def _run(action: Callable[[], int]) -> None:
    try:
        code = action()
    except typer.Exit:
        raise
    except SolverError as e:
        raise _fail(f"solver failure: {e}", "SOLVER") from e
    except (ValueError, OSError) as e:
        raise _fail(str(e), "USAGE") from e
    raise typer.Exit(code=code)


@app.command()
def analyze(
    network: Path = typer.Argument(..., help="Network JSON file"),
    domain: Path = typer.Argument(..., help="Domain JSON file"),
    dataset: Optional[Path] = typer.Option(None, "--dataset", "-d", help="CSV of valid inputs for preprocessing"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Stability report JSON"),
    mode: str = typer.Option("single-call", "--mode", help="single-call, sequential or preprocess-only"),
    time_limit: float = typer.Option(SEARCH_SETTINGS["TIME_LIMIT_S"], "--time-limit", help="Seconds"),
    seed: int = typer.Option(ISA_SETTINGS["SEED"], "--seed"),
    sum_bounds: Optional[str] = typer.Option(None, "--sum-bounds", help="LO,HI interval for the input sum"),
    sum_constraint: bool = typer.Option(True, "--sum-constraint/--no-sum-constraint"),
    holdout: Optional[Path] = typer.Option(None, "--holdout", help="CSV to estimate the dataset-only error"),
    verbose: bool = typer.Option(False, "--verbose", "-v"),
) -> None:
    """Find all stably active and stably inactive neurons."""
    _configure_logging(verbose)
    _run(lambda: cmd_analyze(
        RunConfig(
            command="analyze",
            network=network,
            domain=domain,
            dataset=dataset,
            output=output,
            mode=_parse_mode(mode),
            time_limit_s=time_limit,
            seed=seed,
            sum_bounds=_parse_sum_bounds(sum_bounds),
            use_sum_constraint=sum_constraint,
        ),
        holdout,
    ))


@app.command()
def compress(
    network: Path = typer.Argument(..., help="Network JSON file"),
    domain: Path = typer.Argument(..., help="Domain JSON file"),
    output: Path = typer.Option(..., "--output", "-o", help="Compressed network JSON"),
    report: Optional[Path] = typer.Option(None, "--report", help="Stability and compression report JSON"),
    removed_csv: Optional[Path] = typer.Option(None, "--removed-csv", help="CSV of connections removed with inactive neurons"),
    dataset: Optional[Path] = typer.Option(None, "--dataset", "-d"),
    mode: str = typer.Option("single-call", "--mode"),
    time_limit: float = typer.Option(SEARCH_SETTINGS["TIME_LIMIT_S"], "--time-limit"),
    tol: float = typer.Option(TOLERANCES["EQUIVALENCE"], "--tol", help="Accepted output residual"),
    samples: int = typer.Option(COMPRESSION_SETTINGS["EQUIVALENCE_SAMPLES"], "--samples"),
    seed: int = typer.Option(ISA_SETTINGS["SEED"], "--seed"),
    sum_bounds: Optional[str] = typer.Option(None, "--sum-bounds"),
    sum_constraint: bool = typer.Option(True, "--sum-constraint/--no-sum-constraint"),
    uncertified_ok: bool = typer.Option(False, "--uncertified-ok", help="Compress with unproven stable sets"),
    verbose: bool = typer.Option(False, "--verbose", "-v"),
) -> None:
    """Compress a network exactly using its stable neurons."""
    _configure_logging(verbose)
    _run(lambda: cmd_compress(
        RunConfig(
            command="compress",
            network=network,
            domain=domain,
            dataset=dataset,
            output=output,
            mode=_parse_mode(mode),
            time_limit_s=time_limit,
            tol=tol,
            seed=seed,
            sum_bounds=_parse_sum_bounds(sum_bounds),
            use_sum_constraint=sum_constraint,
            uncertified_ok=uncertified_ok,
        ),
        report,
        removed_csv,
        samples,
    ))


@app.command()
def oracle(
    network: Path = typer.Argument(..., help="Network JSON file"),
    domain: Path = typer.Argument(..., help="Domain JSON file"),
    output: Optional[Path] = typer.Option(None, "--output", "-o"),
    mode: str = typer.Option("single-call", "--mode"),
    time_limit: float = typer.Option(SEARCH_SETTINGS["TIME_LIMIT_S"], "--time-limit"),
    sum_bounds: Optional[str] = typer.Option(None, "--sum-bounds"),
    verbose: bool = typer.Option(False, "--verbose", "-v"),
) -> None:
    """Check ISA against brute-force activation pattern enumeration."""
    _configure_logging(verbose)
    _run(lambda: cmd_oracle(
        RunConfig(
            command="oracle",
            network=network,
            domain=domain,
            output=output,
            mode=_parse_mode(mode),
            time_limit_s=time_limit,
            sum_bounds=_parse_sum_bounds(sum_bounds),
        )
    ))


@app.command()
def bench(
    directory: Path = typer.Argument(..., help="Directory of *.net.json / *.domain.json instances"),
    time_limit: float = typer.Option(SEARCH_SETTINGS["TIME_LIMIT_S"], "--time-limit"),
    workers: int = typer.Option(1, "--workers", help="Instances analyzed in parallel"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Also write the CSV here"),
    verbose: bool = typer.Option(False, "--verbose", "-v"),
) -> None:
    """Compare single-call ISA with the per-neuron baseline."""
    _configure_logging(verbose)
    _run(lambda: cmd_bench(directory, time_limit, workers, output))


@app.command()
def gen(
    output: Path = typer.Argument(..., help="Directory for the generated instances"),
    seed: int = typer.Option(ISA_SETTINGS["SEED"], "--seed"),
    count: int = typer.Option(GENERATOR_SETTINGS["COUNT"], "--count"),
    widths: str = typer.Option(",".join(map(str, GENERATOR_SETTINGS["WIDTHS"])), "--widths", help="Hidden widths, e.g. 4,4"),
    input_dim: int = typer.Option(GENERATOR_SETTINGS["INPUT_DIM"], "--input-dim"),
    output_dim: int = typer.Option(GENERATOR_SETTINGS["OUTPUT_DIM"], "--output-dim"),
    bias_shift: float = typer.Option(GENERATOR_SETTINGS["BIAS_SHIFT"], "--bias-shift"),
    dataset_rows: int = typer.Option(GENERATOR_SETTINGS["DATASET_ROWS"], "--dataset-rows"),
    oracle_sized: bool = typer.Option(False, "--oracle-sized", help="Require at most 20 hidden neurons"),
    verbose: bool = typer.Option(False, "--verbose", "-v"),
) -> None:
    """Generate random networks over [0,1]^d."""
    _configure_logging(verbose)

    def action() -> int:
        try:
            parsed = [int(w) for w in widths.split(",")]
        except ValueError as e:
            raise ValueError(f"--widths expects comma-separated integers, got {widths!r}") from e
        return cmd_gen(output, seed, count, parsed, input_dim, output_dim, bias_shift, dataset_rows, oracle_sized)

    _run(action)


def main() -> None:
    app()


if __name__ == "__main__":
    main()
