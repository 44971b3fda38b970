import logging
from multiprocessing import Pool
from pathlib import Path

import numpy

from config import ABLATION_FLAGS, METRICS_FILE

from .errors import ConfigError
from .models import AblationReport, AblationVariant, SweepCell, SweepReport
from .run_config import RunConfig, SweepGrid
from .training import read_metrics, train

logger = logging.getLogger("cadiff.sweep")

FULL_VARIANT = "full"
PLAIN_SAC_VARIANT = "plain_sac"


def final_return(run_dir: Path) -> float:
    """
    Mean evaluation return of the last epoch written to a run's metrics stream.
    """
    records = read_metrics(run_dir / METRICS_FILE)
    if not records:
        raise ConfigError(f"run {run_dir} finished without an evaluation epoch")
    return records[-1].return_mean


def _train_cell(cfg: RunConfig) -> float:
    return final_return(train(cfg))


def _check_evaluates(cfg: RunConfig) -> None:
    if cfg.total_steps < cfg.steps_per_epoch:
        raise ConfigError(
            f"total_steps {cfg.total_steps} is below steps_per_epoch {cfg.steps_per_epoch},"
            + " so no final return would be recorded"
        )


def _train_all(configs: list[RunConfig], jobs: int) -> list[float]:
    if jobs > 1:
        with Pool(processes=jobs) as pool:
            return pool.map(_train_cell, configs)
    return [_train_cell(cfg) for cfg in configs]


def sweep(base: RunConfig, grid: SweepGrid, jobs: int = 1) -> SweepReport:
    """
    Trains every noise scale x noise intensity cell with the same seeds and
    collects mean final returns, noise scales as rows.

    Raises:
        ConfigError: if a cell's config is invalid or would record no return.
    """
    _check_evaluates(base)
    base_dir = Path(base.run_dir)
    keys = [
        (scale, delta, seed)
        for scale in grid.noise_scale
        for delta in grid.noise_intensity
        for seed in grid.seeds
    ]
    configs = [
        base.with_updates(
            noise_scale=scale,
            delta=delta,
            seed=seed,
            run_dir=str(base_dir / f"scale_{scale:g}_delta_{delta}_seed_{seed}"),
        )
        for scale, delta, seed in keys
    ]
    logger.info("sweeping %d cells over %d seeds", len(configs) // len(grid.seeds), len(grid.seeds))
    returns = _train_all(configs, jobs)

    cells = [
        SweepCell(noise_scale=scale, noise_intensity=delta, seed=seed, final_return=value, run_dir=cfg.run_dir)
        for (scale, delta, seed), value, cfg in zip(keys, returns, configs)
    ]
    table = [
        [
            float(numpy.mean([c.final_return for c in cells if c.noise_scale == scale and c.noise_intensity == delta]))
            for delta in grid.noise_intensity
        ]
        for scale in grid.noise_scale
    ]
    for scale, row in zip(grid.noise_scale, table):
        logger.info("noise scale %g: %s", scale, "  ".join(f"{value:8.3f}" for value in row))
    return SweepReport(
        noise_scales=list(grid.noise_scale),
        noise_intensities=list(grid.noise_intensity),
        seeds=list(grid.seeds),
        table=table,
        cells=cells,
    )


def ablation_variants() -> dict[str, dict]:
    variants: dict[str, dict] = {FULL_VARIANT: {"ablations": [], "plain_sac": False}}
    for flag in ABLATION_FLAGS:
        variants[flag] = {"ablations": [flag], "plain_sac": False}
    variants[PLAIN_SAC_VARIANT] = {"ablations": [], "plain_sac": True}
    return variants


def ablation_study(base: RunConfig, seeds: list[int], jobs: int = 1) -> AblationReport:
    """
    Full model, each single-feature ablation and plain SAC on paired seeds.
    A variant wins on a seed when its final return beats the full model's.
    """
    _check_evaluates(base)
    if not seeds:
        raise ConfigError("ablation study needs at least one seed")
    base_dir = Path(base.run_dir)
    variants = ablation_variants()
    configs = [
        base.with_updates(seed=seed, run_dir=str(base_dir / f"{name}_seed_{seed}"), **changes)
        for name, changes in variants.items()
        for seed in seeds
    ]
    returns = numpy.array(_train_all(configs, jobs)).reshape(len(variants), len(seeds))
    full = returns[0]

    report = AblationReport(
        seeds=list(seeds),
        variants=[
            AblationVariant(
                name=name,
                returns=row.tolist(),
                mean_return=float(row.mean()),
                wins_over_full=int(numpy.sum(row > full)),
            )
            for name, row in zip(variants, returns)
        ],
    )
    for variant in report.variants:
        logger.info(
            "%-18s mean final return %8.3f, beats full on %d/%d seeds",
            variant.name, variant.mean_return, variant.wins_over_full, len(seeds),
        )
    return report
