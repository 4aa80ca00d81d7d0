"""
ExperimentOrchestrator coordinates repeated trials of the calibration protocol.

Every trial regenerates the cascade, draws disjoint splits from per-split seeds,
trains the downstream regressor and evaluates each requested calibration method
on the shared system-level test split.
"""

import asyncio
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from app.calibration.baselines import aci_frozen_half_width, aci_run, wcp_half_widths
from app.calibration.cluster_level import (
    calibrate_partition,
    cluster_diagnostics,
    fit_cluster_partition,
    route_half_widths,
)
from app.calibration.conformal import absolute_residuals, evaluate_arrays, fit_split, split_upper_target
from app.calibration.density_ratio import fit_density_ratio
from app.calibration.quantile import ScoreSet
from app.calibration.set_level import downstream_error_values, fit_set_level, propagated_error_values
from app.calibration.validation import predict_checked
from app.harness.experiment import ExperimentConfig, TrialResult, override_config, sweep_updates
from app.simulation.forest import fit_regressor
from app.simulation.system import CascadeSystem, SimulatedDataset, gen_dataset, gen_system
from app.utils.errors import ConfigError

logger = logging.getLogger(__name__)

SPLITS = ("train", "upstream", "downstream", "end2end", "test", "aci_stream")
_SEED_SLOTS = ("system", "model") + SPLITS


def trial_seeds(seed: int, trial: int) -> Dict[str, int]:
    """Independent sub-seeds for one trial, derived from (seed, trial)."""
    state = np.random.SeedSequence([int(seed), int(trial)]).generate_state(len(_SEED_SLOTS))
    return {slot: int(value) for slot, value in zip(_SEED_SLOTS, state)}


def split_sizes(cfg: ExperimentConfig) -> Dict[str, int]:
    return {
        "train": cfg.n_train,
        "upstream": cfg.n_cal_upstream,
        "downstream": cfg.n_cal_downstream,
        "end2end": cfg.n_cal_end2end,
        "test": cfg.n_test,
        "aci_stream": cfg.n_aci_stream,
    }


@dataclass(frozen=True)
class TrialData:
    trial: int
    seeds: Dict[str, int]
    system: CascadeSystem
    splits: Dict[str, SimulatedDataset]


def materialize_trial(
    cfg: ExperimentConfig, trial: int, splits: Sequence[str] = SPLITS, fit: bool = True
) -> TrialData:
    """
    Generate the cascade and the requested splits of one trial.

    Args:
        cfg: Experiment configuration
        trial: Trial index
        splits: Split names to draw (each from its own seed)
        fit: Train the downstream regressor on the "train" split

    Returns:
        TrialData; the system carries the fitted regressor when fit is set
    """
    seeds = trial_seeds(cfg.seed, trial)
    system = gen_system(seeds["system"], m=cfg.m, l=cfg.l, noise=cfg.noise, nonlinear=cfg.nonlinear)
    sizes = split_sizes(cfg)
    data = {name: gen_dataset(system, sizes[name], seeds[name]) for name in splits}
    if fit:
        g_hat = fit_regressor(
            data["train"].downstream(),
            seed=seeds["model"],
            kind=cfg.regressor,
            n_estimators=cfg.n_estimators,
            min_samples_leaf=cfg.min_samples_leaf,
        )
        system = system.with_regressor(g_hat)
    return TrialData(trial=trial, seeds=seeds, system=system, splits=data)


class Calibration(NamedTuple):
    alpha: float
    half_widths: Union[float, np.ndarray]
    q_hat: Optional[float]
    upper_target: Optional[float] = None


class _TrialContext:
    """Per-trial scores and predictions shared between methods."""

    def __init__(self, cfg: ExperimentConfig, data: TrialData):
        self.cfg = cfg
        self.data = data
        self.g_hat = data.system.g_hat
        self.diagnostics: List[Dict[str, Any]] = []

    def split(self, name: str) -> SimulatedDataset:
        return self.data.splits[name]

    @cached_property
    def test_centers(self) -> np.ndarray:
        return predict_checked(self.g_hat, self.split("test").Y_hat, 0, "g_hat")

    @cached_property
    def u_scores(self) -> np.ndarray:
        upstream = self.split("upstream")
        return propagated_error_values(upstream.upstream(), upstream.f_hat(), self.g_hat)

    @cached_property
    def w_scores(self) -> np.ndarray:
        return downstream_error_values(self.split("downstream").downstream(), self.g_hat)

    def wcp(self) -> Iterator[Calibration]:
        # Source: downstream training inputs; target: upstream predictions
        ratio = fit_density_ratio(
            self.split("train").Y, self.split("upstream").Y_hat, seed=self.data.seeds["model"]
        )
        cal_weights = ratio.weights(self.split("downstream").Y)
        test_weights = ratio.weights(self.split("test").Y_hat)
        for alpha in self.cfg.alphas:
            yield Calibration(alpha, wcp_half_widths(self.w_scores, cal_weights, test_weights, alpha), None)

    def aci(self) -> Iterator[Calibration]:
        stream = self.split("aci_stream")
        predictions = predict_checked(self.g_hat, stream.Y, 0, "g_hat")
        pairs = list(zip(predictions, stream.Z))
        cal = ScoreSet(self.w_scores)
        for alpha in self.cfg.alphas:
            _, state = aci_run(pairs, cal, alpha, gamma=self.cfg.aci_gamma, method=self.cfg.aci_method)
            half_width = aci_frozen_half_width(state, cal)
            yield Calibration(alpha, half_width, half_width)

    def end2end(self) -> Iterator[Calibration]:
        e2e = self.split("end2end")
        residuals = ScoreSet(
            absolute_residuals(predict_checked(self.g_hat, e2e.Y_hat, 0, "g_hat"), e2e.Z)
        )
        for alpha in self.cfg.alphas:
            c = fit_split(residuals, alpha, self.cfg.quantile_mode)
            yield Calibration(alpha, c.half_width, c.half_width, split_upper_target(alpha, c.n_cal))

    def set_level(self) -> Iterator[Calibration]:
        u, w = ScoreSet(self.u_scores), ScoreSet(self.w_scores)
        for alpha in self.cfg.alphas:
            c = fit_set_level(u, w, alpha, self.cfg.quantile_mode)
            yield Calibration(alpha, c.q_hat, c.q_hat)

    def cluster_level(self) -> Iterator[Calibration]:
        upstream = self.split("upstream")
        k = self.cfg.cluster_count
        partition = fit_cluster_partition(
            upstream.upstream(),
            self.split("downstream").downstream(),
            upstream.f_hat(),
            self.g_hat,
            k_f=k,
            k_g=k,
            seed=self.data.seeds["model"],
        )
        for alpha in self.cfg.alphas:
            c = calibrate_partition(partition, alpha, self.cfg.cluster_quantile_mode)
            if self.cfg.verbose:
                for row in cluster_diagnostics(c):
                    self.diagnostics.append({"trial": self.data.trial, "alpha": alpha, **row})
            yield Calibration(alpha, route_half_widths(c, self.split("test").Y_hat), None)


class ExperimentOrchestrator:
    """
    Runs the trials of one configuration concurrently and assembles the rows
    in (trial, method, alpha) order.
    """

    def __init__(self, cfg: ExperimentConfig):
        """
        Args:
            cfg: Validated experiment configuration
        """
        self.cfg = cfg
        self.diagnostics: List[Dict[str, Any]] = []

    def _splits_needed(self) -> Tuple[str, ...]:
        needed = {"train", "test"}
        if {"wcp", "set_level", "cluster_level"} & set(self.cfg.methods):
            needed |= {"upstream", "downstream"}
        if "aci" in self.cfg.methods:
            needed |= {"downstream", "aci_stream"}
        if "end2end" in self.cfg.methods:
            needed.add("end2end")
        return tuple(name for name in SPLITS if name in needed)

    def _run_trial_sync(
        self, trial: int, axis_name: Optional[str], axis_value
    ) -> Tuple[List[TrialResult], List[Dict[str, Any]]]:
        data = materialize_trial(self.cfg, trial, splits=self._splits_needed())
        ctx = _TrialContext(self.cfg, data)
        truths = data.splits["test"].Z
        rows = []
        for method in self.cfg.methods:
            for calibration in getattr(ctx, method)():
                report = evaluate_arrays(
                    ctx.test_centers, calibration.half_widths, truths, calibration.alpha, calibration.upper_target
                )
                rows.append(TrialResult(
                    trial=trial,
                    method=method,
                    alpha_target=calibration.alpha,
                    coverage=report.empirical_coverage,
                    avg_width_finite=report.avg_width_finite,
                    finite_fraction=report.finite_fraction,
                    q_hat=calibration.q_hat,
                    seed=self.cfg.seed,
                    axis_name=axis_name,
                    axis_value=axis_value,
                ))
        for row in ctx.diagnostics:
            row.update(axis_name=axis_name, axis_value=axis_value)
        return rows, ctx.diagnostics

    async def run_trial(
        self, trial: int, axis_name: Optional[str] = None, axis_value=None
    ) -> Tuple[List[TrialResult], List[Dict[str, Any]]]:
        """
        Run one trial in a worker thread.

        Returns:
            The trial's result rows and cluster diagnostics
        """
        try:
            rows, diagnostics = await asyncio.to_thread(self._run_trial_sync, trial, axis_name, axis_value)
        except Exception as e:
            logger.error(f"Trial {trial} failed: {str(e)}")
            raise
        logger.info(f"Finished trial {trial + 1}/{self.cfg.trials}")
        return rows, diagnostics

    async def run(self, axis_name: Optional[str] = None, axis_value=None) -> List[TrialResult]:
        """
        Run every trial of the configuration.

        Args:
            axis_name: Sweep axis the rows are tagged with, if any
            axis_value: Sweep value the rows are tagged with, if any

        Returns:
            TrialResult rows, trial-major, then method, then alpha
        """
        logger.info(
            f"Running {self.cfg.trials} trials of {', '.join(self.cfg.methods)} "
            f"at alphas {self.cfg.alphas} with {self.cfg.workers} workers"
        )
        semaphore = asyncio.Semaphore(self.cfg.workers)

        async def guarded(trial: int):
            async with semaphore:
                return await self.run_trial(trial, axis_name, axis_value)

        # gather keeps submission order whatever the completion order
        outcomes = await asyncio.gather(*(guarded(t) for t in range(self.cfg.trials)))
        results: List[TrialResult] = []
        for rows, diagnostics in outcomes:
            results.extend(rows)
            self.diagnostics.extend(diagnostics)
        return results

    async def sweep(self, axis: str, values: Sequence) -> List[TrialResult]:
        """
        Re-run the configuration once per axis value.

        All swept configurations are validated before the first trial starts.
        """
        if not values:
            raise ConfigError("a sweep needs at least one value")
        configs = [override_config(self.cfg, **sweep_updates(axis, value)) for value in values]
        results: List[TrialResult] = []
        for value, cfg in zip(values, configs):
            logger.info(f"Sweep {axis} = {value}")
            orchestrator = ExperimentOrchestrator(cfg)
            results.extend(await orchestrator.run(axis, value))
            self.diagnostics.extend(orchestrator.diagnostics)
        return results


def run_experiment(cfg: ExperimentConfig) -> List[TrialResult]:
    """Synchronous entry point for one configuration."""
    return asyncio.run(ExperimentOrchestrator(cfg).run())


def run_sweep(base: ExperimentConfig, axis: str, values: Sequence) -> List[TrialResult]:
    """Synchronous entry point for a sweep over one axis."""
    return asyncio.run(ExperimentOrchestrator(base).sweep(axis, values))
