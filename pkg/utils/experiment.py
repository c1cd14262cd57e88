from __future__ import annotations

# Core Imports
import dataclasses
import os
from abc import ABC, abstractmethod
from typing import TYPE_CHECKING, Dict, Mapping, Optional, Sequence, Tuple

# Third Party Imports
import torch

# Local Imports
from core.autodiff import Tensor, substream
from core.dastr import DastrConfig, DastrResult, Stage, calibrate_stage, dynamics_stage
from core.density import estimate_log_normalizer
from core.errors import EmptyIsosurfaceError
from core.eval import IsosurfaceReport, isosurface_histogram, write_histogram
from core.flow import FlowModel
from core.nets import CommittorNet, committor_widths
from core.potentials import Potential
from core.sde import identity_cv, metadynamics_run, sample_dynamics
from core.types import HistogramPayload
from .config import ExperimentConfig
from .logger import Logger
from .manifest import SUMMARY, RunManifest
from .metrics import write_stages, write_summary, write_timings

# Type Imports
if TYPE_CHECKING:
    from runner import ExperimentRunner

Summary = Dict[str, Optional[float]]


class Experiment(ABC):
    """
    Base class for an experiment extension, with a Logger of its own for
    the logs of one experiment id
    """

    name: str
    runner: ExperimentRunner
    logger: Logger

    def __init__(self, runner: ExperimentRunner) -> None:
        self.runner = runner
        self.logger = Logger(f"experiments/{self.name.replace('-', '_')}")

    @abstractmethod
    def run(self, config: ExperimentConfig, manifest: RunManifest) -> Summary:
        """Execute the experiment, write its artifacts and return the summary metrics"""

    # Shared builders

    @staticmethod
    def generator(config: ExperimentConfig, *labels: object) -> torch.Generator:
        return substream(config.seed, *labels)

    def build_net(self, config: ExperimentConfig, dim: int, *labels: object) -> CommittorNet:
        return CommittorNet(
            committor_widths(dim, config.net.neurons, config.net.layers),
            "tanh2" if config.net.activation == "tanh2" else "tanh",
            generator=self.generator(config, "net", *labels),
        )

    def build_flow(
        self,
        config: ExperimentConfig,
        dim: int,
        box: Optional[Tuple[Sequence[float], Sequence[float]]],
        *labels: object,
    ) -> FlowModel:
        return FlowModel(
            dim,
            blocks=config.flow.blocks,
            couplings_per_block=config.flow.couplings_per_block,
            width=config.flow.width,
            box=box if config.flow.bounded else None,
            s_max=config.flow.s_max,
            generator=self.generator(config, "flow", *labels),
        )

    @staticmethod
    def baseline_config(config: ExperimentConfig) -> DastrConfig:
        """Same sample and epoch budget as the adaptive run, with no flow updates"""
        return dataclasses.replace(config.dastr, train_flow=False, resume_from=None)

    # Initial stages

    def walkers(self, config: ExperimentConfig, potential: Potential, label: str) -> Tensor:
        x, _ = potential.sample_interior_uniform(
            config.sde.walkers, self.generator(config, label, "walkers")
        )
        return x

    def dynamics_initial_stage(
        self, config: ExperimentConfig, potential: Potential, beta: float, label: str
    ) -> Stage:
        """``N_0`` states of (possibly heated) overdamped Langevin dynamics"""
        gen = self.generator(config, label)
        samples = sample_dynamics(
            potential,
            config.dastr.N_0,
            config.sde.dt,
            beta,
            gen,
            x0=self.walkers(config, potential, label),
            burn_in=config.sde.burn_in,
            stride=config.sde.stride,
            max_steps=config.sde.max_steps,
        )
        self.logger.info(f"{label}: {samples.shape[0]} dynamics samples at beta={beta:g}")
        return dynamics_stage(
            potential,
            samples,
            self.generator(config, label, "normalizer"),
            beta=beta,
            normalizer_samples=config.dastr.normalizer_samples,
            source="sde",
        )

    def metadynamics_initial_stage(
        self, config: ExperimentConfig, potential: Potential, cv_dims: Sequence[int], label: str
    ) -> Stage:
        """``N_0`` states spread evenly over a metadynamics run on ``cv_dims``"""
        sde = config.sde
        result = metadynamics_run(
            potential,
            identity_cv(cv_dims),
            sde.mtd_height,
            sde.mtd_width,
            sde.mtd_interval,
            sde.mtd_deposits,
            sde.dt,
            potential.beta,
            self.generator(config, label),
            x0=self.walkers(config, potential, label),
            stride=sde.stride,
            bias_factor=sde.mtd_bias_factor,
        )
        samples = result.samples
        n = config.dastr.N_0
        if samples.shape[0] > n:
            index = torch.linspace(0, samples.shape[0] - 1, n).round().long()
            samples = samples[index]
        self.logger.info(
            f"{label}: {samples.shape[0]} metadynamics samples, {result.bias.deposits} deposits"
        )
        stage = dynamics_stage(
            potential,
            samples,
            self.generator(config, label, "normalizer"),
            bias=result.bias.value,
            normalizer_samples=config.dastr.normalizer_samples,
            source="metadynamics",
        )
        # The walkers saw a bias that grew over the run, the stored density
        # uses the final one; only the stage's overall scale is corrected
        log_z = estimate_log_normalizer(
            potential,
            self.generator(config, label, "gibbs"),
            config.dastr.normalizer_samples,
        )
        return calibrate_stage(stage, potential, log_z)

    # Evaluation

    def isosurface_pool(self, config: ExperimentConfig, potential: Potential) -> Tensor:
        x, _ = potential.sample_interior_uniform(
            config.eval.pool_size, self.generator(config, "isosurface", "pool")
        )
        return x

    def isosurface(
        self,
        config: ExperimentConfig,
        potential: Potential,
        net: CommittorNet,
        pool: Tensor,
        label: str,
    ) -> IsosurfaceReport:
        ev = config.eval
        return isosurface_histogram(
            net,
            pool,
            ev.isosurface_tol,
            potential,
            ev.n_traj,
            ev.dt,
            potential.beta,
            self.generator(config, "isosurface", label),
            bins=ev.bins,
            max_points=ev.isosurface_points,
            max_steps=ev.max_steps,
        )

    def isosurface_summary(
        self,
        config: ExperimentConfig,
        manifest: RunManifest,
        potential: Potential,
        net: CommittorNet,
        pool: Tensor,
        label: str,
        *,
        required: bool = True,
    ) -> Summary:
        """Oracle statistics on ``net``'s isosurface, with the histogram written to disk"""
        try:
            report = self.isosurface(config, potential, net, pool, label)
        except EmptyIsosurfaceError as e:
            if required:
                raise
            self.logger.warn(f"{label}: {e}")
            return {f"{label}_iso_mean": None, f"{label}_iso_sd": None, f"{label}_iso_size": 0.0}
        self.write_histogram(manifest, f"histograms/{label}_isosurface.json", report.histogram)
        return {
            f"{label}_iso_mean": report.mean,
            f"{label}_iso_sd": report.sd,
            f"{label}_iso_size": float(report.size),
        }

    # Artifacts

    def write_dastr(self, manifest: RunManifest, result: DastrResult, prefix: str = "") -> None:
        """``stages.csv`` and ``timings.csv`` for one adaptive run"""
        stages = manifest.add_metric(f"{prefix}stages", f"{prefix}stages.csv")
        write_stages(stages, result.metrics)
        write_timings(manifest.add_artifact(f"{prefix}timings.csv"), result.timings)

    def write_histogram(self, manifest: RunManifest, relative: str, payload: HistogramPayload) -> None:
        write_histogram(manifest.add_artifact(relative), payload)

    def write_summary(self, manifest: RunManifest, summary: Mapping[str, Optional[float]]) -> None:
        write_summary(manifest.add_metric("summary", SUMMARY), summary)

    def checkpoint_dir(self, manifest: RunManifest, name: str = "checkpoints") -> str:
        path = manifest.path(name)
        os.makedirs(path, exist_ok=True)
        return path
