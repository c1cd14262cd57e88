from __future__ import annotations

# Core Imports
from typing import TYPE_CHECKING, Callable, Optional

# Local Imports
from core.dastr import (
    DastrConfig,
    DastrResult,
    StagedTrainingSet,
    dastr_run,
    dynamics_stage,
    uniform_stage,
)
from core.errors import ConfigError
from core.eval import concentration_fraction, curve_error, norm_histogram
from core.nets import CommittorNet
from core.potentials import BrownianAnnulus
from core.sde import sample_dynamics
from utils.config import ExperimentConfig, build_potential
from utils.experiment import Experiment, Summary
from utils.manifest import RunManifest

if TYPE_CHECKING:
    from runner import ExperimentRunner

# Norm band where the flow should concentrate samples near the isosurface
BAND = (1.2, 1.8)


class Brownian20(Experiment):
    """Brownian motion in a high-dimensional annulus with a closed-form committor"""

    name = "brownian20"

    def run(self, config: ExperimentConfig, manifest: RunManifest) -> Summary:
        potential = build_potential(config.potential)
        if not isinstance(potential, BrownianAnnulus):
            raise ConfigError("potential.id", "brownian20 needs 'brownian-annulus'")
        d = potential.dim
        n_curve = config.eval.curve_points

        def evaluate(net: CommittorNet) -> Optional[float]:
            return curve_error(net, potential, n_curve)

        def on_stage(k: int, tset: StagedTrainingSet, net: CommittorNet) -> None:
            payload = norm_histogram(tset.samples, 50, (potential.inner, potential.outer))
            self.write_histogram(manifest, f"histograms/norms_stage_{k:03d}.json", payload)

        initial = uniform_stage(potential, config.dastr.N_0, self.generator(config, "initial"))
        result = dastr_run(
            config.dastr,
            potential,
            self.build_net(config, d),
            self.build_flow(config, d, potential.box),
            StagedTrainingSet([initial]),
            config.seed,
            evaluate=evaluate,
            on_stage=on_stage,
            checkpoint_dir=self.checkpoint_dir(manifest),
            logger=self.logger,
        )
        self.write_dastr(manifest, result)
        summary: Summary = {
            "dastr_error": result.metrics[-1]["error"],
            "dastr_concentration": concentration_fraction(result.tset.samples, *BAND),
        }

        baseline = self.baseline_config(config)
        if config.baselines.uniform:
            uniform = self.baseline(
                config, baseline, potential, StagedTrainingSet([initial]), "uniform", evaluate
            )
            self.write_dastr(manifest, uniform, "uniform_")
            summary["uniform_error"] = uniform.metrics[-1]["error"]
            summary["uniform_concentration"] = concentration_fraction(uniform.tset.samples, *BAND)
        if config.baselines.sde:
            sde = self.baseline(
                config, baseline, potential, self.sde_training_set(config, potential), "sde", evaluate
            )
            self.write_dastr(manifest, sde, "sde_")
            summary["sde_error"] = sde.metrics[-1]["error"]
            summary["sde_concentration"] = concentration_fraction(sde.tset.samples, *BAND)

        self.write_summary(manifest, summary)
        self.logger.info(
            "summary: " + ", ".join(f"{k}={v:.4g}" for k, v in summary.items() if v is not None)
        )
        return summary

    def baseline(
        self,
        config: ExperimentConfig,
        baseline: DastrConfig,
        potential: BrownianAnnulus,
        tset: StagedTrainingSet,
        label: str,
        evaluate: Callable[[CommittorNet], Optional[float]],
    ) -> DastrResult:
        self.logger.info(f"baseline '{label}': {tset.total} fixed samples")
        d = potential.dim
        return dastr_run(
            baseline,
            potential,
            self.build_net(config, d, label),
            self.build_flow(config, d, potential.box, label),
            tset,
            config.seed,
            evaluate=evaluate,
            logger=self.logger,
        )

    def sde_training_set(
        self, config: ExperimentConfig, potential: BrownianAnnulus
    ) -> StagedTrainingSet:
        """Free Brownian walkers started uniformly in the annulus"""
        samples = sample_dynamics(
            potential,
            config.dastr.N_0,
            config.sde.dt,
            potential.beta,
            self.generator(config, "sde"),
            x0=self.walkers(config, potential, "sde"),
            burn_in=config.sde.burn_in,
            stride=config.sde.stride,
            max_steps=config.sde.max_steps,
        )
        stage = dynamics_stage(
            potential,
            samples,
            self.generator(config, "sde", "normalizer"),
            normalizer_samples=config.dastr.normalizer_samples,
        )
        return StagedTrainingSet([stage])


def setup(runner: ExperimentRunner) -> None:
    runner.add_experiment(Brownian20(runner))
