from __future__ import annotations

# Core Imports
from typing import TYPE_CHECKING, Dict

# Local Imports
from core.dastr import Stage, StagedTrainingSet, dastr_run, uniform_stage
from core.errors import ConfigError
from core.potentials import RuggedMueller
from utils.config import ExperimentConfig, build_potential
from utils.experiment import Experiment, Summary
from utils.manifest import RunManifest

if TYPE_CHECKING:
    from runner import ExperimentRunner


class RuggedMueller10(Experiment):
    """
    Rugged Mueller potential, optionally extended by harmonic coordinates.

    The initial stage comes from artificial-temperature dynamics. Accuracy
    is judged by the trajectory oracle on the model's 1/2-isosurface, for
    the adaptive run and for each enabled baseline at the same budget.
    """

    name = "rugged-mueller10"

    def run(self, config: ExperimentConfig, manifest: RunManifest) -> Summary:
        potential = build_potential(config.potential)
        if not isinstance(potential, RuggedMueller):
            raise ConfigError("potential.id", "rugged-mueller10 needs 'rugged-mueller'")
        d = potential.dim
        beta_initial = config.sde.beta_initial or config.baselines.beta_artificial

        initial = self.dynamics_initial_stage(config, potential, beta_initial, "initial")
        result = dastr_run(
            config.dastr,
            potential,
            self.build_net(config, d),
            self.build_flow(config, d, potential.box),
            StagedTrainingSet([initial]),
            config.seed,
            checkpoint_dir=self.checkpoint_dir(manifest),
            logger=self.logger,
        )
        self.write_dastr(manifest, result)

        pool = self.isosurface_pool(config, potential)
        summary: Summary = self.isosurface_summary(
            config, manifest, potential, result.net, pool, "dastr"
        )

        baselines: Dict[str, Stage] = {}
        if config.baselines.artificial_temperature:
            baselines["artificial_temperature"] = initial
        if config.baselines.uniform:
            baselines["uniform"] = uniform_stage(
                potential, config.dastr.N_0, self.generator(config, "uniform")
            )
        if config.baselines.metadynamics:
            baselines["metadynamics"] = self.metadynamics_initial_stage(
                config, potential, [0, 1], "metadynamics"
            )
        if config.baselines.sde:
            baselines["sde"] = self.dynamics_initial_stage(config, potential, potential.beta, "sde")

        budget = self.baseline_config(config)
        for label, stage in baselines.items():
            self.logger.info(f"baseline '{label}': {stage.count} fixed samples")
            fixed = dastr_run(
                budget,
                potential,
                self.build_net(config, d, label),
                self.build_flow(config, d, potential.box, label),
                StagedTrainingSet([stage]),
                config.seed,
                logger=self.logger,
            )
            self.write_dastr(manifest, fixed, f"{label}_")
            summary.update(
                self.isosurface_summary(
                    config, manifest, potential, fixed.net, pool, label, required=False
                )
            )

        self.write_summary(manifest, summary)
        return summary


def setup(runner: ExperimentRunner) -> None:
    runner.add_experiment(RuggedMueller10(runner))
