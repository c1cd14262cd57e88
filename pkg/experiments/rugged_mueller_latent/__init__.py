from __future__ import annotations

# Core Imports
from typing import TYPE_CHECKING, List, Optional, Tuple

# Third Party Imports
import torch

# Local Imports
from core.dastr import DastrResult, Stage, StagedTrainingSet, dastr_latent_run
from core.errors import ConfigError
from core.eval import histogram
from core.flow import FlowModel
from core.latent import LatentPipeline, latent_box, train_autoencoder
from core.nets import CommittorNet
from core.potentials import RuggedMueller
from utils.config import ExperimentConfig, build_potential
from utils.experiment import Experiment, Summary
from utils.manifest import RunManifest

if TYPE_CHECKING:
    from runner import ExperimentRunner

# Decoded samples drawn after the run for the energy histogram
ENERGY_SAMPLES = 5000


class RuggedMuellerLatent(Experiment):
    """
    Adaptive sampling of the extended rugged Mueller potential with the flow
    on two or three collective variables.

    ``latent.mode = autoencoder`` learns the CVs from artificial-temperature
    data; ``latent.mode = umbrella`` uses the first coordinates as CVs, starts
    from metadynamics and relaxes new configurations with umbrella restraints.
    """

    name = "rugged-mueller-latent"

    def run(self, config: ExperimentConfig, manifest: RunManifest) -> Summary:
        potential = build_potential(config.potential)
        if not isinstance(potential, RuggedMueller):
            raise ConfigError("potential.id", "rugged-mueller-latent needs 'rugged-mueller'")
        latent = config.latent
        if any(not 0 <= i < potential.dim for i in latent.cv_dims):
            raise ConfigError("latent.cv_dims", f"indices must lie in [0, {potential.dim})")

        net = self.build_net(config, potential.dim)
        summary: Summary = {}
        if latent.mode == "autoencoder":
            beta = config.sde.beta_initial or config.baselines.beta_artificial
            initial = self.dynamics_initial_stage(config, potential, beta, "initial")
            pipeline, mse = self.pipeline(config, potential, initial)
            summary["autoencoder_mse"] = mse
            result = self.adaptive(config, potential, net, pipeline.flow, initial, pipeline, manifest)
            summary["acceptance_final"] = self.final_acceptance(result)
            summary["acceptance_overall"] = pipeline.acceptance
            self.write_energy_histogram(config, manifest, pipeline)
        else:
            initial = self.metadynamics_initial_stage(config, potential, latent.cv_dims, "initial")
            lower, upper = potential.box
            box = ([lower[i] for i in latent.cv_dims], [upper[i] for i in latent.cv_dims])
            flow = self.build_flow(config, len(latent.cv_dims), box)
            result = self.adaptive(config, potential, net, flow, initial, None, manifest)
            summary["acceptance_final"] = self.final_acceptance(result)

        self.write_dastr(manifest, result)
        pool = self.isosurface_pool(config, potential)
        summary.update(self.isosurface_summary(config, manifest, potential, result.net, pool, "dastr"))
        self.write_summary(manifest, summary)
        return summary

    def pipeline(
        self, config: ExperimentConfig, potential: RuggedMueller, initial: Stage
    ) -> Tuple[LatentPipeline, float]:
        latent = config.latent
        encoder, decoder = latent.widths(potential.dim)
        trained = train_autoencoder(
            initial.samples,
            encoder,
            decoder,
            epochs=latent.ae_epochs,
            batch_size=latent.ae_batch_size,
            lr=latent.ae_lr,
            generator=self.generator(config, "autoencoder"),
            activation="linear" if latent.activation == "linear" else "swish",
        )
        with torch.no_grad():
            encoded = trained.model.encode(initial.samples)
        box = latent_box(encoded, latent.box_padding) if latent.bounded else None
        flow = self.build_flow(config, latent.latent_dim, box)
        pipeline = LatentPipeline(trained.model, flow, potential, latent.energy_threshold)
        return pipeline, trained.mse

    def adaptive(
        self,
        config: ExperimentConfig,
        potential: RuggedMueller,
        net: CommittorNet,
        flow: FlowModel,
        initial: Stage,
        pipeline: Optional[LatentPipeline],
        manifest: RunManifest,
    ) -> DastrResult:
        return dastr_latent_run(
            config.dastr,
            config.latent,
            potential,
            net,
            flow,
            StagedTrainingSet([initial]),
            config.seed,
            pipeline=pipeline,
            checkpoint_dir=self.checkpoint_dir(manifest),
            logger=self.logger,
        )

    @staticmethod
    def final_acceptance(result: DastrResult) -> Optional[float]:
        """Acceptance of the last stage that drew new samples"""
        values: List[float] = [
            m["acceptance"] for m in result.metrics if m["acceptance"] is not None
        ]
        return values[-1] if values else None

    def write_energy_histogram(
        self, config: ExperimentConfig, manifest: RunManifest, pipeline: LatentPipeline
    ) -> None:
        with torch.no_grad():
            s, _ = pipeline.flow.sample(ENERGY_SAMPLES, self.generator(config, "energies"))
            energy = pipeline.potential.energy(pipeline.decode(s))
        finite = energy[torch.isfinite(energy)]
        if finite.numel() == 0:
            self.logger.warn("No finite decoded energies to histogram")
            return
        lo, hi = float(finite.min()), float(finite.max())
        payload = histogram(finite, config.eval.bins, (lo, hi if hi > lo else lo + 1.0))
        self.write_histogram(manifest, "histograms/decoded_energy.json", payload)


def setup(runner: ExperimentRunner) -> None:
    runner.add_experiment(RuggedMuellerLatent(runner))
