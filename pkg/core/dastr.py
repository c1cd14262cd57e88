"""
Adaptive training of neural committor functions.

Each stage trains ``q_theta`` on a staged training set with the importance
sampled variational loss, fits a density model to ``|grad q|^2 exp(-beta V)``
by cross entropy, draws the next stage from it and refines the training set.

Stored densities
----------------
Every stage keeps ``log p_j(x)`` for its samples, normalized over the box
minus A and B:

* uniform and flow stages divide the sampler's density by its rejection
  acceptance rate;
* dynamics stages (SDE, artificial temperature, metadynamics) store
  ``-beta' (V + V_bias) - log Z`` with ``Z`` from uniform Monte Carlo;
* latent and umbrella stages only know their density up to a constant,
  which is calibrated so the mean Gibbs ratio of the stage is one.
"""

from __future__ import annotations

# Core Imports
import copy
import math
import os
import time
from dataclasses import dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence, Tuple

# Third Party Imports
import torch
from torch import nn

# Local Imports
from utils.logger import Logger
from .autodiff import Tensor, substream
from .checkpoint import load, load_module, save, save_module
from .density import (
    BiasFn,
    estimate_log_normalizer,
    gibbs_log_ratio,
    sampling_density_unnorm,
)
from .errors import (
    CommittorError,
    ConfigError,
    DomainError,
    EmptyStageError,
    FilterError,
    ImportanceWeightError,
    StageError,
    TrainingDivergedError,
)
from .flow import FlowModel, train_flow_ce
from .latent import (
    LatentConfig,
    LatentPipeline,
    decode_and_filter,
    energy_histogram,
    latent_ce_weights,
)
from .nets import CommittorNet
from .potentials import Potential
from .sde import UmbrellaBias, identity_cv, umbrella_relax
from .types import StageMetrics, StageTiming

__all__ = (
    "POLICIES",
    "WEIGHTINGS",
    "DastrConfig",
    "Stage",
    "StagedTrainingSet",
    "AdaptiveLoop",
    "LossBreakdown",
    "BoundarySet",
    "DastrResult",
    "sampling_density_unnorm",
    "estimate_log_normalizer",
    "uniform_stage",
    "dynamics_stage",
    "calibrate_stage",
    "variational_loss",
    "train_committor",
    "refine_training_set",
    "dastr_run",
    "dastr_latent_run",
)

POLICIES = ("replace-all", "keep-fraction", "accumulate")
WEIGHTINGS = ("as-printed", "stage-balanced")

Evaluate = Callable[[CommittorNet], Optional[float]]
OnStage = Callable[[int, "StagedTrainingSet", CommittorNet], None]


@dataclass(frozen=True)
class DastrConfig:
    """
    Adaptive-loop settings. Counts keep their usual symbols: ``N_adaptive``
    stages, ``N_e`` / ``N_e_flow`` epochs, ``m`` / ``m_flow`` batch sizes,
    ``N_0`` initial samples, ``N_A`` / ``N_B`` boundary samples.
    """

    N_adaptive: int = 1
    N_e: int = 100
    N_e_flow: int = 50
    m: int = 1000
    m_flow: int = 1000
    N_0: int = 5000
    N_A: int = 1000
    N_B: int = 1000
    boundary_batch: int = 100
    penalty: float = 10.0
    policy: str = "replace-all"
    keep_fraction: float = 0.5
    stage_size: Optional[int] = None
    weighting: str = "as-printed"
    lr: float = 1e-3
    lr_decay: float = 0.8
    decay_every: int = 200
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    flow_lr: float = 1e-3
    biased: bool = False
    train_flow: bool = True
    normalize_gibbs: bool = False
    normalizer_samples: int = 100_000
    max_skipped: float = 0.05
    max_rejected_weights: float = 0.10
    resume_from: Optional[str] = None

    def __post_init__(self) -> None:
        for name in ("N_adaptive", "N_e", "N_e_flow", "m", "m_flow", "N_0", "N_A", "N_B",
                     "boundary_batch", "decay_every", "normalizer_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"dastr.{name}", "must be a positive count")
        if self.stage_size is not None and self.stage_size < 1:
            raise ConfigError("dastr.stage_size", "must be a positive count")
        if self.penalty <= 0:
            raise ConfigError("dastr.penalty", "must be > 0")
        if self.policy not in POLICIES:
            raise ConfigError("dastr.policy", f"must be one of {POLICIES}")
        if self.weighting not in WEIGHTINGS:
            raise ConfigError("dastr.weighting", f"must be one of {WEIGHTINGS}")
        if not 0 < self.keep_fraction < 1:
            raise ConfigError("dastr.keep_fraction", "must lie in (0, 1)")
        if self.lr <= 0 or self.flow_lr <= 0:
            raise ConfigError("dastr.lr", "learning rates must be > 0")

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]


@dataclass
class Stage:
    """Samples of one stage and the log-density they were drawn from"""

    samples: Tensor
    log_density: Tensor
    source: str = "uniform"

    def __post_init__(self) -> None:
        if self.samples.dim() != 2 or self.log_density.shape != (self.samples.shape[0],):
            raise ValueError("Stage needs samples (n, d) and log-densities (n,)")
        if not bool(torch.isfinite(self.log_density).all()):
            raise ValueError(f"Stage '{self.source}' has non-finite stored log-densities")

    @property
    def count(self) -> int:
        return int(self.samples.shape[0])

    def head(self, n: int) -> Stage:
        return Stage(self.samples[:n], self.log_density[:n], self.source)


class StagedTrainingSet:
    """
    Interior training samples grouped by the stage that produced them.

    The mixture weights are ``alpha_j = n_j / sum n_j``.
    """

    def __init__(self, stages: Sequence[Stage]) -> None:
        if not stages or any(s.count == 0 for s in stages):
            raise EmptyStageError("A training set needs at least one non-empty stage")
        self.stages: List[Stage] = list(stages)

    def __len__(self) -> int:
        return self.total

    @property
    def counts(self) -> List[int]:
        return [s.count for s in self.stages]

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def alphas(self) -> List[float]:
        total = self.total
        return [n / total for n in self.counts]

    @property
    def samples(self) -> Tensor:
        return torch.cat([s.samples for s in self.stages])

    @property
    def log_density(self) -> Tensor:
        return torch.cat([s.log_density for s in self.stages])

    @property
    def stage_index(self) -> Tensor:
        return torch.cat(
            [torch.full((s.count,), j, dtype=torch.int64) for j, s in enumerate(self.stages)]
        )

    def check(self, potential: Potential) -> None:
        """Every interior sample lies inside the box and outside A and B"""
        x = self.samples
        bad = ~potential.contains(x) | potential.in_ab(x)
        if bool(bad.any()):
            raise DomainError("StagedTrainingSet", int(bad.sum()))

    def batch_sizes(self, m: int) -> List[int]:
        return [max(1, round(m * a)) for a in self.alphas]

    def draw(self, m: int, generator: torch.Generator) -> Tensor:
        """Indices of a minibatch stratified by stage, ``m_j = max(1, round(m alpha_j))``"""
        offsets = [0]
        for n in self.counts:
            offsets.append(offsets[-1] + n)
        parts = [
            offsets[j] + torch.randint(n, (size,), generator=generator)
            for j, (n, size) in enumerate(zip(self.counts, self.batch_sizes(m)))
        ]
        return torch.cat(parts)

    def to_tensors(self) -> Tuple[Dict[str, Tensor], Dict[str, object]]:
        tensors = {
            "samples": self.samples,
            "log_density": self.log_density,
            "counts": torch.tensor(self.counts, dtype=torch.int64),
        }
        return tensors, {"sources": [s.source for s in self.stages]}

    @classmethod
    def from_tensors(cls, tensors: Dict[str, Tensor], meta: Dict[str, object]) -> StagedTrainingSet:
        sources = meta.get("sources", [])
        assert isinstance(sources, list)
        stages: List[Stage] = []
        start = 0
        for j, n in enumerate(tensors["counts"].tolist()):
            part = slice(start, start + n)
            stages.append(
                Stage(tensors["samples"][part], tensors["log_density"][part], str(sources[j]))
            )
            start += n
        return cls(stages)


def uniform_stage(potential: Potential, n: int, generator: torch.Generator) -> Stage:
    x, log_density = potential.sample_interior_uniform(n, generator)
    return Stage(x, torch.full((x.shape[0],), log_density), "uniform")


def dynamics_stage(
    potential: Potential,
    samples: Tensor,
    generator: torch.Generator,
    *,
    beta: Optional[float] = None,
    bias: Optional[BiasFn] = None,
    normalizer_samples: int = 100_000,
    source: str = "sde",
) -> Stage:
    """Stage for samples of (biased) dynamics at inverse temperature ``beta``"""
    beta = potential.beta if beta is None else beta
    log_z = estimate_log_normalizer(
        potential, generator, normalizer_samples, beta=beta, bias=bias
    )
    with torch.no_grad():
        energy = potential.energy(samples)
        if bias is not None:
            energy = energy + bias(samples)
    return Stage(samples, -beta * energy - log_z, source)


@torch.no_grad()
def calibrate_stage(stage: Stage, potential: Potential, log_normalizer: float) -> Stage:
    """Shift a stage's log-density by a constant so its mean Gibbs ratio is one"""
    log_ratio = gibbs_log_ratio(
        potential, stage.samples, stage.log_density, log_normalizer=log_normalizer
    )
    finite = log_ratio[torch.isfinite(log_ratio)]
    if finite.numel() == 0:
        return stage
    shift = torch.logsumexp(finite, dim=0) - math.log(finite.numel())
    return Stage(stage.samples, stage.log_density + shift, stage.source)


@dataclass
class BoundarySet:
    a: Tensor
    b: Tensor

    @classmethod
    def sample(
        cls, potential: Potential, n_a: int, n_b: int, generator: torch.Generator
    ) -> BoundarySet:
        return cls(
            potential.sample_boundary("A", n_a, generator),
            potential.sample_boundary("B", n_b, generator),
        )


@dataclass
class LossBreakdown:
    total: Tensor
    interior: float
    penalty: float
    skipped: int
    considered: int


def variational_loss(
    net: CommittorNet,
    x: Tensor,
    log_ratio: Tensor,
    stage: Tensor,
    alphas: Sequence[float],
    a_points: Tensor,
    b_points: Tensor,
    penalty: float,
    *,
    weighting: str = "as-printed",
    max_skipped: float = 0.05,
) -> LossBreakdown:
    """
    Importance-sampled variational loss on one minibatch.

    ``log_ratio`` is ``log(exp(-beta V) / p_j)`` per sample and ``stage`` the
    stage index ``j``. The interior term is
    ``sum_j c_j mean_{i in batch_j} |grad q(x_i)|^2 exp(log_ratio_i)`` with
    ``c_j = alpha_j`` (as printed) or ``1 / K`` (stage-balanced); the penalty
    is ``penalty * (mean q^2 on A + mean (1 - q)^2 on B)``.
    """
    n = x.shape[0]
    ratio = torch.exp(log_ratio)
    valid = torch.isfinite(ratio)
    skipped = int((~valid).sum())
    if skipped > max_skipped * n:
        raise ImportanceWeightError("variational_loss", skipped, n, max_skipped)
    ratio = torch.where(valid, ratio, torch.zeros_like(ratio))

    g = net.input_gradient(x)
    terms = (g**2).sum(dim=-1) * ratio
    k = len(alphas)
    sums = torch.zeros(k, dtype=terms.dtype).index_add(0, stage, terms)
    counts = torch.zeros(k, dtype=terms.dtype).index_add(0, stage, valid.to(terms.dtype))
    present = counts > 0
    means = sums / counts.clamp_min(1.0)
    if weighting == "as-printed":
        coef = torch.as_tensor(list(alphas), dtype=terms.dtype)
    else:
        coef = present.to(terms.dtype) / present.sum().clamp_min(1)
    interior = (coef * means).sum()

    q_a = net(a_points)
    q_b = net(b_points)
    boundary = penalty * ((q_a**2).mean() + ((1.0 - q_b) ** 2).mean())
    total = interior + boundary
    return LossBreakdown(total, float(interior.detach()), float(boundary.detach()), skipped, n)


@dataclass
class EpochStats:
    loss: float
    interior: float
    penalty: float


def train_committor(
    net: CommittorNet,
    tset: StagedTrainingSet,
    log_ratio: Tensor,
    boundary: BoundarySet,
    config: DastrConfig,
    optimizer: torch.optim.Optimizer,
    scheduler: Optional[torch.optim.lr_scheduler.StepLR],
    generator: torch.Generator,
    *,
    epochs: Optional[int] = None,
    epoch_offset: int = 0,
) -> List[EpochStats]:
    """
    ``epochs`` epochs of Adam on the variational loss. One epoch is
    ``ceil(|S| / m)`` minibatch steps; the scheduler steps once per epoch.
    """
    epochs = config.N_e if epochs is None else epochs
    steps = math.ceil(tset.total / config.m)
    x_all = tset.samples
    stage_all = tset.stage_index
    alphas = tset.alphas
    history: List[EpochStats] = []
    for epoch in range(epochs):
        loss_sum = interior_sum = penalty_sum = 0.0
        for _ in range(steps):
            idx = tset.draw(config.m, generator)
            ia = torch.randint(boundary.a.shape[0], (config.boundary_batch,), generator=generator)
            ib = torch.randint(boundary.b.shape[0], (config.boundary_batch,), generator=generator)
            out = variational_loss(
                net,
                x_all[idx],
                log_ratio[idx],
                stage_all[idx],
                alphas,
                boundary.a[ia],
                boundary.b[ib],
                config.penalty,
                weighting=config.weighting,
                max_skipped=config.max_skipped,
            )
            optimizer.zero_grad()
            out.total.backward()
            optimizer.step()
            loss_sum += float(out.total.detach())
            interior_sum += out.interior
            penalty_sum += out.penalty
        if not math.isfinite(loss_sum):
            raise TrainingDivergedError("committor", epoch_offset + epoch)
        if scheduler is not None:
            scheduler.step()
        history.append(EpochStats(loss_sum / steps, interior_sum / steps, penalty_sum / steps))
    return history


def refine_training_set(
    tset: StagedTrainingSet,
    new: Stage,
    policy: str,
    *,
    keep: Optional[int] = None,
) -> StagedTrainingSet:
    """
    Add a freshly generated stage.

    ``replace-all`` keeps only the new stage; ``keep-fraction`` keeps the
    first ``keep`` points of the initial stage and the new stage;
    ``accumulate`` keeps every stage.
    """
    if new.count == 0:
        raise EmptyStageError("Refinement received an empty stage")
    if policy == "replace-all":
        return StagedTrainingSet([new])
    if policy == "keep-fraction":
        if keep is None or keep < 1:
            raise ValueError("keep-fraction needs a positive 'keep' count")
        return StagedTrainingSet([tset.stages[0].head(keep), new])
    if policy == "accumulate":
        return StagedTrainingSet([*tset.stages, new])
    raise ValueError(f"Unknown refinement policy '{policy}'")


@dataclass
class DastrResult:
    net: CommittorNet
    tset: StagedTrainingSet
    metrics: List[StageMetrics] = field(default_factory=lambda: [])
    timings: List[StageTiming] = field(default_factory=lambda: [])
    loss_trace: List[float] = field(default_factory=lambda: [])


Proposal = Callable[[int, StagedTrainingSet], Optional[Tuple[Stage, Optional[float]]]]

GENERATORS = ("batches", "flow", "sample", "boundary", "normalizer")


class AdaptiveLoop:
    """Stage loop shared by the configuration-space and latent-space runs"""

    def __init__(
        self,
        config: DastrConfig,
        potential: Potential,
        net: CommittorNet,
        seed: int,
        modules: Dict[str, nn.Module],
        *,
        checkpoint_dir: Optional[str],
        evaluate: Optional[Evaluate],
        on_stage: Optional[OnStage],
        logger: Logger,
        calibrates: bool = False,
    ) -> None:
        self.config = config
        self.potential = potential
        self.net = net
        self.modules = modules
        self.checkpoint_dir = checkpoint_dir
        self.evaluate = evaluate
        self.on_stage = on_stage
        self.logger = logger
        self.generators = {name: substream(seed, "dastr", name) for name in GENERATORS}
        self.optimizer = torch.optim.Adam(
            net.parameters(), lr=config.lr, betas=config.adam_betas, eps=config.adam_eps
        )
        self.scheduler = torch.optim.lr_scheduler.StepLR(
            self.optimizer, step_size=config.decay_every, gamma=config.lr_decay
        )
        self.boundary = BoundarySet.sample(
            potential, config.N_A, config.N_B, self.generators["boundary"]
        )
        # log Z of exp(-beta V) over the box minus A and B. Calibrated stages
        # need it; the loss target only divides by it with normalize_gibbs
        self.log_normalizer = 0.0
        if config.normalize_gibbs or calibrates:
            self.log_normalizer = estimate_log_normalizer(
                potential, self.generators["normalizer"], config.normalizer_samples
            )
        self.result_metrics: List[StageMetrics] = []
        self.result_timings: List[StageTiming] = []
        self.loss_trace: List[float] = []
        self.epochs_done = 0
        self.keep: Optional[int] = None

    # Checkpoints

    def _stage_dir(self, stage: int) -> str:
        assert self.checkpoint_dir is not None
        return os.path.join(self.checkpoint_dir, f"stage_{stage:03d}")

    def save(self, stage: int, tset: StagedTrainingSet) -> None:
        if self.checkpoint_dir is None:
            return
        directory = self._stage_dir(stage)
        save_module(os.path.join(directory, "net.json"), "committor-net", self.net, {"widths": self.net.widths})
        for name, module in self.modules.items():
            save_module(os.path.join(directory, f"{name}.json"), name, module, {})
        tensors, meta = tset.to_tensors()
        save(os.path.join(directory, "training_set.json"), "training-set", tensors, meta)
        save(
            os.path.join(directory, "state.json"),
            "run-state",
            {name: g.get_state() for name, g in self.generators.items()},
            {
                "stage": stage,
                "epochs_done": self.epochs_done,
                "metrics": list(self.result_metrics),
                "timings": list(self.result_timings),
                "loss_trace": self.loss_trace,
            },
        )

    def restore(self, tset: StagedTrainingSet) -> Tuple[StagedTrainingSet, int]:
        """Load a stage checkpoint when ``resume_from`` is set; returns the next stage"""
        directory = self.config.resume_from
        if directory is None:
            return tset, 0
        load_module(os.path.join(directory, "net.json"), "committor-net", self.net)
        for name, module in self.modules.items():
            load_module(os.path.join(directory, f"{name}.json"), name, module)
        tensors, meta = load(os.path.join(directory, "training_set.json"), "training-set")
        tset = StagedTrainingSet.from_tensors(tensors, meta)
        states, state_meta = load(os.path.join(directory, "state.json"), "run-state")
        for name, state in states.items():
            self.generators[name].set_state(state.to(torch.uint8))
        self.result_metrics = list(state_meta["metrics"])
        self.result_timings = list(state_meta["timings"])
        self.loss_trace = list(state_meta["loss_trace"])
        self.epochs_done = int(state_meta["epochs_done"])
        self.scheduler.last_epoch = self.epochs_done
        for group in self.optimizer.param_groups:
            group["lr"] = self.config.lr * self.config.lr_decay ** (
                self.epochs_done // self.config.decay_every
            )
        stage = int(state_meta["stage"])
        self.logger.info(f"Resumed from {directory} after stage {stage}")
        return tset, stage + 1

    # Loop

    def log_ratio(self, tset: StagedTrainingSet) -> Tensor:
        """``-beta V - log p_j`` per interior sample, the importance weight of the loss"""
        log_normalizer = self.log_normalizer if self.config.normalize_gibbs else 0.0
        return gibbs_log_ratio(
            self.potential, tset.samples, tset.log_density, log_normalizer=log_normalizer
        )

    def run(self, tset: StagedTrainingSet, propose: Proposal, start: int = 0) -> DastrResult:
        config = self.config
        for k in range(start, config.N_adaptive):
            began = time.perf_counter()
            acceptance: Optional[float] = None
            try:
                tset.check(self.potential)
                log_ratio = self.log_ratio(tset)
                history = train_committor(
                    self.net,
                    tset,
                    log_ratio,
                    self.boundary,
                    config,
                    self.optimizer,
                    self.scheduler,
                    self.generators["batches"],
                    epoch_offset=self.epochs_done,
                )
                self.epochs_done += len(history)
                self.loss_trace.extend(h.loss for h in history)
                error = self.evaluate(self.net) if self.evaluate is not None else None
                if self.on_stage is not None:
                    self.on_stage(k, tset, self.net)
                samples = tset.total
                if k < config.N_adaptive - 1:
                    proposed = propose(k, tset)
                    if proposed is not None:
                        new, acceptance = proposed
                        tset = refine_training_set(
                            tset, new, config.policy, keep=self.keep
                        )
            except CommittorError as e:
                self.logger.error(e)
                raise StageError(k, e) from e

            last = history[-1]
            row: StageMetrics = {
                "stage": k,
                "loss": last.loss,
                "interior": last.interior,
                "penalty": last.penalty,
                "error": error,
                "acceptance": acceptance,
                "samples": samples,
            }
            self.result_metrics.append(row)
            self.result_timings.append(
                {"stage": k, "wall_seconds": time.perf_counter() - began}
            )
            self.logger.info(
                f"stage {k + 1}/{config.N_adaptive}: loss={last.loss:.6g} "
                f"error={error if error is not None else 'n/a'} "
                f"acceptance={acceptance if acceptance is not None else 'n/a'} "
                f"|S|={samples}"
            )
            self.save(k, tset)

        return DastrResult(
            self.net, tset, self.result_metrics, self.result_timings, self.loss_trace
        )

    def sizes(self, tset: StagedTrainingSet) -> int:
        """Fixes ``keep`` from the initial stage and returns the new-stage size"""
        config = self.config
        n0 = tset.stages[0].count
        if config.policy == "keep-fraction":
            self.keep = max(1, round(config.keep_fraction * n0))
            default = n0 - self.keep
        else:
            default = n0
        return config.stage_size or max(1, default)


def dastr_run(
    config: DastrConfig,
    potential: Potential,
    net: CommittorNet,
    flow: FlowModel,
    tset: StagedTrainingSet,
    seed: int,
    *,
    bias: Optional[BiasFn] = None,
    evaluate: Optional[Evaluate] = None,
    on_stage: Optional[OnStage] = None,
    checkpoint_dir: Optional[str] = None,
    logger: Optional[Logger] = None,
) -> DastrResult:
    """
    Adaptive sampling in configuration space.

    Per stage: train ``q`` for ``N_e`` epochs, fit the flow to
    ``|grad q|^2 exp(-beta (V + V_bias))`` on the current training set with
    its stored densities (warm start), draw ``stage_size`` flow samples
    outside A and B and refine the training set. With ``biased`` off the
    bias is ignored in the sampling target.
    """
    logger = logger or Logger("core/dastr")
    loop = AdaptiveLoop(
        config,
        potential,
        net,
        seed,
        {"flow": flow},
        checkpoint_dir=checkpoint_dir,
        evaluate=evaluate,
        on_stage=on_stage,
        logger=logger,
    )
    stage_size = loop.sizes(tset)
    tset, start = loop.restore(tset)
    flow_optimizer = torch.optim.Adam(flow.parameters(), lr=config.flow_lr)
    target_bias = bias if config.biased else None

    def propose(k: int, current: StagedTrainingSet) -> Optional[Tuple[Stage, Optional[float]]]:
        if not config.train_flow:
            return None
        pool = current.samples
        target = sampling_density_unnorm(net, potential, pool, bias=target_bias)
        report = train_flow_ce(
            flow,
            pool,
            target,
            current.log_density,
            epochs=config.N_e_flow,
            batch_size=config.m_flow,
            lr=config.flow_lr,
            generator=loop.generators["flow"],
            optimizer=flow_optimizer,
            max_rejected=config.max_rejected_weights,
            logger=logger,
        )
        if report.ce_trace:
            logger.debug(f"stage {k + 1}: flow CE {report.ce_trace[0]:.6g} -> {report.ce_trace[-1]:.6g}")
        x, log_density, acceptance = flow.sample_excluding(
            stage_size, loop.generators["sample"], potential.in_ab
        )
        return Stage(x, log_density, "flow"), acceptance

    return loop.run(tset, propose, start)


def _draw_latent_stage(
    pipeline: LatentPipeline,
    potential: Potential,
    n: int,
    generator: torch.Generator,
    min_acceptance: float,
    max_passes: int = 100,
) -> Tuple[Stage, float]:
    """Decode flow samples until ``n`` pass the filter and lie outside A and B"""
    kept_x: List[Tensor] = []
    kept_lp: List[Tensor] = []
    energies: List[Tensor] = []
    have = drawn = accepted = 0
    for _ in range(max_passes):
        s, log_density = pipeline.flow.sample(n, generator)
        drawn += n
        try:
            batch = decode_and_filter(pipeline, s, log_density)
        except FilterError:
            energies.append(potential.energy(pipeline.decode(s)))
            continue
        energies.append(batch.energies)
        accepted += batch.x.shape[0]
        outside = ~potential.in_ab(batch.x)
        kept_x.append(batch.x[outside])
        kept_lp.append(batch.log_density[outside])
        have += int(outside.sum())
        if have >= n:
            break

    acceptance = accepted / drawn
    if acceptance < min_acceptance or have == 0:
        edges, counts = energy_histogram(torch.cat(energies))
        raise FilterError(
            pipeline.threshold,
            edges,
            counts,
            "Energy filter acceptance below the minimum",
            acceptance=acceptance,
            minimum=min_acceptance,
        )
    x = torch.cat(kept_x)[:n]
    lp = torch.cat(kept_lp)[:n] - math.log(have / drawn)
    return Stage(x, lp, "latent"), acceptance


def dastr_latent_run(
    config: DastrConfig,
    latent: LatentConfig,
    potential: Potential,
    net: CommittorNet,
    flow: FlowModel,
    tset: StagedTrainingSet,
    seed: int,
    *,
    pipeline: Optional[LatentPipeline] = None,
    bias: Optional[BiasFn] = None,
    evaluate: Optional[Evaluate] = None,
    on_stage: Optional[OnStage] = None,
    checkpoint_dir: Optional[str] = None,
    logger: Optional[Logger] = None,
) -> DastrResult:
    """
    Adaptive sampling with the flow on collective variables.

    ``latent.mode == "autoencoder"``: the flow lives on the latent space of
    the frozen autoencoder in ``pipeline``. Its cross-entropy weights are
    ``p_Vq(x_i) / p_prev(s(x_i))`` over the newest stage, where ``p_prev`` is
    the flow that produced that stage (or a maximum-likelihood fit to the
    encoded initial stage). New configurations are decoded latent samples
    that pass the energy filter.

    ``latent.mode == "umbrella"``: the flow lives on hand-picked CVs, is fit
    against the training set's stored (biased dynamics) densities, and new
    configurations come from umbrella relaxation towards flow samples,
    started from the nearest training sample in CV space. The force constant
    ramps linearly from ``k_us_start`` to ``k_us_end`` over the stages.
    """
    logger = logger or Logger("core/dastr")
    modules: Dict[str, nn.Module] = {"flow": flow}
    if latent.mode == "autoencoder":
        if pipeline is None:
            raise ValueError("Autoencoder mode needs a LatentPipeline")
        modules["autoencoder"] = pipeline.autoencoder
    loop = AdaptiveLoop(
        config,
        potential,
        net,
        seed,
        modules,
        checkpoint_dir=checkpoint_dir,
        evaluate=evaluate,
        on_stage=on_stage,
        logger=logger,
        calibrates=True,
    )
    stage_size = loop.sizes(tset)
    tset, start = loop.restore(tset)
    if pipeline is not None:
        pipeline.reset_digest()
    flow_optimizer = torch.optim.Adam(flow.parameters(), lr=config.flow_lr)
    target_bias = bias if config.biased else None

    def fit(samples: Tensor, target: Tensor, proposal: Tensor, epochs: int) -> None:
        train_flow_ce(
            flow,
            samples,
            target,
            proposal,
            epochs=epochs,
            batch_size=config.m_flow,
            lr=config.flow_lr,
            generator=loop.generators["flow"],
            optimizer=flow_optimizer,
            max_rejected=config.max_rejected_weights,
            logger=logger,
        )

    def propose_autoencoder(k: int, current: StagedTrainingSet) -> Tuple[Stage, Optional[float]]:
        assert pipeline is not None
        pipeline.check_frozen()
        newest = current.stages[-1]
        if newest.source != "latent":
            s0 = pipeline.encode(newest.samples)
            ones = torch.ones(s0.shape[0], dtype=s0.dtype)
            fit(s0, ones, torch.zeros_like(ones), latent.prefit_epochs)
        prev = copy.deepcopy(flow).requires_grad_(False)
        s, weights, _ = latent_ce_weights(
            newest.samples, net, potential, pipeline, prev, bias=target_bias
        )
        fit(s, weights, torch.zeros_like(weights), config.N_e_flow)
        stage, acceptance = _draw_latent_stage(
            pipeline, potential, stage_size, loop.generators["sample"], latent.min_acceptance
        )
        pipeline.check_frozen()
        logger.info(f"stage {k + 1}: energy filter acceptance {acceptance:.4f}")
        return calibrate_stage(stage, potential, loop.log_normalizer), acceptance

    cvmap = identity_cv(latent.cv_dims)

    def propose_umbrella(k: int, current: StagedTrainingSet) -> Tuple[Stage, Optional[float]]:
        x_pool = current.samples
        s_pool = cvmap(x_pool)
        target = sampling_density_unnorm(net, potential, x_pool, bias=target_bias)
        fit(s_pool, target, current.log_density, config.N_e_flow)

        n_targets = max(1, math.ceil(stage_size / latent.n_keep))
        targets, _ = flow.sample(n_targets, loop.generators["sample"])
        steps = max(1, config.N_adaptive - 2)
        k_us = latent.k_us_start + (latent.k_us_end - latent.k_us_start) * min(k, steps) / steps
        xs: List[Tensor] = []
        lps: List[Tensor] = []
        for t in targets:
            nearest = int(torch.argmin(torch.linalg.vector_norm(s_pool - t, dim=-1)))
            relaxed = umbrella_relax(
                potential,
                cvmap,
                k_us,
                t,
                x_pool[nearest],
                latent.dt,
                potential.beta,
                loop.generators["sample"],
                latent.n_keep,
                windows=latent.windows,
                steps_per_window=latent.steps_per_window,
                burn_in=latent.burn_in,
                max_steps=latent.max_steps,
            )
            restraint = UmbrellaBias(cvmap, k_us, t)
            with torch.no_grad():
                energy = potential.energy(relaxed.samples) + restraint.value(relaxed.samples)
            xs.append(relaxed.samples)
            lps.append(-potential.beta * energy)
        x = torch.cat(xs)
        lp = torch.cat(lps)
        outside = ~potential.in_ab(x)
        acceptance = float(outside.double().mean())
        stage = Stage(x[outside][:stage_size], lp[outside][:stage_size], "umbrella")
        logger.info(f"stage {k + 1}: umbrella k_us={k_us:.4g}, {stage.count} samples")
        return calibrate_stage(stage, potential, loop.log_normalizer), acceptance

    propose = propose_autoencoder if latent.mode == "autoencoder" else propose_umbrella
    return loop.run(tset, propose, start)
