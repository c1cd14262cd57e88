from __future__ import annotations

# Core Imports
import importlib
import os
import traceback
from typing import Dict, Optional, Sequence

# Local Imports
from core.autodiff import configure_determinism
from core.errors import ConfigError
from experiments import EXPERIMENTS
from utils.config import ExperimentConfig, load_config, to_dict
from utils.env import Env
from utils.experiment import Experiment
from utils.logger import Logger
from utils.manifest import RunManifest
from utils.regex import RegEx


class ExperimentRunner:
    """Loads experiment extensions and drives one run per call"""

    config: Env
    experiments: Dict[str, Experiment]
    logger: Logger
    regex: RegEx

    def __init__(self) -> None:
        self.logger = Logger("runner", console=True)
        self.config = Env()
        self.logger.info(
            f"Loaded {len(self.config.__annotations__)} environment variables."
        )
        self.regex = RegEx()
        self.experiments = {}
        self.load_experiments()

    def load_experiments(self) -> None:
        """Import every module in ``EXPERIMENTS`` and call its ``setup(runner)``"""
        loaded = 0
        for module in EXPERIMENTS:
            try:
                importlib.import_module(module).setup(self)
                loaded += 1
            except Exception as e:
                tb = traceback.format_exc()
                self.logger.error(f"{type(e)} Exception in loading {module}\n{tb}")
                continue

        self.logger.info(f"Successfully loaded {loaded}/{len(EXPERIMENTS)} experiments!")

    def add_experiment(self, experiment: Experiment) -> None:
        self.experiments[experiment.name] = experiment

    def output_dir(self, config: ExperimentConfig) -> str:
        if config.output_dir is not None:
            return config.output_dir
        return os.path.join(
            self.config.COMMITTOR_OUTPUT_ROOT, f"{config.experiment}-seed{config.seed}"
        )

    def latest_checkpoint(self, run_dir: str) -> str:
        """The highest ``stage_NNN`` directory under ``run_dir/checkpoints``"""
        root = os.path.join(run_dir, "checkpoints")
        try:
            names = os.listdir(root)
        except OSError as e:
            raise ConfigError("--resume", f"no checkpoints in '{run_dir}': {e.strerror}") from e
        stages: Dict[int, str] = {}
        for name in names:
            match = self.regex.stage_dir_regex.match(name)
            if match is not None:
                stages[int(match.group("stage"))] = name
        if not stages:
            raise ConfigError("--resume", f"no stage checkpoint in '{root}'")
        return os.path.join(root, stages[max(stages)])

    def run(self, config_path: str, overrides: Sequence[str] = ()) -> RunManifest:
        config = load_config(config_path, overrides)
        return self.run_config(config)

    def run_config(self, config: ExperimentConfig) -> RunManifest:
        """
        Run a validated config. The manifest is written at the end whether the
        run succeeded or failed, interrupted runs included; failures are
        re-raised.
        """
        experiment: Optional[Experiment] = self.experiments.get(config.experiment)
        if experiment is None:
            raise ConfigError("experiment", f"experiment '{config.experiment}' is not loaded")

        configure_determinism(config.threads)
        directory = self.output_dir(config)
        os.makedirs(directory, exist_ok=True)
        manifest = RunManifest(config.experiment, to_dict(config), config.seed, directory)
        Logger.run_log = manifest.add_artifact("run.log")
        self.logger.info(f"Running {config.experiment} (seed {config.seed}) into {directory}")
        try:
            experiment.run(config, manifest)
        except BaseException as e:
            self.logger.error(e)
            manifest.finish("failed")
            raise
        finally:
            Logger.run_log = None
        manifest.finish("ok")
        self.logger.info(f"Finished {config.experiment} in {manifest.wall_seconds:.1f}s")
        return manifest
