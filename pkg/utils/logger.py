from __future__ import annotations

# Core Imports
import datetime
import os
import traceback
from typing import ClassVar, Dict, Literal, Optional, Union

Level = Literal["debug", "info", "warning", "error"]


class Logger:
    """
    Custom Logger for the engine and experiments. Each component writes a
    daily file under ``$COMMITTOR_LOG_DIR/<name>/``; while a run is active
    every line is also copied into that run's ``run.log``.
    """

    # Set by the runner for the duration of one run
    run_log: ClassVar[Optional[str]] = None

    def __init__(
        self,
        name: str,
        console: Optional[bool] = None,
    ) -> None:
        self.name = name
        # Components echo to the console in DEV mode unless told otherwise
        if console is None:
            console = os.getenv("COMMITTOR_ENVIRONMENT_MODE", "PROD") == "DEV"
        self.console = console
        self.root = os.getenv("COMMITTOR_LOG_DIR", "logs")
        os.makedirs(os.path.join(self.root, self.name), exist_ok=True)

    # Colour variants based on the log type
    LEVEL_COLOURS: Dict[str, str] = {
        "debug": "\033[0;1;34m{}\033[0m",
        "info": "\033[0;1;32m{}\033[0m",
        "warning": "\033[0;1;33m{}\033[0m",
        "error": "\033[0;1;31m{}\033[0m",
    }

    def to_file(self, text: str) -> None:
        """Appends the line to the component's daily file and the active run log"""

        filename = datetime.datetime.now().date()
        with open(os.path.join(self.root, self.name, f"{filename}-log.log"), "a") as f:
            f.write(f"{text}\n")
        if Logger.run_log is not None:
            with open(Logger.run_log, "a") as f:
                f.write(f"{text}\n")

    def format(self, message: str, *, level: Level = "info") -> None:
        log_message = (
            f"{datetime.datetime.now().strftime('%d/%m %H:%M:%S')} "
            f"[{self.name.upper()}] {level.upper()}: {message}"
        )
        self.to_file(log_message)
        if self.console:
            log_type = self.LEVEL_COLOURS.get(level, "\033[0;1;35m{}\033[0m").format(
                level.upper()
            )
            print(f"{self.name} | {log_type} {log_message}")

    def info(self, message: str) -> None:
        self.format(message, level="info")

    def warn(self, message: str) -> None:
        self.format(message, level="warning")

    def debug(self, message: str) -> None:
        self.format(message, level="debug")

    def error(self, message: Union[str, BaseException]) -> None:
        """Logs with severity `ERROR`; exceptions are logged with their traceback"""

        if isinstance(message, BaseException):
            tb = "".join(
                traceback.format_exception(type(message), message, message.__traceback__)
            )
            message = f"{type(message).__name__}: {message}\n{tb}"
        self.format(message, level="error")
