# Core imports
import os
from typing import Dict, Literal, Union

# Third-party imports
import dotenv

# Local imports
from core.errors import ConfigError

DEFAULTS: Dict[str, str] = {
    "COMMITTOR_OUTPUT_ROOT": "runs",
    "COMMITTOR_LOG_DIR": "logs",
    "COMMITTOR_ENVIRONMENT_MODE": "PROD",
}
MODES = ("DEV", "PROD")


class Env:
    COMMITTOR_OUTPUT_ROOT: str
    COMMITTOR_LOG_DIR: str
    COMMITTOR_ENVIRONMENT_MODE: Union[Literal["DEV"], Literal["PROD"]]

    def __init__(self) -> None:
        dotenv.load_dotenv()
        self._verify_env_variables()

    def _verify_env_variables(self) -> None:
        for var in self.__class__.__annotations__:
            value = os.getenv(var) or DEFAULTS[var]
            setattr(self, var, value)
        if self.COMMITTOR_ENVIRONMENT_MODE not in MODES:
            raise ConfigError(
                "COMMITTOR_ENVIRONMENT_MODE", f"must be one of {MODES}"
            )
