# Core Imports
import re
from functools import cached_property


class RegEx:
    """Class containing commonly-used regex patterns"""

    @cached_property
    def override_regex(self) -> re.Pattern[str]:
        """``dotted.key=value`` as given to ``--set``"""
        return re.compile(r"^(?P<key>[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*)=(?P<value>.*)$")

    @cached_property
    def stage_dir_regex(self) -> re.Pattern[str]:
        return re.compile(r"^stage_(?P<stage>\d{3,})$")
