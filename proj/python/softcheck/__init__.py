"""Checklist-based soft verification laboratory (Python bindings)."""

from ._softcheck import *  # noqa: F401,F403
from ._softcheck import ConfigInvalid, GridTooLarge, InvalidArgument  # noqa: F401
