"""Multi-species N-mixture models (compiled core)."""

from ._mnmix import *  # noqa: F401,F403
from ._mnmix import __doc__  # noqa: F401
