from ._declutr import *  # noqa: F401,F403
from ._declutr import __version__  # noqa: F401
