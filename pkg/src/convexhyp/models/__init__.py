"""Case-study model builders and planners."""
from .functional import *  # noqa: F401,F403
from .markov import *  # noqa: F401,F403
from .pet import *  # noqa: F401,F403
from .sensor import *  # noqa: F401,F403
