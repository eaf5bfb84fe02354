"""Dynamic structure from motion from 2-D point tracks."""

from ._dynsfm import *  # noqa: F401,F403
from ._dynsfm import Error, __doc__  # noqa: F401
