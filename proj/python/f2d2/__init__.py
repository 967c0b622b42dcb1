"""Python bindings for the f2d2 C++ core."""

from ._f2d2 import *  # noqa: F401,F403
from ._f2d2 import __doc__  # noqa: F401
