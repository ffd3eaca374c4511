"""Python bindings for the trav C++ core."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401


def default_config():
    """Default experiment configuration as a dict."""
    import json

    return json.loads(default_config_json())  # noqa: F405
