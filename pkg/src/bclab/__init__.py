"""Numerical laboratory for shrinking-target and Borel-Cantelli experiments on interval maps."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
