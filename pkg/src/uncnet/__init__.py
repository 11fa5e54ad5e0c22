"""Industry implied-volatility uncertainty networks."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree without install
    __version__ = "0.1.0"
