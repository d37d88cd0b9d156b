"""Simulation toolkit for atomic clocks with joint and spin-squeezed Ramsey interrogation.

Modules
-------
spin        probe states, outcome laws and sampling
estimation  phase estimators and their exact error profiles
noise       LO noise synthesis and calibration
clock       Monte-Carlo feedback loop
allan       Allan variance routes, slip statistics, dead time and gain
experiments named reproducible experiments (also via the ``jointclock`` CLI)
"""

from importlib import metadata as _metadata

try:
    __version__ = _metadata.version("artifact")
except _metadata.PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"
