"""Acoustic spirometry toolkit.

Estimates forced-breathing lung parameters (PEF, FEV1, FVC) and tidal
respiration rate from mask-microphone audio. See the README for the CLI
surface and the per-module docs for the pipeline stages.
"""

__version__ = "0.1.0"
