"""Binaural azimuth localization over a 72-point, 360 degree grid.

Per-band classifiers map cross-correlation and level-difference features to
azimuth posteriors, which are fused across frequency and time. A simulated
head rotation removes front-back phantom peaks.
"""

__version__ = "0.1.0"

GRID_STEP_DEG = 5
NUM_AZIMUTHS = 72
SAMPLE_RATE_HZ = 16000
