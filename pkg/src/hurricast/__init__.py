"""Hurricast: multimodal 24-hour tropical-cyclone intensity and track
forecasting with statistical features, reanalysis-cube embeddings,
gradient-boosted trees and consensus ensembling."""

__version__ = "0.1.0"
