"""Belief-density estimation from preferential data.

Fits a normalizing flow to k-wise comparison and ranking responses of an
expert modeled as a random-utility maximizer with exponential noise, by
maximizing a function-space posterior (preferential likelihood plus a
functional prior at winner points).
"""

__version__ = "0.1.0"
