"""
neuralvqr - neural conditional vector quantile regression with conformal prediction sets
"""

__version__ = "0.1.0"
