"""Stochastic-control solver suite: bank capital policy under noisy
accounting values, and life-cycle consumption/portfolio choice with a
voluntary-retirement option under labor-market cointegration."""

__version__ = "0.1.0"
