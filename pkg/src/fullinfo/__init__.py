"""Full-information Bayesian inference combining macro time series with micro cross sections."""

__version__ = "0.1.0"
