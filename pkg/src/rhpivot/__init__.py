"""Mode-choice toolkit: survey raking, MNL estimation, value of time and
incremental-logit injection of a ride-hailing mode into a nested logit model."""

__version__ = "0.1.0"
