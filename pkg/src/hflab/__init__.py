"""Feature-encoding laboratory for heart-failure onset prediction on
synthetic cancer cohorts."""

__version__ = "0.1.0"
