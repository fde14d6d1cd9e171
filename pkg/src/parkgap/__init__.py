"""Gap prediction for mobile-sensed parking and a driver-side simulator to score it."""

__version__ = "0.1.0"
