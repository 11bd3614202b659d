"""Energy landscape of small dense relu networks fitted to a constructed sawtooth-plus-spline target."""

__version__ = "0.1.0"
