"""Weather-to-soil-moisture corn yield modeling with drought-aware training."""

__version__ = "0.1.0"
