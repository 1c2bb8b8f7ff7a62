"""graspforge: desk-scale synthetic grasp dataset factory, toy tokenized-action
policy trainer, evaluation metrics, and non-blocking control filters."""

__version__ = "0.1.0"
