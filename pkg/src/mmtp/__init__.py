"""mmtp: multi-modal attention trajectory prediction at desk scale."""

__version__ = "0.1.0"
