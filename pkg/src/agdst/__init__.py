"""Two-pass (basic + amending) generative dialogue state tracking at desk scale."""

__version__ = "0.1.0"
