"""Camera-based visible light link for compact Collective Perception Messages."""

__version__ = "0.1.0"
