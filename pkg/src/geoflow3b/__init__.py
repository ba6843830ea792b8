"""Three-body dynamics as geodesic flow on a conformally Euclidean manifold."""
__version__ = "0.1.0"
