"""Publication-style figures from nbstrack CSV artifacts."""

from .figures import FigureSpec, render

__all__ = ["FigureSpec", "render"]
