"""Desk-scale lab for anchors-and-shims plagiarism attacks on image watermarks."""

__version__ = "0.1.0"
