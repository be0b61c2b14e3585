"""Command-line interface, configuration, image files and reports."""

from .main import build_parser, main

__all__ = ["build_parser", "main"]
