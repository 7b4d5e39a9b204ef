"""Executable semantics for serverless functions and their compositions."""

__version__ = "0.1.0"
