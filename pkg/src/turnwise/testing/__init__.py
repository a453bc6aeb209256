"""Test doubles shipped with the package: a scriptable mock backend."""

from .mock_backend import MockBackendServer, Rule

__all__ = ["MockBackendServer", "Rule"]
