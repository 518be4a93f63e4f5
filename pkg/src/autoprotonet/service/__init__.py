"""HTTP service wrapping refinement sessions."""

from .app import ModelRegistry, ServiceConfig, SessionManager, create_app

__all__ = ["ModelRegistry", "ServiceConfig", "SessionManager", "create_app"]
