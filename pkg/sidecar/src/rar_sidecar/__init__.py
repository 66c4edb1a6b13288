"""Model-serving sidecar: /embed and /rank endpoints plus a mock mode.

The engine talks to this service only over the wire contract, so any
embedder/MLLM pair can sit behind it; mock mode is a pure function of
(request, server seed) for integration tests.
"""

from .app import Settings, create_app

__version__ = "0.1.0"
__all__ = ["Settings", "create_app"]
