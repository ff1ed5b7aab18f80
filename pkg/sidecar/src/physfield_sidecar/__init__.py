"""Model sidecar for the physfield pipeline.

One HTTP service covers the four model roles the engine consumes: image
patch embedding, text embedding, captioning, and chat completion. Mock
mode serves deterministic hash-derived vectors and grammar-valid material
lines with no network or model downloads; real mode proxies configured
vision/language models.
"""

from .app import SidecarConfig, create_app

__version__ = "0.1.0"
