"""Image embedding microservice: CLIP ViT-B/32 features over JSON/HTTP."""

from .app import create_app
from .encoder import ClipEncoder

__all__ = ["create_app", "ClipEncoder"]
__version__ = "0.1.0"
