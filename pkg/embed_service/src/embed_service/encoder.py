"""CLIP image encoding behind a small deterministic wrapper.

The embedding is the vision tower's final projected output (512-d for the
32-pixel-patch base model), L2-normalized server-side. Preprocessing is
fixed and documented: resize the shorter side to 224 (bicubic), center-crop
224x224 (or squash the whole image to 224x224 when configured), scale to
[0, 1], normalize with the standard CLIP channel statistics.

Model specs:
    openai/clip-vit-base-patch32   pretrained weights (needs hub access or a
                                   local cache); any other hub id or local
                                   path works the same way
    random-tiny:<seed>             the same architecture at toy width with
                                   seeded random weights; offline stand-in
                                   for tests and CI
"""

import io
import threading

import numpy as np
import torch
from PIL import Image
from transformers import CLIPVisionConfig, CLIPVisionModelWithProjection

DEFAULT_MODEL = "openai/clip-vit-base-patch32"
IMAGE_SIZE = 224
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


def _tiny_config() -> CLIPVisionConfig:
    return CLIPVisionConfig(
        hidden_size=64,
        intermediate_size=128,
        num_hidden_layers=2,
        num_attention_heads=2,
        image_size=IMAGE_SIZE,
        patch_size=32,
        projection_dim=512,
    )


class ClipEncoder:
    """Loads a CLIP vision model once and serializes inference behind a lock."""

    def __init__(self, spec: str = DEFAULT_MODEL, preprocess: str = "center-crop"):
        if preprocess not in ("center-crop", "squash"):
            raise ValueError("preprocess must be 'center-crop' or 'squash'")
        self.spec = spec
        self.preprocess = preprocess
        self._lock = threading.Lock()
        if spec.startswith("random-tiny"):
            _, _, seed = spec.partition(":")
            torch.manual_seed(int(seed) if seed else 0)
            self.model = CLIPVisionModelWithProjection(_tiny_config())
        else:
            self.model = CLIPVisionModelWithProjection.from_pretrained(spec)
        self.model.eval()
        self.dim = int(self.model.config.projection_dim)
        self.model_id = spec

    def _to_tensor(self, image: Image.Image) -> torch.Tensor:
        image = image.convert("RGB")
        if self.preprocess == "squash":
            image = image.resize((IMAGE_SIZE, IMAGE_SIZE), Image.BICUBIC)
        else:
            w, h = image.size
            scale = IMAGE_SIZE / min(w, h)
            image = image.resize((max(IMAGE_SIZE, round(w * scale)),
                                  max(IMAGE_SIZE, round(h * scale))), Image.BICUBIC)
            w, h = image.size
            left = (w - IMAGE_SIZE) // 2
            top = (h - IMAGE_SIZE) // 2
            image = image.crop((left, top, left + IMAGE_SIZE, top + IMAGE_SIZE))
        arr = np.asarray(image, dtype=np.float32) / 255.0
        arr = (arr - np.asarray(CLIP_MEAN, dtype=np.float32)) \
            / np.asarray(CLIP_STD, dtype=np.float32)
        return torch.from_numpy(arr.transpose(2, 0, 1))[None]

    def embed_image_bytes(self, data: bytes) -> np.ndarray:
        """Unit-norm embedding of one encoded image (PNG or anything PIL reads)."""
        with Image.open(io.BytesIO(data)) as image:
            pixel_values = self._to_tensor(image)
        with self._lock, torch.no_grad():
            features = self.model(pixel_values=pixel_values).image_embeds[0]
        vector = features.numpy().astype(np.float64)
        return vector / np.linalg.norm(vector)
