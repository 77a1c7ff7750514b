import numpy as np

from mobility.semantic.base import BaseEmbedder
from mobility.semantic.prompts import PromptText

_KEY_MASK = (1 << 128) - 1


class StubEmbedder(BaseEmbedder):
    """
    Content-keyed random projection standing in for a frozen language model.

    The key of a counter-based generator is the first 128 bits of the prompt
    digest xor the seed, so identical text gives identical vectors on every
    platform. Values are N(0, 1) / sqrt(dim), giving norms near 1.
    """

    def __init__(self, dim: int, seed: int = 0):
        super().__init__(dim)
        self.seed = seed

    @property
    def name(self) -> str:
        return 'stub'

    def _embed(self, prompt: PromptText) -> np.ndarray:
        key = int.from_bytes(prompt.digest[:16], 'little') ^ (self.seed & _KEY_MASK)
        rng = np.random.Generator(np.random.Philox(key=key))
        return rng.standard_normal(self.dim) / np.sqrt(self.dim)
