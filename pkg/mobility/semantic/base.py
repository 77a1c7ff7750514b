from abc import ABC, abstractmethod

import numpy as np

from mobility.semantic.prompts import PromptText


class BaseEmbedder(ABC):
    """Abstract prompt-embedding producer"""

    def __init__(self, dim: int):
        self.dim = dim
        self.calls = 0

    @property
    @abstractmethod
    def name(self) -> str:
        pass

    @abstractmethod
    def _embed(self, prompt: PromptText) -> np.ndarray:
        pass

    def embed(self, prompt: PromptText) -> np.ndarray:
        """Vector of length dim as float64; counts every invocation"""
        self.calls += 1
        return np.asarray(self._embed(prompt), dtype=np.float64)
