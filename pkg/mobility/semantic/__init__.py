from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Type

from mobility.errors import UsageError
from mobility.semantic.base import BaseEmbedder
from mobility.semantic.cache import CacheEmbedder, PromptEmbeddingCache
from mobility.semantic.stub import StubEmbedder


@dataclass(frozen=True)
class EmbedderSpec:
    variant: str  # 'stub' | 'cache'
    seed: int = 0
    path: Optional[str] = None

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> 'EmbedderSpec':
        """'stub' or 'cache:PATH'"""
        if text == 'stub':
            return cls('stub', seed=seed)
        if text.startswith('cache:') and len(text) > 6:
            return cls('cache', seed=seed, path=text[6:])
        raise UsageError(f"unknown embedder {text!r}; use stub or cache:PATH")

    def __str__(self):
        return f'cache:{self.path}' if self.variant == 'cache' else self.variant


# Registry of embedder variants
EMBEDDERS: Dict[str, Type[BaseEmbedder]] = {
    'stub': StubEmbedder,
    'cache': CacheEmbedder,
}


def get_embedder(spec: EmbedderSpec, dim: int) -> BaseEmbedder:
    """Build an embedder for a model of width dim"""
    if spec.variant not in EMBEDDERS:
        raise UsageError(f"unknown embedder variant {spec.variant!r}")
    if spec.variant == 'stub':
        return StubEmbedder(dim, spec.seed)
    return CacheEmbedder(PromptEmbeddingCache.load(Path(spec.path)), dim)
