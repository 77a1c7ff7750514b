"""
Frozen reasoning backbones.

The backbone mixes the fused sequence; its parameters are never registered
with an optimizer, but gradients flow through it to upstream parameters.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Type

import numpy as np

from mobility.core.container import read_container, tensor_checksum, write_container
from mobility.core.tensor import Tensor
from mobility.errors import ChecksumMismatch, DimMismatch, UsageError
from mobility.model.blocks import AttentionCounter, BlockParams, initialize_stack, stack_blocks
from mobility.utils.logger import setup_logger


@dataclass(frozen=True)
class BackboneSpec:
    variant: str  # 'identity' | 'frozen-random' | 'load'
    layers: int = 2
    heads: int = 4
    seed: int = 0
    path: Optional[str] = None

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> 'BackboneSpec':
        """'identity', 'frozen-random:L:H' or 'load:PATH'"""
        if text == 'identity':
            return cls('identity', layers=0, heads=1, seed=seed)
        if text.startswith('frozen-random'):
            parts = text.split(':')
            try:
                layers = int(parts[1]) if len(parts) > 1 else 2
                heads = int(parts[2]) if len(parts) > 2 else 4
            except ValueError:
                raise UsageError(f"bad backbone spec {text!r}, expected frozen-random:L:H")
            if len(parts) > 3 or layers < 1 or heads < 1:
                raise UsageError(f"bad backbone spec {text!r}, expected frozen-random:L:H")
            return cls('frozen-random', layers, heads, seed)
        if text.startswith('load:') and len(text) > 5:
            return cls('load', seed=seed, path=text[5:])
        raise UsageError(f"unknown backbone {text!r}; use identity, frozen-random:L:H or load:PATH")

    def __str__(self):
        if self.variant == 'frozen-random':
            return f'frozen-random:{self.layers}:{self.heads}'
        if self.variant == 'load':
            return f'load:{self.path}'
        return self.variant


class BaseBackbone(ABC):
    """Abstract frozen backbone"""

    def __init__(self, dim: int):
        self.dim = dim

    @property
    @abstractmethod
    def name(self) -> str:
        pass

    @abstractmethod
    def named_parameters(self) -> Dict[str, Tensor]:
        """Frozen parameters (empty for identity)"""
        pass

    @abstractmethod
    def _forward(self, sequence: Tensor, counter: Optional[AttentionCounter]) -> Tensor:
        pass

    def forward(self, sequence: Tensor, counter: Optional[AttentionCounter] = None) -> Tensor:
        if sequence.shape[-1] != self.dim:
            raise DimMismatch(f"{self.name} expects width {self.dim}, got {sequence.shape[-1]}")
        return self._forward(sequence, counter)

    def checksum(self) -> str:
        return tensor_checksum({k: v.values for k, v in self.named_parameters().items()})


class IdentityBackbone(BaseBackbone):

    @property
    def name(self) -> str:
        return 'identity'

    def named_parameters(self) -> Dict[str, Tensor]:
        return {}

    def _forward(self, sequence, counter):
        return sequence


class TransformerBackbone(BaseBackbone):
    """Stack of frozen gated blocks, never in training mode"""

    def __init__(self, dim: int, layers: List[BlockParams]):
        super().__init__(dim)
        for block in layers:
            for t in block.named_parameters('').values():
                t.frozen = True
                t.requires_grad = True
        self.layers = layers

    @property
    def name(self) -> str:
        return 'transformer'

    def named_parameters(self) -> Dict[str, Tensor]:
        params = {}
        for i, block in enumerate(self.layers):
            params.update(block.named_parameters(f'backbone.{i}'))
        return params

    def _forward(self, sequence, counter):
        return stack_blocks(sequence, self.layers, training=False, counter=counter, stage='backbone')


class FrozenRandomBackbone(TransformerBackbone):

    def __init__(self, dim: int, layers: int = 2, heads: int = 4, seed: int = 0):
        rng = np.random.default_rng(seed)
        super().__init__(dim, initialize_stack(layers, dim, heads, rng, frozen=True, prefix='backbone'))
        self.heads = heads

    @property
    def name(self) -> str:
        return 'frozen-random'


class LoadedBackbone(TransformerBackbone):
    """Frozen weights read from an exported backbone file"""

    def __init__(self, path: str | Path, dim: int, expected_checksum: Optional[str] = None):
        self.logger = setup_logger('backbone')
        meta, tensors = read_container(path)
        actual = tensor_checksum(tensors)
        recorded = meta.get('checksum')
        if recorded and recorded != actual:
            raise ChecksumMismatch(recorded, actual, Path(path))
        if expected_checksum and expected_checksum != actual:
            raise ChecksumMismatch(expected_checksum, actual, Path(path))
        if meta.get('dim') != dim:
            raise DimMismatch(f"backbone file {path} has width {meta.get('dim')}, model needs {dim}")

        heads = int(meta['heads'])
        layers = []
        for i in range(int(meta['layers'])):
            prefix = f'backbone.{i}.'
            block_tensors = {name[len(prefix):]: Tensor(values, frozen=True, name=name)
                             for name, values in tensors.items() if name.startswith(prefix)}
            layers.append(BlockParams.from_tensors(block_tensors, heads))
        super().__init__(dim, layers)
        self.path = Path(path)
        self.heads = heads
        self.logger.info(f"Loaded backbone {self.path} ({len(layers)} layers, checksum {actual[:12]})")

    @property
    def name(self) -> str:
        return 'load'


def save_backbone(backbone: TransformerBackbone, path: str | Path):
    """Export frozen weights in the checkpoint container"""
    tensors = {k: v.values for k, v in backbone.named_parameters().items()}
    heads = backbone.layers[0].heads if backbone.layers else 1
    meta = {
        'kind': 'backbone',
        'dim': backbone.dim,
        'layers': len(backbone.layers),
        'heads': heads,
        'checksum': tensor_checksum(tensors),
    }
    write_container(path, meta, tensors)


# Registry of backbone variants
BACKBONES: Dict[str, Type[BaseBackbone]] = {
    'identity': IdentityBackbone,
    'frozen-random': FrozenRandomBackbone,
    'load': LoadedBackbone,
}


def get_backbone(spec: BackboneSpec, dim: int, expected_checksum: Optional[str] = None) -> BaseBackbone:
    """Build a backbone from its spec"""
    backbone_class = BACKBONES.get(spec.variant)
    if backbone_class is None:
        raise UsageError(f"unknown backbone variant {spec.variant!r}")
    if spec.variant == 'identity':
        backbone = IdentityBackbone(dim)
    elif spec.variant == 'frozen-random':
        backbone = FrozenRandomBackbone(dim, spec.layers, spec.heads, spec.seed)
    else:
        return LoadedBackbone(spec.path, dim, expected_checksum)

    if expected_checksum and backbone.checksum() != expected_checksum:
        raise ChecksumMismatch(expected_checksum, backbone.checksum())
    return backbone
