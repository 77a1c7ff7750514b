"""
Pre-computed prompt embeddings.

File layout (little-endian):
    magic 'RHYC' | version u16 | dim u32 | count u64
    count x (32-byte SHA-256 digest | dim float32)

Entries are written in ascending digest order, so rebuilding a cache from
the same prompts yields a byte-identical file. Any external producer that
writes this layout can populate the cache.
"""

from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple
import struct

import numpy as np

from mobility.config import Config
from mobility.core.trajectory import GridSpec, PredictionSample, Trajectory, day_of_week
from mobility.errors import CacheFormatError, CacheMiss, DimMismatch
from mobility.semantic.base import BaseEmbedder
from mobility.semantic.prompts import (
    PromptText,
    history_prompts,
    records_from_observations,
    render_history_prompt,
    render_task_prompt,
    task_prompt,
)
from mobility.utils.logger import setup_logger

MAGIC = b'RHYC'
VERSION = 1
DIGEST_BYTES = 32
_HEADER = struct.Struct('<4sHIQ')


class PromptEmbeddingCache:
    """digest -> float32 vector of length dim"""

    def __init__(self, dim: int):
        self.dim = dim
        self._entries: Dict[bytes, np.ndarray] = {}

    def add(self, digest: bytes, vector: np.ndarray):
        vector = np.asarray(vector, dtype='<f4')
        if vector.shape != (self.dim,):
            raise DimMismatch(f"cache holds {self.dim}-d vectors, got shape {vector.shape}")
        if len(digest) != DIGEST_BYTES:
            raise CacheFormatError(f"digest must be {DIGEST_BYTES} bytes, got {len(digest)}")
        self._entries[bytes(digest)] = vector

    def get(self, digest: bytes) -> np.ndarray:
        try:
            return self._entries[digest]
        except KeyError:
            raise CacheMiss(digest)

    def __contains__(self, digest: bytes) -> bool:
        return digest in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def items(self) -> Iterator[Tuple[bytes, np.ndarray]]:
        for digest in sorted(self._entries):
            yield digest, self._entries[digest]

    def save(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as f:
            f.write(_HEADER.pack(MAGIC, VERSION, self.dim, len(self._entries)))
            for digest, vector in self.items():
                f.write(digest)
                f.write(vector.astype('<f4').tobytes())

    @classmethod
    def load(cls, path: str | Path) -> 'PromptEmbeddingCache':
        path = Path(path)
        data = path.read_bytes()
        if len(data) < _HEADER.size:
            raise CacheFormatError(f"{path}: truncated header")
        magic, version, dim, count = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise CacheFormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise CacheFormatError(f"{path}: unsupported version {version}")
        entry_size = DIGEST_BYTES + 4 * dim
        if len(data) != _HEADER.size + count * entry_size:
            raise CacheFormatError(f"{path}: expected {count} entries of {entry_size} bytes")

        cache = cls(dim)
        offset = _HEADER.size
        for _ in range(count):
            digest = data[offset:offset + DIGEST_BYTES]
            vector = np.frombuffer(data, dtype='<f4', count=dim, offset=offset + DIGEST_BYTES)
            cache._entries[digest] = vector.copy()
            offset += entry_size
        return cache


class CacheEmbedder(BaseEmbedder):
    """Lookup-only embedder over a loaded cache; never computes text"""

    def __init__(self, cache: PromptEmbeddingCache, dim: Optional[int] = None):
        if dim is not None and dim != cache.dim:
            raise DimMismatch(f"cache dimension {cache.dim} != model dimension {dim}")
        super().__init__(cache.dim)
        self.cache = cache

    @property
    def name(self) -> str:
        return 'cache'

    def _embed(self, prompt: PromptText) -> np.ndarray:
        return self.cache.get(prompt.digest)


def dataset_prompts(trajectories: Sequence[Trajectory], grid: GridSpec = GridSpec(),
                    num_days: Optional[int] = None,
                    history_days: int = Config.HISTORY_DAYS) -> List[PromptText]:
    """Every history-day and task prompt the sampler can request"""
    total_days = num_days if num_days is not None else max((t.num_days for t in trajectories), default=0)
    prompts = []
    for trajectory in trajectories:
        days = trajectory.by_day()
        for day in range(total_days):
            records = records_from_observations(days.get(day, []))
            prompts.append(render_history_prompt(trajectory.user_id, day, day_of_week(day), records))
        for day in range(history_days, total_days):
            prompts.append(render_task_prompt(trajectory.user_id, day, day_of_week(day), grid))
    return prompts


def precompute_cache(trajectories: Sequence[Trajectory], embedder: BaseEmbedder, out_path: str | Path,
                     grid: GridSpec = GridSpec(), num_days: Optional[int] = None,
                     dump_dir: Optional[str | Path] = None) -> PromptEmbeddingCache:
    """Render, embed and persist every prompt; idempotent"""
    logger = setup_logger('cache')
    prompts = dataset_prompts(trajectories, grid, num_days)
    cache = PromptEmbeddingCache(embedder.dim)
    for prompt in prompts:
        if prompt.digest not in cache:
            cache.add(prompt.digest, embedder.embed(prompt))

    if dump_dir:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)
        for prompt in prompts:
            (dump_dir / f"{prompt.digest.hex()}.txt").write_text(prompt.text, encoding='utf-8')
        logger.info(f"Dumped {len(prompts)} prompts to {dump_dir}")

    cache.save(out_path)
    logger.info(f"Cached {len(cache)} prompt embeddings ({embedder.name}, dim {embedder.dim}) -> {out_path}")
    return cache


class SemanticContext:
    """
    Per-sample prompt embeddings, memoized by (user, target day).

    After prepare() has seen a sample, later lookups for it never reach the
    embedder.
    """

    def __init__(self, embedder: BaseEmbedder, grid: GridSpec = GridSpec()):
        self.embedder = embedder
        self.grid = grid
        self._memo: Dict[Tuple[int, int], Tuple[np.ndarray, np.ndarray]] = {}

    @property
    def dim(self) -> int:
        return self.embedder.dim

    def _compute(self, sample: PredictionSample) -> Tuple[np.ndarray, np.ndarray]:
        hist = np.stack([self.embedder.embed(p) for p in history_prompts(sample, self.grid)])
        return hist, self.embedder.embed(task_prompt(sample, self.grid))

    def for_sample(self, sample: PredictionSample) -> Tuple[np.ndarray, np.ndarray]:
        """(history TE (N, dim), task TE (dim,))"""
        key = sample.key
        if key not in self._memo:
            self._memo[key] = self._compute(sample)
        return self._memo[key]

    def prepare(self, samples: Sequence[PredictionSample]):
        for sample in samples:
            self.for_sample(sample)

    def for_batch(self, samples: Sequence[PredictionSample]) -> Tuple[np.ndarray, np.ndarray]:
        """(B, N, dim) and (B, dim)"""
        pairs = [self.for_sample(s) for s in samples]
        return np.stack([h for h, _ in pairs]), np.stack([t for _, t in pairs])
