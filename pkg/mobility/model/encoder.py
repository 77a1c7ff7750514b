"""
Spatio-temporal feature encoding.

temporal = (E_ToD[slot] || E_DoW[dow]) @ P_temporal
spatial  = (E_Loc[loc] || (c @ W_coord + b_coord)) @ P_spatial, zero for MISSING
encoding = temporal + spatial

Matrices are stored input-major so every projection is `x @ W`.
"""

from dataclasses import dataclass
from typing import Dict

import numpy as np

from mobility.config import ModelConfig
from mobility.core.tensor import Tensor, add, concat, matmul, mul, reshape, take
from mobility.core.trajectory import GridSpec, MISSING
from mobility.errors import IndexOutOfRange

TABLE_INIT = 0.02


def uniform_table(rng: np.random.Generator, rows: int, cols: int, name: str) -> Tensor:
    return Tensor(rng.uniform(-TABLE_INIT, TABLE_INIT, size=(rows, cols)), requires_grad=True, name=name)


def scaled_normal(rng: np.random.Generator, fan_in: int, fan_out: int, name: str,
                  frozen: bool = False) -> Tensor:
    values = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
    return Tensor(values, requires_grad=True, frozen=frozen, name=name)


@dataclass
class EncoderParams:
    e_tod: Tensor        # (48, tod_dim)
    e_dow: Tensor        # (7, dow_dim)
    e_loc: Tensor        # (V, loc_dim)
    w_coord: Tensor      # (2, coord_dim)
    b_coord: Tensor      # (coord_dim,)
    p_temporal: Tensor   # (tod_dim + dow_dim, D)
    p_spatial: Tensor    # (loc_dim + coord_dim, D)

    @classmethod
    def initialize(cls, config: ModelConfig, grid: GridSpec, rng: np.random.Generator) -> 'EncoderParams':
        temporal_in = config.tod_dim + config.dow_dim
        spatial_in = config.loc_dim + config.coord_dim
        return cls(
            e_tod=uniform_table(rng, config.segment_length, config.tod_dim, 'encoder.e_tod'),
            e_dow=uniform_table(rng, 7, config.dow_dim, 'encoder.e_dow'),
            e_loc=uniform_table(rng, grid.vocabulary_size, config.loc_dim, 'encoder.e_loc'),
            w_coord=uniform_table(rng, 2, config.coord_dim, 'encoder.w_coord'),
            b_coord=Tensor(rng.uniform(-TABLE_INIT, TABLE_INIT, size=config.coord_dim),
                           requires_grad=True, name='encoder.b_coord'),
            p_temporal=scaled_normal(rng, temporal_in, config.d_model, 'encoder.p_temporal'),
            p_spatial=scaled_normal(rng, spatial_in, config.d_model, 'encoder.p_spatial'),
        )

    def named_parameters(self) -> Dict[str, Tensor]:
        return {f'encoder.{k}': v for k, v in vars(self).items()}

    @property
    def d_model(self) -> int:
        return self.p_temporal.shape[1]


def _check_range(values: np.ndarray, low: int, high: int, what: str):
    if values.size and (values.min() < low or values.max() >= high):
        raise IndexOutOfRange(f"{what} outside [{low}, {high}): min={values.min()} max={values.max()}")


def encode_temporal(slots, dows, params: EncoderParams) -> Tensor:
    """(...,) slot and day-of-week indices -> (..., D)"""
    slots = np.asarray(slots, dtype=np.int64)
    dows = np.asarray(dows, dtype=np.int64)
    _check_range(slots, 0, params.e_tod.shape[0], 'slot')
    _check_range(dows, 0, 7, 'day of week')
    features = concat([take(params.e_tod, slots), take(params.e_dow, dows)], axis=-1)
    return matmul_any(features, params.p_temporal)


def normalized_coordinates(locations: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Grid-centre coordinates scaled into (0, 1); MISSING rows are zero"""
    x, y = grid.cell_arrays(locations)
    coords = np.stack([(x - 0.5) / grid.width, (y - 0.5) / grid.height], axis=-1)
    missing = np.asarray(np.asarray(locations) < 0)
    return np.where(missing[..., None], 0.0, coords)


def encode_spatial(locations, grid: GridSpec, params: EncoderParams) -> Tensor:
    """(...,) location ids (MISSING allowed) -> (..., D), exactly zero for MISSING"""
    locations = np.asarray(locations, dtype=np.int64)
    _check_range(locations, MISSING, grid.vocabulary_size, 'location id')
    if params.e_loc.shape[0] != grid.vocabulary_size:
        raise IndexOutOfRange(f"location table has {params.e_loc.shape[0]} rows, grid {grid} needs {grid.vocabulary_size}")

    observed = np.asarray(locations != MISSING)
    safe = np.where(observed, locations, 0)
    coords = Tensor.constant(normalized_coordinates(locations, grid))
    coord_features = add(matmul_any(coords, params.w_coord), params.b_coord)
    features = concat([take(params.e_loc, safe), coord_features], axis=-1)
    projected = matmul_any(features, params.p_spatial)
    return mul(projected, Tensor.constant(observed[..., None].astype(np.float64)))


def encode_observation(slots, dows, locations, grid: GridSpec, params: EncoderParams) -> Tensor:
    return add(encode_temporal(slots, dows, params), encode_spatial(locations, grid, params))


def matmul_any(x: Tensor, w: Tensor) -> Tensor:
    """x @ w for x of any rank >= 1 (a single vector is lifted to a row)"""
    if x.ndim == 1:
        return reshape(matmul(reshape(x, (1, x.shape[0])), w), (w.shape[1],))
    return matmul(x, w)
