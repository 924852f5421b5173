from collections import ChainMap
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any, Self, get_type_hints

from .constants import (
    CHROMA_OFFSET_C,
    CHROMA_OFFSET_K,
    CHROMA_OFFSET_L,
    LAB_NORMALISATION_FACTOR,
    PQ_PEAK_NITS,
)
from .errors import ConfigurationError


class ParamsBase:
    @classmethod
    def _annotations(cls) -> ChainMap:
        return ChainMap(*(get_type_hints(c) for c in cls.__mro__))

    def _dict(self) -> dict[str, Any]:
        return {key: getattr(self, key) for key in self._annotations().keys()}

    @classmethod
    def _from_dict(cls, values: Mapping[str, Any]) -> Self:
        annotations = cls._annotations()
        unknown = [k for k in values if k not in annotations]
        if unknown:
            raise ConfigurationError(
                f"unknown parameter(s) for {cls.__name__}; found {', '.join(unknown)}"
            )

        params = cls()
        for k, v in values.items():
            kind = annotations[k]
            if isinstance(kind, type) and issubclass(kind, ParamsBase):
                v = kind._from_dict(v)
            elif kind in (int, float, str, bool):
                v = kind(v)
            object.__setattr__(params, k, v)
        return params


@dataclass(frozen=True)
class ChromaOffsetPolicy(ParamsBase):
    """Linear chroma qp offset model, shared by Cb and Cr."""

    c: float = CHROMA_OFFSET_C
    k_offset: float = CHROMA_OFFSET_K
    l_offset: float = CHROMA_OFFSET_L


@dataclass(frozen=True)
class NormalisationPolicy(ParamsBase):
    factor: float = LAB_NORMALISATION_FACTOR
    peak: float = PQ_PEAK_NITS

    def __post_init__(self) -> None:
        if self.factor != LAB_NORMALISATION_FACTOR:
            raise ConfigurationError(
                f"invalid normalisation; factor is fixed at {LAB_NORMALISATION_FACTOR:g}"
            )
        if self.peak <= 0:
            raise ConfigurationError("invalid normalisation; peak must be positive")
