import hashlib
import json
from collections.abc import Iterator
from inspect import Parameter, signature
from types import ModuleType
from typing import Any

from .params import ParamsBase

_POSITIONAL = (Parameter.POSITIONAL_ONLY, Parameter.POSITIONAL_OR_KEYWORD)
_REQUIRED = ("params", "spec", "clip")


def check_adapter(mod: ModuleType) -> None:
    """Validate the adapter module contract.

    An adapter exports a ``Params`` group and ``encode(params, spec, clip)``;
    anything beyond those three parameters must carry a default.
    """
    if not hasattr(mod, "Params"):
        raise TypeError("adapter does not export `Params`")
    if not callable(getattr(mod, "encode", None)):
        raise TypeError("adapter does not export a function `encode`")
    if not (isinstance(mod.Params, type) and issubclass(mod.Params, ParamsBase)):
        raise TypeError("adapter's `Params` export must subclass `hdrrdo.ParamsBase`")

    sig = signature(mod.encode).parameters.values()
    positional = [p for p in sig if p.kind in _POSITIONAL]
    if len(positional) < len(_REQUIRED):
        raise TypeError("adapter `encode` must accept `params`, `spec` and `clip`")
    if positional[0].annotation != mod.Params:
        raise TypeError(
            "adapter's `encode` function must accept an instance of `Params` as its first parameter"
        )

    # variadic parameters never need a value
    extra_args = [p.name for p in positional[len(_REQUIRED) :] if p.default is p.empty]
    extra_kwargs = [
        p.name for p in sig if p.kind == Parameter.KEYWORD_ONLY and p.default is p.empty
    ]
    if extra_args:
        raise TypeError(f"adapter may not contain args without defaults; found {', '.join(extra_args)}")
    if extra_kwargs:
        raise TypeError(
            f"adapter may not contain kwargs without defaults; found {', '.join(extra_kwargs)}"
        )


Primitive = int | float | bool | str


def _leaves(params: ParamsBase, prefix: str) -> Iterator[tuple[str, Primitive]]:
    for name, value in params._dict().items():
        key = f"{prefix}{name}"
        if isinstance(value, ParamsBase):
            yield from _leaves(value, f"{key}.")
        elif type(value) in (int, float, bool, str):
            yield key, value
        else:
            raise ValueError(
                f"field ``{name}`` has value that is not a primitive, nor an instance of ``ParamsBase``"
            )


def flatten_params(params: ParamsBase) -> dict[str, Primitive]:
    """Dotted primitive keys for a (nested) parameter group."""
    return dict(_leaves(params, ""))


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), allow_nan=False)


def digest(value: Any) -> str:
    """Stable sha256 over the canonical JSON form of ``value``."""
    return hashlib.sha256(canonical_json(value).encode("utf-8")).hexdigest()


def unit_hash(*parts: str) -> float:
    """Deterministically map strings onto [-1, 1]."""
    h = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big") / float(2**63) - 1.0
