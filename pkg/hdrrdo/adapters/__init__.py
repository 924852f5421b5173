from importlib import import_module
from types import ModuleType

from ..errors import ConfigurationError
from ..utils import check_adapter


def validate_adapter_name(name: str) -> None:
    if " " in name:
        raise ConfigurationError("invalid adapter name; may not contain spaces")
    names = name.split(".")
    if any(n.startswith("_") for n in names):
        raise ConfigurationError("invalid adapter name; may not import private modules")
    if "" in names or any(not n.isidentifier() for n in names):
        raise ConfigurationError("invalid adapter name; invalid import")


def load_adapter(name: str) -> ModuleType:
    validate_adapter_name(name)
    try:
        mod = import_module(f".{name}", __name__)
    except ModuleNotFoundError as e:
        if e.name != f"{__name__}.{name}":
            raise
        raise ConfigurationError(f"unknown adapter {name!r}") from None
    check_adapter(mod)
    return mod
