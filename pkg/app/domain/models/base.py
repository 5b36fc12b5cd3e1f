from __future__ import annotations

from typing import Any, Iterator, Tuple, Type

from pydantic import BaseModel, ConfigDict, Field

PAPER = "paper"
CHOSEN = "chosen"


class ConfigModel(BaseModel):
    """Base for every configuration section: immutable, unknown keys rejected."""

    model_config = ConfigDict(extra="forbid", frozen=True)


def paper(default: Any, description: str = "", **kwargs: Any) -> Any:
    """Field whose default is the reference hyperparameter for the method."""
    return Field(default, description=description, json_schema_extra={"source": PAPER}, **kwargs)


def chosen(default: Any, rationale: str, **kwargs: Any) -> Any:
    """Field whose default is our own declared choice; the rationale travels with it."""
    return Field(default, json_schema_extra={"source": CHOSEN, "rationale": rationale}, **kwargs)


def iter_provenance(model: Type[BaseModel], prefix: str = "") -> Iterator[Tuple[str, str, str]]:
    """Yield (dotted path, source, rationale) for every leaf field of a config tree."""
    for name, info in model.model_fields.items():
        path = f"{prefix}{name}"
        annotation = info.annotation
        if isinstance(annotation, type) and issubclass(annotation, BaseModel):
            yield from iter_provenance(annotation, prefix=f"{path}.")
            continue
        extra = info.json_schema_extra if isinstance(info.json_schema_extra, dict) else {}
        yield path, str(extra.get("source", "")), str(extra.get("rationale", ""))
