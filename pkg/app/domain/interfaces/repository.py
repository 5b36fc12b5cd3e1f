from __future__ import annotations

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Generic, TypeVar, Union

T = TypeVar("T")
PathLike = Union[str, Path]


class BaseRepository(Generic[T], ABC):
    """Base repository interface: persist and restore one kind of artifact"""

    @abstractmethod
    def save(self, entity: T, path: PathLike) -> str:
        """Write the artifact; returns the checksum of the bytes written"""
        pass

    @abstractmethod
    def load(self, path: PathLike) -> T:
        """Read the artifact back, verifying integrity"""
        pass

    @abstractmethod
    def exists(self, path: PathLike) -> bool:
        """Check if the artifact exists"""
        pass
