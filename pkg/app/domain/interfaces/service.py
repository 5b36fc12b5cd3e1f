from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Generic, TypeVar

C = TypeVar("C")


class BaseService(Generic[C], ABC):
    """Base service interface: a pure computation configured by one config object"""

    @abstractmethod
    def validate(self, config: C) -> None:
        """Raise ValidationException when the configuration cannot be served"""
        pass
