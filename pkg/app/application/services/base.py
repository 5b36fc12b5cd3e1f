from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Generic, Iterable, List, Optional, TypeVar

from app.core.config import Settings, settings as default_settings
from app.domain.interfaces.service import BaseService

C = TypeVar("C")
In = TypeVar("In")
Out = TypeVar("Out")


class BaseServiceImpl(BaseService[C], Generic[C]):
    """Base service implementation"""

    def __init__(self, config: C, settings: Optional[Settings] = None):
        self.settings = settings or default_settings
        self.validate(config)
        self.config = config

    def validate(self, config: C) -> None:
        """Override in child classes to implement specific validation logic"""
        return None

    def map_ordered(self, fn: Callable[[In], Out], items: Iterable[In]) -> List[Out]:
        """Apply fn to every item; results keep input order whatever the worker count."""
        items = list(items)
        workers = max(1, int(self.settings.WORKERS))
        if workers == 1 or len(items) < 2:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
