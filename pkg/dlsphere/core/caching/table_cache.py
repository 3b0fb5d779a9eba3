import logging
import threading
from abc import ABC, abstractmethod
from typing import Callable, Optional

from .caching import LruStore, SQLiteTableStore

Builder = Callable[[], str]


class TableCache(ABC):
    """Where computed tables live between calls.

    Tables are serialised to text by the caller; ``get`` returns the cached
    text for ``key`` or builds it with ``build`` and remembers it.
    """

    @abstractmethod
    def get(self, key: str, build: Builder) -> str:
        ...

    @staticmethod
    def of(db_path: str, mem_cache_max_size: int = 64):
        return UseCache(SQLiteBackedMemoryCache(db_path, mem_cache_max_size))

    @staticmethod
    def memory_only(mem_cache_max_size: int = 64):
        return UseCache(SQLiteBackedMemoryCache(None, mem_cache_max_size))

    @staticmethod
    def no_cache():
        return NoCache()


class UseCache(TableCache):
    def __init__(self, cache):
        self.cache = cache

    def get(self, key: str, build: Builder) -> str:
        return self.cache(key, build)


class NoCache(TableCache):
    def get(self, key: str, build: Builder) -> str:
        return build()


class SQLiteBackedMemoryCache:
    """Memory LRU in front of an optional SQLite file; each key is built once."""

    def __init__(self, db_path: Optional[str], mem_cache_max_size: int = 64):
        self.file_cache = SQLiteTableStore(db_path) if db_path is not None else None
        self.mem_cache = LruStore(mem_cache_max_size)
        self.lock = threading.Lock()

    def __call__(self, key: str, build: Builder) -> str:
        with self.lock:
            if key in self.mem_cache:
                return self.mem_cache[key]
            if self.file_cache is not None and key in self.file_cache:
                value = self.file_cache[key]
                self.mem_cache[key] = value
                return value
            logging.debug(f'building table {key}')
            value = build()
            self.mem_cache[key] = value
            if self.file_cache is not None:
                self.file_cache[key] = value
            return value
