from .table_cache import TableCache, UseCache, NoCache, SQLiteBackedMemoryCache
