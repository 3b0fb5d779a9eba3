import contextlib
import sqlite3
from collections import OrderedDict
from typing import Iterator, Optional


@contextlib.contextmanager
def open_db(db: str):
    connection = sqlite3.connect(db)
    try:
        yield connection.cursor()
        connection.commit()
    finally:
        connection.close()


class SQLiteTableStore:
    """Computed tables as text, keyed by name, in one SQLite file."""

    def __init__(self, dbpath: str):
        self.db = dbpath
        with open_db(self.db) as db:
            db.execute('CREATE TABLE IF NOT EXISTS tables (name TEXT PRIMARY KEY, body TEXT NOT NULL)')

    def get(self, name: str) -> Optional[str]:
        with open_db(self.db) as db:
            row = db.execute('SELECT body FROM tables WHERE name = ?', (name,)).fetchone()
        return None if row is None else row[0]

    def __getitem__(self, name: str) -> Optional[str]:
        return self.get(name)

    def __setitem__(self, name: str, body: str):
        with open_db(self.db) as db:
            db.execute('INSERT OR REPLACE INTO tables (name, body) VALUES (?, ?)', (name, body))

    def __delitem__(self, name: str):
        with open_db(self.db) as db:
            db.execute('DELETE FROM tables WHERE name = ?', (name,))

    def __contains__(self, name: str) -> bool:
        return self.get(name) is not None

    def __iter__(self) -> Iterator[str]:
        with open_db(self.db) as db:
            names = [name for (name,) in db.execute('SELECT name FROM tables ORDER BY name')]
        return iter(names)


class LruStore:
    """At most ``max_size`` entries; the least recently read or written goes first."""

    def __init__(self, max_size: int):
        if max_size < 1:
            raise ValueError(f'max_size must be >= 1, got {max_size}')
        self.max_size = max_size
        self.entries = OrderedDict()

    def __getitem__(self, key):
        value = self.entries[key]
        self.entries.move_to_end(key)
        return value

    def __setitem__(self, key, value):
        self.entries[key] = value
        self.entries.move_to_end(key)
        while len(self.entries) > self.max_size:
            self.entries.popitem(last=False)

    def __delitem__(self, key):
        del self.entries[key]

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __len__(self):
        return len(self.entries)
