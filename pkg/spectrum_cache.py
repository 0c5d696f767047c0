"""
In-memory cache of Dirac eigen reports.

The mode matrix depends only on (l, k), so one diagonalisation serves every
n.  Callers ask via get_or_compute(); the report is stored under (l, k) and
re-labelled with the requested index on the way out.

Thread-safe via threading.Lock.
"""

import dataclasses
import threading
from typing import Callable, Dict, Optional, Tuple

from dirac_neck import EigenReport
from mode_core import ModeIndex


class SpectrumCache:
    def __init__(self):
        self._store: Dict[Tuple[int, int], EigenReport] = {}
        self._lock = threading.Lock()
        self._hits = 0
        self._misses = 0

    def get(self, l: int, k: int) -> Optional[EigenReport]:
        with self._lock:
            report = self._store.get((l, k))
            if report is None:
                self._misses += 1
            else:
                self._hits += 1
            return report

    def set(self, l: int, k: int, report: EigenReport) -> None:
        with self._lock:
            self._store[(l, k)] = report

    def get_or_compute(self, index: Tuple[int, int, int],
                       compute: Callable[[Tuple[int, int, int]], EigenReport]) -> EigenReport:
        n, l, k = index
        report = self.get(l, k)
        if report is None:
            report = compute(index)
            self.set(l, k, report)
        return dataclasses.replace(report, index=ModeIndex(n, l, k))

    def clear(self) -> None:
        with self._lock:
            self._store.clear()
            self._hits = 0
            self._misses = 0

    def stats(self) -> dict:
        with self._lock:
            return {"total_entries": len(self._store), "hits": self._hits, "misses": self._misses}


spectrum_cache = SpectrumCache()
