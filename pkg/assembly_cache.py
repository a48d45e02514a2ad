"""
Assembly cache for mesh geometry and Laplacian matrices.
Avoids re-assembling when the same mesh is used by several solves,
diagnostics or concurrent convergence levels.
"""
from typing import Any, Dict
import logging
import threading

from mesh import GeometryTables, Mesh, build_geometry

logger = logging.getLogger(__name__)


class AssemblyCache:
    """Thread-safe cache of GeometryTables and LaplacianPair keyed by mesh content."""

    def __init__(self, max_meshes=16):
        """
        Initialize assembly cache.

        Args:
            max_meshes: Number of meshes kept before the oldest entry is evicted
        """
        self.max_meshes = max_meshes
        self.geometry_cache = {}   # mesh key -> GeometryTables
        self.laplacian_cache = {}  # mesh key -> LaplacianPair
        self.lock = threading.Lock()
        self.stats = {
            'hits': 0,
            'misses': 0,
            'evicted': 0,
            'total_requests': 0
        }

    def _evict(self, store):
        while len(store) > self.max_meshes:
            oldest = next(iter(store))
            del store[oldest]
            self.stats['evicted'] += 1

    def _lookup(self, store, key):
        with self.lock:
            self.stats['total_requests'] += 1
            if key in store:
                self.stats['hits'] += 1
                return store[key]
            self.stats['misses'] += 1
            return None

    def _store(self, store, key, value):
        with self.lock:
            # Another thread may have finished first; keep the earlier object
            value = store.setdefault(key, value)
            self._evict(store)
            return value

    def geometry(self, mesh: Mesh) -> GeometryTables:
        """
        Get the strict geometry tables of a mesh, building them on a miss.

        Args:
            mesh: Mesh

        Returns:
            GeometryTables

        Raises:
            AdmissibilityError: if some face distance is below tolerance
        """
        tables = self._lookup(self.geometry_cache, mesh.key)
        if tables is None:
            logger.debug(f"Geometry cache miss for mesh {mesh.key[:10]}")
            tables = self._store(self.geometry_cache, mesh.key, build_geometry(mesh))
        return tables

    def laplacians(self, mesh: Mesh):
        """
        Get the assembled Dirichlet/Neumann pair of a mesh.

        Args:
            mesh: Mesh

        Returns:
            LaplacianPair
        """
        # operators depends on discrete_space, which depends on this module
        from operators import assemble_laplacians

        pair = self._lookup(self.laplacian_cache, mesh.key)
        if pair is None:
            logger.debug(f"Laplacian cache miss for mesh {mesh.key[:10]}")
            pair = self._store(self.laplacian_cache, mesh.key,
                               assemble_laplacians(mesh, self.geometry(mesh)))
        return pair

    def clear(self):
        """Clear all cached data."""
        with self.lock:
            self.geometry_cache.clear()
            self.laplacian_cache.clear()

    def get_stats(self) -> Dict[str, Any]:
        """Get cache statistics."""
        with self.lock:
            stats = self.stats.copy()
            stats['cache_size'] = len(self.geometry_cache) + len(self.laplacian_cache)

            if stats['total_requests'] > 0:
                stats['hit_rate'] = (stats['hits'] / stats['total_requests']) * 100
            else:
                stats['hit_rate'] = 0.0

            return stats

    def reset_stats(self):
        """Reset cache statistics."""
        with self.lock:
            self.stats = {
                'hits': 0,
                'misses': 0,
                'evicted': 0,
                'total_requests': 0
            }


# Global cache instance
_global_cache = None
_global_lock = threading.Lock()


def get_cache(max_meshes=16) -> AssemblyCache:
    """
    Get or create the global cache instance.

    Args:
        max_meshes: Capacity (only used on first call)

    Returns:
        AssemblyCache instance
    """
    global _global_cache
    with _global_lock:
        if _global_cache is None:
            _global_cache = AssemblyCache(max_meshes=max_meshes)
        return _global_cache


def clear_global_cache():
    """Clear the global cache."""
    global _global_cache
    if _global_cache is not None:
        _global_cache.clear()
