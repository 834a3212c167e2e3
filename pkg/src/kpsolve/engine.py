"""Single-node shard-parallel map/reduce.

Groups are split into contiguous shards whose boundaries depend only on
``(N, num_shards)``.  Shards run on a thread pool; their outputs are always
merged in shard order, so results never depend on the worker count.
"""

from __future__ import annotations

import hashlib
import os
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import Multipliers

DEFAULT_SHARD_SIZE = 16384


class MapError(RuntimeError):
    def __init__(self, group_id: int, cause: BaseException):
        self.group_id = group_id
        super().__init__(f"map failed on group {group_id}: {cause!r}")


class ChecksumError(ValueError):
    pass


def default_workers() -> int:
    env = os.environ.get("KP_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


@dataclass(frozen=True)
class ShardPlan:
    num_groups: int
    num_shards: int
    workers: int = 1

    def __post_init__(self):
        if self.num_shards < 1 or self.workers < 1:
            raise ValueError("num_shards and workers must be positive")

    @classmethod
    def for_groups(cls, num_groups: int, workers: int | None = None, num_shards: int | None = None) -> ShardPlan:
        if num_shards is None:
            num_shards = max(1, -(-num_groups // DEFAULT_SHARD_SIZE))
        return cls(num_groups, num_shards, workers or default_workers())

    @property
    def bounds(self) -> list[tuple[int, int]]:
        n, s = self.num_groups, self.num_shards
        return [(q * n // s, (q + 1) * n // s) for q in range(s)]


def map_shards(plan: ShardPlan, fn: Callable[[int, int], object]) -> list:
    """``fn(lo, hi)`` for every shard; results in shard order (a barrier)."""
    bounds = plan.bounds
    if plan.workers == 1 or len(bounds) == 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=plan.workers) as pool:
        futures = [pool.submit(fn, lo, hi) for lo, hi in bounds]
        return [f.result() for f in futures]


def map_reduce(
    plan: ShardPlan,
    map_fn: Callable[[int], Iterable[tuple[object, object]]],
    reduce_fn: Callable[[object, list], object],
) -> dict:
    """Generic per-group map/reduce.

    ``map_fn(group_id)`` yields ``(key, value)`` pairs.  ``reduce_fn`` sees the
    values of a key ordered by shard, then by emission order within the shard.
    """

    def run_shard(lo: int, hi: int):
        out = []
        for gid in range(lo, hi):
            try:
                out.extend(map_fn(gid))
            except Exception as exc:
                raise MapError(gid, exc) from exc
        return out

    buckets: dict = {}
    for pairs in map_shards(plan, run_shard):
        for key, value in pairs:
            buckets.setdefault(key, []).append(value)
    return {key: reduce_fn(key, values) for key, values in buckets.items()}


# -- checkpoints --------------------------------------------------------------

_CK_HEADER = "KPCK v1"


def checkpoint(lam, iteration: int, path: str | os.PathLike) -> None:
    lam = np.asarray(getattr(lam, "lam", lam), dtype=np.float64)
    body = f"{_CK_HEADER}\niter {int(iteration)}\nK {lam.size}\nlambda {' '.join(float(v).hex() for v in lam)}\n"
    digest = hashlib.sha256(body.encode()).hexdigest()
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(body + f"sha256 {digest}\n")
    os.replace(tmp, path)


def resume(path: str | os.PathLike) -> tuple[Multipliers, int]:
    """Multipliers and iteration stored by :func:`checkpoint`.

    Raises ``FileNotFoundError`` for a missing file and ``ChecksumError`` for
    anything truncated or altered.
    """
    with open(path) as fh:
        text = fh.read()
    body, sep, tail = text.rpartition("sha256 ")
    if not sep or hashlib.sha256(body.encode()).hexdigest() != tail.strip():
        raise ChecksumError(f"checkpoint {path} failed its checksum")
    lines = body.splitlines()
    try:
        if lines[0] != _CK_HEADER:
            raise ValueError(lines[0])
        iteration = int(lines[1].split()[1])
        k = int(lines[2].split()[1])
        lam = np.array([float.fromhex(t) for t in lines[3].split()[1:]])
    except (IndexError, ValueError) as exc:
        raise ChecksumError(f"checkpoint {path} is malformed: {exc}") from None
    if lam.size != k:
        raise ChecksumError(f"checkpoint {path} declares K={k} but holds {lam.size} values")
    return Multipliers(lam, iteration), iteration
