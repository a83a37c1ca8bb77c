"""Fixed-capacity memory of degraded exemplars with equal per-task quotas.

Default mode stores degraded images only. The experience-replay baseline
needs ground truth for its stored samples, so a buffer can be created with
store_clean=True; every other configuration keeps the memory reference-free.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpointError, EmptyBufferError, InvalidArgumentError
from .imaging import Image


class ReplayBuffer:
    def __init__(self, capacity: int, seed: int = 0, store_clean: bool = False):
        if capacity < 0:
            raise InvalidArgumentError("capacity must be >= 0")
        self.capacity = capacity
        self.store_clean = store_clean
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        # entries: list of (degraded pixels, clean pixels | None, task_id)
        self.entries: list = []
        self.max_task = 0

    def __len__(self) -> int:
        return len(self.entries)

    def task_counts(self) -> dict:
        counts: dict = {}
        for _, _, tid in self.entries:
            counts[tid] = counts.get(tid, 0) + 1
        return counts

    def quotas(self, num_tasks: int) -> dict:
        """floor(capacity / num_tasks) each, remainder to the lowest task ids."""
        base, rem = divmod(self.capacity, num_tasks)
        return {t: base + (1 if t <= rem else 0) for t in range(1, num_tasks + 1)}

    def update_after_task(self, task_dataset, task_id: int) -> "ReplayBuffer":
        if task_id != self.max_task + 1:
            raise InvalidArgumentError(
                f"tasks must arrive in order: got {task_id}, expected {self.max_task + 1}"
            )
        self.max_task = task_id
        if self.capacity == 0:
            return self
        quotas = self.quotas(task_id)
        # shrink previously stored tasks by uniform-random eviction
        kept = []
        for t in range(1, task_id):
            members = [e for e in self.entries if e[2] == t]
            q = quotas[t]
            if len(members) > q:
                keep_idx = self.rng.choice(len(members), size=q, replace=False)
                members = [members[i] for i in sorted(keep_idx)]
            kept.extend(members)
        # insert the new task: without-replacement draw from its degraded images
        q = quotas[task_id]
        n = len(task_dataset)
        if n < q:
            warnings.warn(
                f"task {task_id} has {n} samples, below its quota {q}; storing all"
            )
            take = np.arange(n)
        else:
            take = self.rng.choice(n, size=q, replace=False)
        for i in sorted(take):
            pair = task_dataset[i]
            clean = pair.clean.pixels if self.store_clean else None
            kept.append((pair.degraded.pixels, clean, task_id))
        self.entries = kept
        return self

    def sample(self, n: int, rng: np.random.Generator | None = None) -> list:
        """Uniform draw (with replacement) of (Image, task_id) pairs;
        (Image, Image, task_id) when clean images are stored."""
        if not self.entries:
            raise EmptyBufferError("replay buffer is empty")
        rng = rng if rng is not None else self.rng
        idx = rng.integers(0, len(self.entries), size=n)
        out = []
        for i in idx:
            deg, clean, tid = self.entries[i]
            if self.store_clean:
                out.append((Image(deg), Image(clean), tid))
            else:
                out.append((Image(deg), tid))
        return out

    def snapshot(self, root: Path | str) -> None:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        refs = []
        for i, (deg, clean, tid) in enumerate(self.entries):
            name = f"mem_{i:05d}.npy"
            np.save(root / name, deg)
            ref = {"degraded": name, "task_id": int(tid)}
            if clean is not None:
                cname = f"mem_{i:05d}_clean.npy"
                np.save(root / cname, clean)
                ref["clean"] = cname
            refs.append(ref)
        manifest = {
            "capacity": self.capacity,
            "seed": self.seed,
            "store_clean": self.store_clean,
            "max_task": self.max_task,
            "rng_state": self.rng.bit_generator.state,
            "entries": refs,
        }
        (root / "buffer.json").write_text(json.dumps(manifest, indent=2) + "\n")

    @classmethod
    def restore(cls, root: Path | str) -> "ReplayBuffer":
        root = Path(root)
        path = root / "buffer.json"
        if not path.exists():
            raise CorruptCheckpointError(f"missing buffer manifest: {path}")
        try:
            manifest = json.loads(path.read_text())
            buf = cls(manifest["capacity"], manifest["seed"], manifest["store_clean"])
            buf.max_task = manifest["max_task"]
            buf.rng.bit_generator.state = manifest["rng_state"]
            for ref in manifest["entries"]:
                deg = np.load(root / ref["degraded"])
                clean = np.load(root / ref["clean"]) if "clean" in ref else None
                buf.entries.append((deg, clean, ref["task_id"]))
        except (KeyError, ValueError, OSError) as e:
            raise CorruptCheckpointError(f"corrupt buffer snapshot at {root}: {e}") from e
        return buf

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReplayBuffer):
            return NotImplemented
        if (self.capacity, self.store_clean, self.max_task, len(self.entries)) != (
            other.capacity, other.store_clean, other.max_task, len(other.entries)
        ):
            return False
        if self.rng.bit_generator.state != other.rng.bit_generator.state:
            return False
        for (d1, c1, t1), (d2, c2, t2) in zip(self.entries, other.entries):
            if t1 != t2 or not np.array_equal(d1, d2):
                return False
            if (c1 is None) != (c2 is None):
                return False
            if c1 is not None and not np.array_equal(c1, c2):
                return False
        return True
