"""Retained posterior draws and their plain-text matrix export."""
import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_COL = re.compile(r"^(?P<name>[A-Za-z_][A-Za-z0-9_]*)(\[(?P<idx>[0-9,]+)\])?$")


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Parameter blocks, each an array whose first axis is the retained draw s.

    Draws are stored chain after chain, so ``n_chains`` equal slices of the
    first axis recover the individual chains.
    """

    blocks: dict
    n_chains: int = 1

    def __post_init__(self):
        sizes = {v.shape[0] for v in self.blocks.values()}
        if len(sizes) > 1:
            raise ValueError(f"blocks disagree on draw count: {sizes}")
        for v in self.blocks.values():
            v.setflags(write=False)

    def __getitem__(self, name):
        return self.blocks[name]

    def __contains__(self, name):
        return name in self.blocks

    def get(self, name, default=None):
        return self.blocks.get(name, default)

    @property
    def names(self):
        return list(self.blocks)

    @property
    def M(self):
        return next(iter(self.blocks.values())).shape[0] if self.blocks else 0

    def by_chain(self, name):
        a = self.blocks[name]
        return a.reshape(self.n_chains, a.shape[0] // self.n_chains, *a.shape[1:])

    def merged(self, other):
        if other is None:
            return self
        if other.M != self.M or other.n_chains != self.n_chains:
            raise ValueError("cannot merge draws of different layouts")
        clash = set(self.blocks) & set(other.blocks)
        if clash:
            raise ValueError(f"duplicate blocks {sorted(clash)}")
        return PosteriorDraws({**self.blocks, **other.blocks}, self.n_chains)

    def subset(self, names):
        return PosteriorDraws({k: self.blocks[k] for k in names if k in self.blocks}, self.n_chains)

    def columns(self):
        """Flatten to (column name, vector of length M) pairs."""
        out = []
        for name, a in self.blocks.items():
            if a.ndim == 1:
                out.append((name, a))
            else:
                flat = a.reshape(a.shape[0], -1)
                for k, idx in enumerate(np.ndindex(*a.shape[1:])):
                    out.append((f"{name}[{','.join(map(str, idx))}]", flat[:, k]))
        return out

    def to_csv(self, path):
        cols = self.columns()
        per = self.M // self.n_chains
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["chain", *(c for c, _ in cols)])
            for s in range(self.M):
                w.writerow([s // per, *(repr(float(v[s])) for _, v in cols)])

    @classmethod
    def from_csv(cls, path):
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = np.array([[float(x) for x in r] for r in reader if r], dtype=float)
        if rows.size == 0:
            raise ValueError(f"{path}: no draws")
        chain = rows[:, 0].astype(int)
        n_chains = len(np.unique(chain))
        groups = {}
        for k, col in enumerate(header[1:], start=1):
            mt = _COL.match(col)
            if not mt:
                raise ValueError(f"{path}: bad column name {col!r}")
            idx = tuple(int(i) for i in mt.group("idx").split(",")) if mt.group("idx") else ()
            groups.setdefault(mt.group("name"), []).append((idx, rows[:, k]))
        blocks = {}
        for name, items in groups.items():
            if items[0][0] == ():
                blocks[name] = items[0][1].copy()
                continue
            shape = tuple(max(ix[d] for ix, _ in items) + 1 for d in range(len(items[0][0])))
            a = np.empty((rows.shape[0], *shape))
            for ix, v in items:
                a[(slice(None), *ix)] = v
            blocks[name] = a
        return cls(blocks, n_chains)


@dataclass(frozen=True, eq=False)
class ChainDiagnostics:
    rhat: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)
    threshold: float = 1.1

    @property
    def max_rhat(self):
        vals = [v for v in self.rhat.values() if np.isfinite(v)]
        return max(vals) if vals else float("nan")

    @property
    def converged(self):
        return all((not np.isfinite(v) and np.isnan(v)) or v < self.threshold for v in self.rhat.values())

    def merged(self, other):
        if other is None:
            return self
        return ChainDiagnostics({**self.rhat, **other.rhat}, {**self.acceptance, **other.acceptance},
                                self.threshold)
