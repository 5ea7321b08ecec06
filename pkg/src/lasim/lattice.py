"""The snapshot lattice: register cells, per-process snapshot counters, join.

An :class:`AsoVector` holds ``m`` register cells followed by ``n`` snapshot
counters.  A register cell is a ``(writes, value)`` pair ordered
lexicographically, so the per-position join is a plain ``max``.  Payloads may
be any mutually comparable Python values; the default is ``str``, whose
ordering coincides with the byte order of its UTF-8 encoding.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Any, Iterable, NamedTuple, Sequence

ENCODING_VERSION = 1


class DimensionError(ValueError):
    """Two lattice values with different (m, n) were combined."""


class RegisterCell(NamedTuple):
    writes: int
    value: Any


def cell_leq(a: RegisterCell, b: RegisterCell) -> bool:
    return a.writes < b.writes or (a.writes == b.writes and a.value <= b.value)


@dataclass(frozen=True)
class LatticeConfig:
    m: int
    n: int
    initial: Any = ""

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"lattice dimensions must be positive, got m={self.m} n={self.n}")

    @classmethod
    def square(cls, n: int, initial: Any = "") -> LatticeConfig:
        return cls(n, n, initial)

    def bottom(self) -> AsoVector:
        return AsoVector.bottom(self.m, self.n, self.initial)


class AsoVector:
    """Immutable element of the (m+n)-position lattice."""

    __slots__ = ("registers", "counters", "_hash")

    def __init__(self, registers: Iterable[RegisterCell | tuple], counters: Iterable[int]):
        regs = tuple(RegisterCell(*c) for c in registers)
        ctrs = tuple(int(c) for c in counters)
        if not regs or not ctrs:
            raise ValueError("an AsoVector needs at least one register and one counter")
        for c in regs:
            if c.writes < 0:
                raise ValueError(f"negative write count in {c!r}")
        if any(c < 0 for c in ctrs):
            raise ValueError(f"negative snapshot counter in {ctrs!r}")
        object.__setattr__(self, "registers", regs)
        object.__setattr__(self, "counters", ctrs)
        object.__setattr__(self, "_hash", hash((regs, ctrs)))

    @classmethod
    def _raw(cls, regs: tuple, ctrs: tuple) -> AsoVector:
        # trusted constructor for join results
        self = object.__new__(cls)
        object.__setattr__(self, "registers", regs)
        object.__setattr__(self, "counters", ctrs)
        object.__setattr__(self, "_hash", hash((regs, ctrs)))
        return self

    @classmethod
    def bottom(cls, m: int, n: int, initial: Any = "") -> AsoVector:
        return cls([RegisterCell(0, initial)] * m, [0] * n)

    def __setattr__(self, name, value):
        raise AttributeError("AsoVector is immutable")

    @property
    def m(self) -> int:
        return len(self.registers)

    @property
    def n(self) -> int:
        return len(self.counters)

    @property
    def dims(self) -> tuple[int, int]:
        return len(self.registers), len(self.counters)

    def is_bottom(self) -> bool:
        return not any(self.counters) and all(c.writes == 0 for c in self.registers)

    def __eq__(self, other):
        if not isinstance(other, AsoVector):
            return NotImplemented
        return (
            self._hash == other._hash
            and self.registers == other.registers
            and self.counters == other.counters
        )

    def __hash__(self):
        return self._hash

    def __le__(self, other: AsoVector) -> bool:
        return leq(self, other)

    def __or__(self, other: AsoVector) -> AsoVector:
        return join(self, other)

    def __repr__(self):
        regs = ",".join(f"({c.writes},{c.value!r})" for c in self.registers)
        ctrs = ",".join(map(str, self.counters))
        return f"AsoVector[{regs}|{ctrs}]"

    def to_bytes(self) -> bytes:
        """Canonical encoding: version byte, m, n, then cells and counters.

        Cells are ``writes`` (u64) + payload length (u32) + UTF-8 payload;
        counters are u64.  All integers big-endian.
        """
        parts = [struct.pack(">BII", ENCODING_VERSION, self.m, self.n)]
        for c in self.registers:
            data = str(c.value).encode("utf-8")
            parts.append(struct.pack(">QI", c.writes, len(data)))
            parts.append(data)
        parts.append(struct.pack(f">{self.n}Q", *self.counters))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> AsoVector:
        version, m, n = struct.unpack_from(">BII", data, 0)
        if version != ENCODING_VERSION:
            raise ValueError(f"unsupported AsoVector encoding version {version}")
        off = struct.calcsize(">BII")
        regs = []
        for _ in range(m):
            w, ln = struct.unpack_from(">QI", data, off)
            off += struct.calcsize(">QI")
            regs.append(RegisterCell(w, data[off:off + ln].decode("utf-8")))
            off += ln
        ctrs = struct.unpack_from(f">{n}Q", data, off)
        off += 8 * n
        if off != len(data):
            raise ValueError("trailing bytes after AsoVector encoding")
        return cls(regs, ctrs)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()[:16]

    def to_json(self) -> dict:
        return {"r": [[c.writes, c.value] for c in self.registers], "c": list(self.counters)}

    @classmethod
    def from_json(cls, obj: dict) -> AsoVector:
        return cls([RegisterCell(w, v) for w, v in obj["r"]], obj["c"])


def _check_dims(a: AsoVector, b: AsoVector) -> None:
    if len(a.registers) != len(b.registers) or len(a.counters) != len(b.counters):
        raise DimensionError(f"dimension mismatch: {a.dims} vs {b.dims}")


def leq(a: AsoVector, b: AsoVector) -> bool:
    _check_dims(a, b)
    if a is b:
        return True
    for x, y in zip(a.counters, b.counters):
        if x > y:
            return False
    for x, y in zip(a.registers, b.registers):
        if x > y:
            return False
    return True


def lt(a: AsoVector, b: AsoVector) -> bool:
    return a != b and leq(a, b)


def join(a: AsoVector, b: AsoVector) -> AsoVector:
    _check_dims(a, b)
    if a is b:
        return a
    regs = tuple(x if x >= y else y for x, y in zip(a.registers, b.registers))
    ctrs = tuple(x if x >= y else y for x, y in zip(a.counters, b.counters))
    if regs == a.registers and ctrs == a.counters:
        return a
    if regs == b.registers and ctrs == b.counters:
        return b
    return AsoVector._raw(regs, ctrs)


def join_all(values: Iterable[AsoVector], bottom: AsoVector) -> AsoVector:
    acc = bottom
    for v in values:
        acc = join(acc, v)
    return acc


def comparable(a: AsoVector, b: AsoVector) -> bool:
    return leq(a, b) or leq(b, a)


def make_update_vector(cfg: LatticeConfig, i: int, w: int, v: Any) -> AsoVector:
    """Vector with cell ``(w, v)`` at register ``i`` and bottom elsewhere."""
    if not 0 <= i < cfg.m:
        raise IndexError(f"register index {i} out of range for m={cfg.m}")
    if w < 1:
        raise ValueError("an update vector needs writes >= 1")
    regs = [RegisterCell(0, cfg.initial)] * cfg.m
    regs[i] = RegisterCell(w, v)
    return AsoVector(regs, [0] * cfg.n)


def make_snapshot_vector(cfg: LatticeConfig, i: int, r: int) -> AsoVector:
    """Vector with snapshot counter ``r`` for process ``i`` and bottom elsewhere."""
    if not 0 <= i < cfg.n:
        raise IndexError(f"process index {i} out of range for n={cfg.n}")
    if r < 1:
        raise ValueError("a snapshot vector needs r >= 1")
    ctrs = [0] * cfg.n
    ctrs[i] = r
    return AsoVector([RegisterCell(0, cfg.initial)] * cfg.m, ctrs)


def project_registers(x: AsoVector) -> list:
    return [c.value for c in x.registers]


def chain_key(x: AsoVector) -> tuple:
    """Sort key that orders any chain of the lattice consistently with ``leq``.

    If ``a`` strictly precedes ``b`` then either the total count is smaller,
    or the counts agree position-wise and only payloads grow.
    """
    total = sum(c.writes for c in x.registers) + sum(x.counters)
    return (total, tuple(c.value for c in x.registers))


def first_incomparable(values: Sequence[AsoVector]) -> tuple[int, int] | None:
    """Return indices of an incomparable pair, or None if ``values`` is a chain."""
    order = sorted(range(len(values)), key=lambda k: chain_key(values[k]))
    for a, b in zip(order, order[1:]):
        if not leq(values[a], values[b]):
            return (a, b)
    return None
