"""Pseudorandom target ordering over an IPv4 address space.

Targets are visited by walking the multiplicative group of integers modulo a
prime ``p`` that is larger than the number of candidate addresses ``n``.  Every
group element ``x`` in ``1..n`` maps to the ``x-1``-th included address; the
elements above ``n`` are skipped.  Because the generator is a primitive root,
one full trip around the cycle touches every element exactly once, so the plan
needs O(1) state and never revisits a host.
"""

from __future__ import annotations

import bisect
import ipaddress
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import EmptyTargetSpace, PrimeSearchFailure

IPV4_SPACE = 1 << 32
# Smallest prime above 2**32; used directly for whole-Internet plans.
FULL_SPACE_PRIME = IPV4_SPACE + 15
_PRIME_SEARCH_LIMIT = IPV4_SPACE + (1 << 10)

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for n < 3.3e24."""
    if n < 2:
        return False
    for q in _MR_BASES:
        if n % q == 0:
            return n == q
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def next_prime_above(n: int) -> int:
    if n + 1 == FULL_SPACE_PRIME or n == IPV4_SPACE:
        return FULL_SPACE_PRIME
    candidate = n + 1
    while candidate <= _PRIME_SEARCH_LIMIT:
        if is_prime(candidate):
            return candidate
        candidate += 1
    raise PrimeSearchFailure(f"no prime found above {n} in the search window")


def prime_factors(n: int) -> list[int]:
    factors = []
    d = 2
    while d * d <= n:
        if n % d == 0:
            factors.append(d)
            while n % d == 0:
                n //= d
        d += 1 if d == 2 else 2
    if n > 1:
        factors.append(n)
    return factors


def is_primitive_root(g: int, p: int, factors: Iterable[int] | None = None) -> bool:
    if p == 2:
        return g % 2 == 1
    if not 1 < g < p:
        return False
    if factors is None:
        factors = prime_factors(p - 1)
    return all(pow(g, (p - 1) // q, p) != 1 for q in factors)


def _parse_network(text) -> ipaddress.IPv4Network:
    net = ipaddress.ip_network(str(text).strip(), strict=False)
    if net.version != 4:
        raise ValueError(f"only IPv4 targets are supported: {text}")
    return net


def _merge(networks: Iterable[ipaddress.IPv4Network]) -> list[tuple[int, int]]:
    """Collapse networks into sorted, disjoint half-open integer intervals."""
    spans = sorted((int(n.network_address), int(n.broadcast_address) + 1) for n in networks)
    merged: list[list[int]] = []
    for lo, hi in spans:
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(lo, hi) for lo, hi in merged]


def read_cidr_file(path) -> list[str]:
    """One CIDR or address per line; ``#`` starts a comment."""
    entries = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            entries.append(line)
    return entries


@dataclass
class TargetSpec:
    include_ranges: list
    exclude_ranges: list = field(default_factory=list)
    port: int = 11311

    def __post_init__(self):
        if not self.include_ranges:
            raise ValueError("include_ranges must not be empty")
        if not 1 <= int(self.port) <= 65535:
            raise ValueError(f"port out of range: {self.port}")
        self.include_ranges = [_parse_network(r) for r in self.include_ranges]
        self.exclude_ranges = [_parse_network(r) for r in self.exclude_ranges]

    @classmethod
    def from_files(cls, targets_path, blocklist_path=None, port=11311) -> "TargetSpec":
        exclude = read_cidr_file(blocklist_path) if blocklist_path else []
        return cls(read_cidr_file(targets_path), exclude, port)

    def include_intervals(self) -> list[tuple[int, int]]:
        return _merge(self.include_ranges)

    def exclude_intervals(self) -> list[tuple[int, int]]:
        return _merge(self.exclude_ranges)

    def space_size(self) -> int:
        return sum(hi - lo for lo, hi in self.include_intervals())

    def effective_size(self) -> int:
        """Number of addresses that will actually be emitted."""
        total = 0
        excl = self.exclude_intervals()
        for lo, hi in self.include_intervals():
            total += hi - lo
            for elo, ehi in excl:
                overlap = min(hi, ehi) - max(lo, elo)
                if overlap > 0:
                    total -= overlap
        return total

    def is_full_space(self) -> bool:
        return self.include_intervals() == [(0, IPV4_SPACE)]


class AddressPlan:
    """Iteration state over one cycle of the multiplicative group mod ``p``.

    ``next_address`` returns ``None`` once the cycle (or this shard's slice
    of it) has been walked.
    """

    def __init__(self, spec: TargetSpec, modulus_p: int, generator_g: int,
                 start: int, seed: int | None = None, cycle_length: int | None = None):
        if not is_primitive_root(generator_g, modulus_p):
            raise ValueError(f"{generator_g} is not a primitive root mod {modulus_p}")
        if not 1 <= start < modulus_p:
            raise ValueError("start must be a non-zero group element")
        self.spec = spec
        self.modulus_p = modulus_p
        self.generator_g = generator_g
        self.seed = seed
        self.start = start
        self.cursor = start
        self.emitted_count = 0
        self.steps = 0
        self.cycle_length = modulus_p - 1 if cycle_length is None else cycle_length

        intervals = spec.include_intervals()
        self._n = sum(hi - lo for lo, hi in intervals)
        if self._n >= modulus_p:
            raise ValueError("modulus must exceed the address-space size")
        # cumulative offsets: element x -> offset x-1 -> interval by bisect
        self._starts = []
        self._bases = []
        acc = 0
        for lo, hi in intervals:
            self._starts.append(acc)
            self._bases.append(lo)
            acc += hi - lo
        excl = spec.exclude_intervals()
        self._excl_lo = [lo for lo, _ in excl]
        self._excl_hi = [hi for _, hi in excl]

    @property
    def port(self) -> int:
        return self.spec.port

    @property
    def exhausted(self) -> bool:
        return self.steps >= self.cycle_length

    def _element_to_int(self, x: int) -> int | None:
        if x > self._n:
            return None
        offset = x - 1
        i = bisect.bisect_right(self._starts, offset) - 1
        addr = self._bases[i] + (offset - self._starts[i])
        j = bisect.bisect_right(self._excl_lo, addr) - 1
        if j >= 0 and addr < self._excl_hi[j]:
            return None
        return addr

    def next_int(self) -> int | None:
        p, g = self.modulus_p, self.generator_g
        while self.steps < self.cycle_length:
            self.cursor = self.cursor * g % p
            self.steps += 1
            addr = self._element_to_int(self.cursor)
            if addr is not None:
                self.emitted_count += 1
                return addr
        return None

    def next_address(self) -> ipaddress.IPv4Address | None:
        addr = self.next_int()
        return None if addr is None else ipaddress.IPv4Address(addr)

    def __iter__(self) -> Iterator[ipaddress.IPv4Address]:
        while True:
            addr = self.next_address()
            if addr is None:
                return
            yield addr

    def shard(self, index: int, count: int) -> "AddressPlan":
        """Contiguous slice ``index`` of ``count`` of this plan's remaining cycle.

        Shards partition the cycle, so handing one to each worker covers the
        space exactly once without a shared cursor.
        """
        if not 0 <= index < count:
            raise ValueError("shard index out of range")
        remaining = self.cycle_length - self.steps
        size, extra = divmod(remaining, count)
        begin = index * size + min(index, extra)
        length = size + (1 if index < extra else 0)
        first = self.cursor * pow(self.generator_g, begin, self.modulus_p) % self.modulus_p
        return AddressPlan(self.spec, self.modulus_p, self.generator_g, first,
                           seed=self.seed, cycle_length=length)


def next_address(plan: AddressPlan) -> ipaddress.IPv4Address | None:
    return plan.next_address()


def build_plan(spec: TargetSpec, seed: int, *, allow_empty: bool = False) -> AddressPlan:
    """Construct the scan ordering for ``spec``; same (spec, seed) gives the same order."""
    if spec.effective_size() == 0 and not allow_empty:
        raise EmptyTargetSpace("every included address is excluded")
    n = spec.space_size()
    p = FULL_SPACE_PRIME if spec.is_full_space() else next_prime_above(n)
    rng = random.Random(seed & 0xFFFFFFFFFFFFFFFF)
    if p <= 3:
        g = p - 1 if p == 3 else 1
    else:
        factors = prime_factors(p - 1)
        g = rng.randrange(2, p)
        # first primitive root at or after the seeded candidate, wrapping in [2, p)
        for _ in range(p - 2):
            if is_primitive_root(g, p, factors):
                break
            g = g + 1 if g + 1 < p else 2
        else:  # pragma: no cover - every prime has a primitive root
            raise PrimeSearchFailure(f"no primitive root mod {p}")
    start = rng.randrange(1, p)
    return AddressPlan(spec, p, g, start, seed=seed)
