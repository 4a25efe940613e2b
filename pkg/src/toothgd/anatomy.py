"""FDI tooth codes, heatmap channel order and tooth adjacency."""
from __future__ import annotations

import json
from pathlib import Path

FDI_CODES = tuple(q * 10 + p for q in (1, 2, 3, 4) for p in range(1, 9))
N_TEETH = len(FDI_CODES)
_CHANNEL = {fdi: ch for ch, fdi in enumerate(FDI_CODES)}

# patient right to left along each jaw
UPPER_ARCH = tuple(range(18, 10, -1)) + tuple(range(21, 29))
LOWER_ARCH = tuple(range(48, 40, -1)) + tuple(range(31, 39))


def check_fdi(fdi) -> int:
    code = int(fdi)
    if code != fdi or code not in _CHANNEL:
        raise ValueError(f"invalid FDI tooth code: {fdi!r}")
    return code


def fdi_to_channel(fdi: int) -> int:
    return _CHANNEL[check_fdi(fdi)]


def channel_to_fdi(channel: int) -> int:
    if not 0 <= int(channel) < N_TEETH or int(channel) != channel:
        raise ValueError(f"invalid channel index: {channel!r}")
    return FDI_CODES[int(channel)]


def quadrant(fdi: int) -> int:
    return check_fdi(fdi) // 10


def position(fdi: int) -> int:
    return check_fdi(fdi) % 10


def is_upper(fdi: int) -> bool:
    return quadrant(fdi) in (1, 2)


class AdjacencySet:
    """Unordered pairs of adjacent teeth, keyed by FDI code.

    Pairs are stored as sorted tuples; iteration follows the sorted channel
    order so that reductions over pairs are reproducible.
    """

    def __init__(self, pairs=()):
        normalized = set()
        for pair in pairs:
            i, j = (check_fdi(v) for v in pair)
            if i == j:
                raise ValueError(f"tooth {i} cannot be adjacent to itself")
            normalized.add(tuple(sorted((i, j), key=fdi_to_channel)))
        self._pairs = tuple(sorted(normalized, key=lambda p: (_CHANNEL[p[0]], _CHANNEL[p[1]])))

    def __iter__(self):
        return iter(self._pairs)

    def __len__(self):
        return len(self._pairs)

    def __contains__(self, pair):
        try:
            i, j = (check_fdi(v) for v in pair)
        except (TypeError, ValueError):
            return False
        return tuple(sorted((i, j), key=fdi_to_channel)) in self._pairs

    def __eq__(self, other):
        return isinstance(other, AdjacencySet) and self._pairs == other._pairs

    def __repr__(self):
        return f"AdjacencySet({list(self._pairs)!r})"

    @property
    def pairs(self) -> tuple:
        return self._pairs

    def neighbors(self, fdi: int) -> tuple:
        fdi = check_fdi(fdi)
        out = [j if i == fdi else i for i, j in self._pairs if fdi in (i, j)]
        return tuple(sorted(out, key=fdi_to_channel))

    def channel_pairs(self, teeth=FDI_CODES) -> list:
        """Pairs as indices into ``teeth``; pairs with an absent tooth are skipped."""
        index = {check_fdi(t): k for k, t in enumerate(teeth)}
        out = [(index[i], index[j]) for i, j in self._pairs if i in index and j in index]
        return sorted(tuple(sorted(p)) for p in out)

    def to_json(self) -> list:
        return [list(p) for p in self._pairs]


def default_adjacency() -> AdjacencySet:
    """Consecutive teeth along each arch, midline pairs included (30 pairs)."""
    pairs = []
    for arch in (UPPER_ARCH, LOWER_ARCH):
        pairs.extend(zip(arch[:-1], arch[1:]))
    return AdjacencySet(pairs)


def cross_arch_adjacency() -> AdjacencySet:
    """Default pairs plus the opposing upper/lower tooth of each position."""
    # quadrant 1 faces 4 (patient right), 2 faces 3 (patient left)
    extra = [(10 * q + p, 10 * (5 - q) + p) for q in (1, 2) for p in range(1, 9)]
    return AdjacencySet(list(default_adjacency()) + extra)


def load_adjacency(path) -> AdjacencySet:
    """Read a JSON array of ``[fdi_i, fdi_j]`` pairs."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list) or not all(
        isinstance(p, list) and len(p) == 2 for p in data
    ):
        raise ValueError(f"{path}: adjacency file must be a JSON array of [fdi_i, fdi_j] pairs")
    return AdjacencySet(data)
