from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

from .errors import ConfigError

DEFAULT_MAX_MODALITIES = 8


@dataclass(frozen=True)
class MixtureCandidate:
    """A non-empty subset of modalities (0-based indices, ascending)."""

    id: int
    members: tuple[int, ...]

    def __contains__(self, m: int) -> bool:
        return m in self.members

    def label(self) -> str:
        return "+".join(str(m) for m in self.members)


def enumerate_candidates(n_modalities: int,
                         max_modalities: int = DEFAULT_MAX_MODALITIES) -> list[MixtureCandidate]:
    """All 2^M - 1 non-empty modality subsets, ordered by size then lexicographically."""
    if n_modalities < 1:
        raise ConfigError(f"need at least one modality, got {n_modalities}")
    if n_modalities > max_modalities:
        raise ConfigError(
            f"mixture enumeration over M={n_modalities} modalities would create "
            f"2^{n_modalities}-1={2**n_modalities - 1} candidates, above the cap "
            f"M_max={max_modalities} (2^{max_modalities}-1={2**max_modalities - 1}); "
            "raise max_modalities explicitly to allow it")
    out = []
    for size in range(1, n_modalities + 1):
        for members in combinations(range(n_modalities), size):
            out.append(MixtureCandidate(len(out), members))
    return out
