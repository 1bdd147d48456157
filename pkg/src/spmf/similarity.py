"""Domain-segmented preference similarity and the social influence matrix.

The influence weight of a source user on a target user within one
preference domain is the product of three factors:

* a trust branch: ``alpha`` when the pair shares a trust edge (either
  direction), ``1 - alpha`` otherwise,
* the Pearson similarity of the two users over their co-rated items in
  the domain, with each user's mean taken over all items they rated in
  that domain,
* the source user's experience in the domain: the fraction of the
  domain's rated-by-anyone items that the source has rated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .data import DomainMap, RatingStore, TrustGraph
from .errors import DataError
from .ioutil import atomic_write

NEGATIVE_POLICIES = ("drop", "keep")


@dataclass(frozen=True)
class DomainProfile:
    """One user's footprint inside one domain."""

    ratings: dict[int, float]  # item index -> rating
    mean: float
    experience: float


def _domain_ratings(
    store: RatingStore, user: int, domain: str, domains: DomainMap
) -> dict[int, float]:
    return {
        i: r
        for i, r in store.user_ratings(user)
        if domains.domain_of(store.items[i]) == domain
    }


def domain_mean(
    store: RatingStore, user: int, domain: str, domains: DomainMap
) -> Optional[float]:
    """Mean of the user's ratings on items in the domain, over everything
    they rated there (not only co-rated items); None if they rated
    nothing in the domain."""
    rated = _domain_ratings(store, user, domain, domains)
    if not rated:
        return None
    return sum(rated.values()) / len(rated)


def experience(
    store: RatingStore, user: int, domain: str, domains: DomainMap
) -> float:
    """Share of the domain's rated-by-anyone items that this user rated.

    Raises ValueError when the user rated nothing in the domain (the
    value is undefined there).
    """
    mine = _domain_ratings(store, user, domain, domains)
    if not mine:
        raise ValueError(
            f"experience undefined: user index {user} has no ratings "
            f"in domain {domain!r}"
        )
    anyone: set[int] = set()
    for i in range(store.n):
        if store.item_ratings(i) and domains.domain_of(store.items[i]) == domain:
            anyone.add(i)
    return len(mine) / len(anyone)


def _pcc(
    ra: dict[int, float], rb: dict[int, float], mean_a: float, mean_b: float
) -> Optional[float]:
    """Pearson correlation over the co-rated part of two rating dicts.

    Returns None when the co-rated set is empty or either deviation norm
    is zero; a zero numerator with nonzero norms yields 0.0.
    """
    common = ra.keys() & rb.keys()
    if not common:
        return None
    num = sum((ra[i] - mean_a) * (rb[i] - mean_b) for i in common)
    da = math.sqrt(sum((ra[i] - mean_a) ** 2 for i in common))
    db = math.sqrt(sum((rb[i] - mean_b) ** 2 for i in common))
    if da == 0.0 or db == 0.0:
        return None
    return num / (da * db)


def pcc_domain_similarity(
    store: RatingStore, a: int, b: int, domain: str, domains: DomainMap
) -> Optional[float]:
    """Domain-segmented Pearson preference similarity of users a and b.

    Sums run over items both users rated in the domain; means come from
    domain_mean. Symmetric in (a, b). None when undefined (no co-rated
    items, a missing mean, or a zero deviation norm)."""
    ra = _domain_ratings(store, a, domain, domains)
    rb = _domain_ratings(store, b, domain, domains)
    if not ra or not rb:
        return None
    mean_a = sum(ra.values()) / len(ra)
    mean_b = sum(rb.values()) / len(rb)
    return _pcc(ra, rb, mean_a, mean_b)


def _catalog_pcc(ra: dict[int, float], rb: dict[int, float]) -> Optional[float]:
    """Whole-catalog correlation variant used by the inspection table.

    The cross term is evaluated on the first user's rated items with the
    second user's missing entries entering as zero ratings; each user's
    mean and deviation norm are taken over their own rated profile. This
    asymmetric form is what the reference comparison values for the
    unsegmented case correspond to; the per-domain measure used by
    training is pcc_domain_similarity.
    """
    if not ra or not rb:
        return None
    mean_a = sum(ra.values()) / len(ra)
    mean_b = sum(rb.values()) / len(rb)
    num = sum((r - mean_a) * (rb.get(i, 0.0) - mean_b) for i, r in ra.items())
    da = math.sqrt(sum((r - mean_a) ** 2 for r in ra.values()))
    db = math.sqrt(sum((r - mean_b) ** 2 for r in rb.values()))
    if da == 0.0 or db == 0.0:
        return None
    return num / (da * db)


def reference_similarities(
    store: RatingStore,
    a: int,
    b: int,
    domain: Optional[str] = None,
    domains: Optional[DomainMap] = None,
) -> tuple[Optional[float], Optional[float], Optional[float]]:
    """(cosine, jaccard, pcc) for inspection; not used by training.

    ``domain=None`` scopes to the whole catalog. Cosine treats missing
    ratings as zero; Jaccard compares rated-item sets. All three are
    None when either user rated nothing in the scope.
    """
    if domain is None:
        ra = dict(store.user_ratings(a))
        rb = dict(store.user_ratings(b))
    else:
        if domains is None:
            raise ValueError("domain scope requires a DomainMap")
        ra = _domain_ratings(store, a, domain, domains)
        rb = _domain_ratings(store, b, domain, domains)
    if not ra or not rb:
        return (None, None, None)

    dot = sum(r * rb[i] for i, r in ra.items() if i in rb)
    na = math.sqrt(sum(r * r for r in ra.values()))
    nb = math.sqrt(sum(r * r for r in rb.values()))
    cos = dot / (na * nb)

    inter = len(ra.keys() & rb.keys())
    union = len(ra.keys() | rb.keys())
    jaccard = inter / union

    if domain is None:
        pcc = _catalog_pcc(ra, rb)
    else:
        mean_a = sum(ra.values()) / len(ra)
        mean_b = sum(rb.values()) / len(rb)
        pcc = _pcc(ra, rb, mean_a, mean_b)
    return (cos, jaccard, pcc)


def influence(
    source: str,
    target: str,
    alpha: float,
    graph: TrustGraph,
    sim: float,
    xi: float,
) -> float:
    """Influence weight of ``source`` on ``target``: the trust branch
    (alpha if linked, 1 - alpha otherwise) times similarity times the
    source's domain experience."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    branch = alpha if graph.linked(source, target) else 1.0 - alpha
    return branch * sim * xi


class InfluenceMatrix:
    """Per-domain sparse influence weights keyed (source_idx, target_idx).

    Constructed against a specific training store; ``user_ids`` carries
    that store's index-to-id mapping so entries can be exported and
    reloaded. With the default ``drop`` policy every stored weight is
    positive and bounded by max(alpha, 1 - alpha).
    """

    def __init__(
        self,
        entries: dict[str, dict[tuple[int, int], float]],
        alpha: float,
        user_ids: Iterable[str],
        max_neighbors: Optional[int],
        min_overlap: int,
        negative_policy: str,
    ):
        self.entries = {d: dict(e) for d, e in entries.items()}
        self.alpha = alpha
        self.user_ids = tuple(user_ids)
        self.max_neighbors = max_neighbors
        self.min_overlap = min_overlap
        self.negative_policy = negative_policy
        self._merged: Optional[dict[tuple[int, int], float]] = None

    @property
    def domains(self) -> tuple[str, ...]:
        return tuple(sorted(self.entries))

    def entry_count(self, domain: Optional[str] = None) -> int:
        if domain is not None:
            return len(self.entries.get(domain, {}))
        return sum(len(e) for e in self.entries.values())

    def merged(self) -> dict[tuple[int, int], float]:
        """Single view with each pair's per-domain weights summed."""
        if self._merged is None:
            merged: dict[tuple[int, int], float] = {}
            for domain in sorted(self.entries):
                for key, w in self.entries[domain].items():
                    merged[key] = merged.get(key, 0.0) + w
            self._merged = merged
        return self._merged

    def view(self, domain: Optional[str] = None) -> dict[tuple[int, int], float]:
        if domain is None:
            return self.merged()
        return self.entries.get(domain, {})

    def sources_of(
        self, target: int, domain: Optional[str] = None
    ) -> list[tuple[int, float]]:
        """(source, weight) entries feeding ``target``, sorted by source."""
        return sorted(
            (s, w) for (s, t), w in self.view(domain).items() if t == target
        )

    def targets_of(
        self, source: int, domain: Optional[str] = None
    ) -> list[tuple[int, float]]:
        """(target, weight) entries where ``source`` contributes."""
        return sorted(
            (t, w) for (s, t), w in self.view(domain).items() if s == source
        )


def save_influence(matrix: InfluenceMatrix, path: str) -> None:
    """Write ``domain<TAB>source<TAB>target<TAB>weight`` records, weights
    at 12 significant digits, sorted for byte-stable output."""
    lines = []
    for domain in sorted(matrix.entries):
        for (s, t), w in sorted(matrix.entries[domain].items()):
            lines.append(
                f"{domain}\t{matrix.user_ids[s]}\t{matrix.user_ids[t]}\t{w:.12g}"
            )
    atomic_write(path, "".join(line + "\n" for line in lines))


def load_influence(
    path: str,
    store: RatingStore,
    alpha: float,
    max_neighbors: Optional[int] = None,
    min_overlap: int = 2,
    negative_policy: str = "drop",
) -> InfluenceMatrix:
    """Reload an exported influence matrix against its training store."""
    entries: dict[str, dict[tuple[int, int], float]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise DataError(
                    f"{path}:{lineno}: expected domain<TAB>source<TAB>"
                    f"target<TAB>weight, got {len(fields)} fields"
                )
            domain, source, target, raw_w = fields
            if source not in store.user_pos or target not in store.user_pos:
                raise DataError(
                    f"{path}:{lineno}: user not present in the rating store"
                )
            try:
                w = float(raw_w)
            except ValueError:
                raise DataError(f"{path}:{lineno}: weight {raw_w!r} is not a number")
            key = (store.user_pos[source], store.user_pos[target])
            entries.setdefault(domain, {})[key] = w
    return InfluenceMatrix(
        entries, alpha, store.users, max_neighbors, min_overlap, negative_policy
    )


@dataclass
class _DomainTable:
    """Per-domain working state for the matrix builder."""

    profiles: dict[int, DomainProfile] = field(default_factory=dict)
    item_users: dict[int, list[int]] = field(default_factory=dict)


def _build_domain_table(
    store: RatingStore, domain: str, domains: DomainMap
) -> _DomainTable:
    table = _DomainTable()
    raw: dict[int, dict[int, float]] = {}
    rated_items: set[int] = set()
    for u in range(store.m):
        mine = _domain_ratings(store, u, domain, domains)
        if mine:
            raw[u] = mine
            rated_items.update(mine)
    for u, mine in raw.items():
        table.profiles[u] = DomainProfile(
            ratings=mine,
            mean=sum(mine.values()) / len(mine),
            experience=len(mine) / len(rated_items),
        )
        for i in mine:
            table.item_users.setdefault(i, []).append(u)
    return table


def build_influence_matrix(
    train: RatingStore,
    graph: TrustGraph,
    domains: DomainMap,
    alpha: float = 0.4,
    max_neighbors: Optional[int] = 50,
    min_overlap: int = 2,
    negative_policy: str = "drop",
) -> InfluenceMatrix:
    """Score candidate user pairs per domain and keep the strongest.

    Candidates are enumerated through an inverted item index, so only
    pairs with at least ``min_overlap`` co-rated items in the domain are
    ever scored. For each target user, the linked and non-linked sides
    are each capped at ``max_neighbors`` entries by descending |weight|
    (``None`` disables the cap); ties break by ascending source index.
    ``drop`` discards non-positive weights; ``keep`` retains negative
    ones (exact zeros are never stored since they cannot contribute).
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if max_neighbors is not None and max_neighbors < 1:
        raise ValueError(f"max_neighbors must be >= 1 or None, got {max_neighbors}")
    if min_overlap < 1:
        raise ValueError(f"min_overlap must be >= 1, got {min_overlap}")
    if negative_policy not in NEGATIVE_POLICIES:
        raise ValueError(f"negative_policy must be one of {NEGATIVE_POLICIES}")

    entries: dict[str, dict[tuple[int, int], float]] = {}
    for domain in domains.domains:
        table = _build_domain_table(train, domain, domains)
        if not table.profiles:
            continue
        sim_cache: dict[tuple[int, int], Optional[float]] = {}
        domain_entries: dict[tuple[int, int], float] = {}
        for target in sorted(table.profiles):
            prof_t = table.profiles[target]
            overlap: dict[int, int] = {}
            for i in prof_t.ratings:
                for v in table.item_users[i]:
                    if v != target:
                        overlap[v] = overlap.get(v, 0) + 1
            linked_side: list[tuple[int, float]] = []
            other_side: list[tuple[int, float]] = []
            for source in sorted(overlap):
                if overlap[source] < min_overlap:
                    continue
                pair = (min(source, target), max(source, target))
                if pair not in sim_cache:
                    sim_cache[pair] = _pcc(
                        table.profiles[pair[0]].ratings,
                        table.profiles[pair[1]].ratings,
                        table.profiles[pair[0]].mean,
                        table.profiles[pair[1]].mean,
                    )
                sim = sim_cache[pair]
                if sim is None:
                    continue
                is_linked = graph.linked(
                    train.users[source], train.users[target]
                )
                branch = alpha if is_linked else 1.0 - alpha
                t = branch * sim * table.profiles[source].experience
                if negative_policy == "drop" and t <= 0.0:
                    continue
                if t == 0.0:
                    continue
                (linked_side if is_linked else other_side).append((source, t))
            for side in (linked_side, other_side):
                side.sort(key=lambda st: (-abs(st[1]), st[0]))
                kept = side if max_neighbors is None else side[:max_neighbors]
                for source, t in kept:
                    domain_entries[(source, target)] = t
        if domain_entries:
            entries[domain] = domain_entries
    return InfluenceMatrix(
        entries, alpha, train.users, max_neighbors, min_overlap, negative_policy
    )
