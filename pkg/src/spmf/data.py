"""Sparse rating data, trust edges, and item-to-domain assignments.

File formats (UTF-8 text, one record per line, TAB-separated, lines
starting with '#' and blank lines ignored):

* ratings: ``user_id<TAB>item_id<TAB>rating``
* trust:   ``truster_id<TAB>trustee_id`` (directed)
* domains: ``item_id<TAB>domain_id``

External ids are arbitrary strings; they are mapped to dense integer
indices at load time (first-appearance order) and the mapping travels
with every structure derived from the store.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

DEFAULT_SCALE = (1.0, 5.0)

#: Domain assigned to items that do not appear in a domain file, and the
#: single global domain when no domain file is given at all.
DEFAULT_DOMAIN = "__default__"


class RatingStore:
    """Immutable sparse user-item rating matrix with both marginal indices.

    Invariants: at most one rating per (user, item); every rating lies in
    [r_min, r_max]; the per-user and per-item indices hold the same
    triples.
    """

    def __init__(
        self,
        users: Sequence[str],
        items: Sequence[str],
        triples: Sequence[tuple[int, int, float]],
        scale: tuple[float, float] = DEFAULT_SCALE,
    ):
        self.users = tuple(users)
        self.items = tuple(items)
        self.user_pos = {u: k for k, u in enumerate(self.users)}
        self.item_pos = {i: k for k, i in enumerate(self.items)}
        self.triples = tuple(triples)
        self.r_min, self.r_max = float(scale[0]), float(scale[1])

        by_user: list[list[tuple[int, float]]] = [[] for _ in self.users]
        by_item: list[list[tuple[int, float]]] = [[] for _ in self.items]
        for u, i, r in self.triples:
            by_user[u].append((i, r))
            by_item[i].append((u, r))
        self._by_user = tuple(tuple(row) for row in by_user)
        self._by_item = tuple(tuple(col) for col in by_item)
        self._arrays: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None

    @property
    def m(self) -> int:
        return len(self.users)

    @property
    def n(self) -> int:
        return len(self.items)

    @property
    def rating_count(self) -> int:
        return len(self.triples)

    @property
    def scale(self) -> tuple[float, float]:
        return (self.r_min, self.r_max)

    def user_ratings(self, u: int) -> tuple[tuple[int, float], ...]:
        """All (item_index, rating) pairs of user index ``u``."""
        return self._by_user[u]

    def item_ratings(self, i: int) -> tuple[tuple[int, float], ...]:
        """All (user_index, rating) pairs of item index ``i``."""
        return self._by_item[i]

    def iter_external(self) -> Iterator[tuple[str, str, float]]:
        """Iterate triples with external ids."""
        for u, i, r in self.triples:
            yield self.users[u], self.items[i], r

    def global_mean(self) -> float:
        """Mean rating over all stored triples; scale midpoint when empty."""
        if not self.triples:
            return 0.5 * (self.r_min + self.r_max)
        return sum(r for _, _, r in self.triples) / len(self.triples)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rating triples as (user_idx, item_idx, value) arrays, cached."""
        if self._arrays is None:
            if self.triples:
                rows = np.array([t[0] for t in self.triples], dtype=np.int64)
                cols = np.array([t[1] for t in self.triples], dtype=np.int64)
                vals = np.array([t[2] for t in self.triples], dtype=np.float64)
            else:
                rows = np.empty(0, dtype=np.int64)
                cols = np.empty(0, dtype=np.int64)
                vals = np.empty(0, dtype=np.float64)
            self._arrays = (rows, cols, vals)
        return self._arrays

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RatingStore):
            return NotImplemented
        return (
            self.scale == other.scale
            and set(self.iter_external()) == set(other.iter_external())
            and set(self.users) == set(other.users)
            and set(self.items) == set(other.items)
        )

    def __repr__(self) -> str:
        return (
            f"RatingStore(m={self.m}, n={self.n}, "
            f"ratings={self.rating_count}, scale=[{self.r_min}, {self.r_max}])"
        )

    @classmethod
    def from_triples(
        cls,
        records: Iterable[tuple[str, str, float]],
        scale: tuple[float, float] = DEFAULT_SCALE,
    ) -> "RatingStore":
        """Build a store from (user_id, item_id, rating) records.

        Raises DataError on duplicate (user, item) pairs or out-of-scale
        ratings.
        """
        r_min, r_max = scale
        users: list[str] = []
        items: list[str] = []
        user_pos: dict[str, int] = {}
        item_pos: dict[str, int] = {}
        triples: list[tuple[int, int, float]] = []
        seen: set[tuple[int, int]] = set()
        for user, item, rating in records:
            rating = float(rating)
            if not (r_min <= rating <= r_max):
                raise DataError(
                    f"rating {rating} for ({user}, {item}) outside "
                    f"scale [{r_min}, {r_max}]"
                )
            u = user_pos.setdefault(user, len(users))
            if u == len(users):
                users.append(user)
            i = item_pos.setdefault(item, len(items))
            if i == len(items):
                items.append(item)
            if (u, i) in seen:
                raise DataError(f"duplicate rating for ({user}, {item})")
            seen.add((u, i))
            triples.append((u, i, rating))
        return cls(users, items, triples, scale)


class TrustGraph:
    """Directed binary trust relation among users (external string ids).

    No self-loops; at most one edge per ordered pair.
    """

    def __init__(self, edges: Iterable[tuple[str, str]]):
        out_links: dict[str, set[str]] = {}
        in_links: dict[str, set[str]] = {}
        edge_set: set[tuple[str, str]] = set()
        for a, b in edges:
            if a == b:
                raise DataError(f"self-loop on user {a}")
            edge_set.add((a, b))
            out_links.setdefault(a, set()).add(b)
            in_links.setdefault(b, set()).add(a)
        self.edges = frozenset(edge_set)
        self._out = {u: frozenset(v) for u, v in out_links.items()}
        self._in = {u: frozenset(v) for u, v in in_links.items()}

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def trustees(self, user: str) -> frozenset[str]:
        return self._out.get(user, frozenset())

    def trusters(self, user: str) -> frozenset[str]:
        return self._in.get(user, frozenset())

    def linked(self, a: str, b: str) -> bool:
        """True if a trust edge exists in either direction."""
        return (a, b) in self.edges or (b, a) in self.edges

    def __repr__(self) -> str:
        return f"TrustGraph(edges={self.edge_count})"


class DomainMap:
    """Total assignment of every store item to exactly one domain.

    Items not covered by the domain file fall into DEFAULT_DOMAIN; with no
    file at all every item lands there, which degenerates to the
    unsegmented mode.
    """

    def __init__(self, assignment: dict[str, str], store: RatingStore):
        self._assignment = dict(assignment)
        for item in store.items:
            self._assignment.setdefault(item, DEFAULT_DOMAIN)
        self.domains = tuple(sorted({self._assignment[i] for i in store.items}))

    def domain_of(self, item: str) -> str:
        return self._assignment.get(item, DEFAULT_DOMAIN)

    def items_in(self, domain: str, store: RatingStore) -> list[int]:
        """Indices of store items assigned to ``domain``."""
        return [
            k for k, item in enumerate(store.items)
            if self._assignment[item] == domain
        ]

    def __repr__(self) -> str:
        return f"DomainMap(domains={len(self.domains)})"


@dataclass(frozen=True)
class DatasetStats:
    """Size and sparsity summary of a rating store plus trust graph."""

    m: int
    n: int
    rating_count: int
    trust_edge_count: int
    rating_sparsity: float
    trust_sparsity: float

    def as_dict(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "rating_count": self.rating_count,
            "trust_edge_count": self.trust_edge_count,
            "rating_sparsity": self.rating_sparsity,
            "trust_sparsity": self.trust_sparsity,
        }


def _parse_lines(path: str) -> Iterator[tuple[int, list[str]]]:
    """Yield (line_number, fields) for data lines of a TAB-separated file."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line.split("\t")


def load_ratings(
    path: str, scale: tuple[float, float] = DEFAULT_SCALE
) -> RatingStore:
    """Load a ratings file into a RatingStore.

    Malformed lines, out-of-scale ratings, and duplicate (user, item)
    pairs raise DataError naming the offending line.
    """
    r_min, r_max = float(scale[0]), float(scale[1])
    users: list[str] = []
    items: list[str] = []
    user_pos: dict[str, int] = {}
    item_pos: dict[str, int] = {}
    triples: list[tuple[int, int, float]] = []
    seen: set[tuple[int, int]] = set()
    for lineno, fields in _parse_lines(path):
        if len(fields) != 3:
            raise DataError(
                f"{path}:{lineno}: expected user<TAB>item<TAB>rating, "
                f"got {len(fields)} fields"
            )
        user, item, raw_rating = fields
        try:
            rating = float(raw_rating)
        except ValueError:
            raise DataError(f"{path}:{lineno}: rating {raw_rating!r} is not a number")
        if not (r_min <= rating <= r_max):
            raise DataError(
                f"{path}:{lineno}: rating {rating} outside scale [{r_min}, {r_max}]"
            )
        u = user_pos.setdefault(user, len(users))
        if u == len(users):
            users.append(user)
        i = item_pos.setdefault(item, len(items))
        if i == len(items):
            items.append(item)
        if (u, i) in seen:
            raise DataError(f"{path}:{lineno}: duplicate rating for ({user}, {item})")
        seen.add((u, i))
        triples.append((u, i, rating))
    return RatingStore(users, items, triples, (r_min, r_max))


def save_ratings(store: RatingStore, path: str) -> None:
    """Write a store in the canonical format, sorted by (user, item) index."""
    from .ioutil import atomic_write

    lines = [
        f"{store.users[u]}\t{store.items[i]}\t{r!r}"
        for u, i, r in sorted(store.triples)
    ]
    atomic_write(path, "".join(line + "\n" for line in lines))


def load_trust(path: str) -> TrustGraph:
    """Load a directed trust-edge file.

    Self-loops and malformed lines raise DataError; duplicate edges are
    deduplicated with a warning.
    """
    edges: set[tuple[str, str]] = set()
    for lineno, fields in _parse_lines(path):
        if len(fields) != 2:
            raise DataError(
                f"{path}:{lineno}: expected truster<TAB>trustee, "
                f"got {len(fields)} fields"
            )
        a, b = fields
        if a == b:
            raise DataError(f"{path}:{lineno}: self-loop on user {a}")
        if (a, b) in edges:
            log.warning("%s:%d: duplicate trust edge (%s, %s), ignored", path, lineno, a, b)
            continue
        edges.add((a, b))
    return TrustGraph(edges)


def load_domains(path: Optional[str], store: RatingStore) -> DomainMap:
    """Load an item-to-domain file; with ``path=None`` every item falls
    into the single default domain (unsegmented mode).

    An item assigned to two different domains raises DataError.
    """
    assignment: dict[str, str] = {}
    if path is not None:
        for lineno, fields in _parse_lines(path):
            if len(fields) != 2:
                raise DataError(
                    f"{path}:{lineno}: expected item<TAB>domain, "
                    f"got {len(fields)} fields"
                )
            item, domain = fields
            if item in assignment and assignment[item] != domain:
                raise DataError(
                    f"{path}:{lineno}: item {item} assigned to both "
                    f"{assignment[item]} and {domain}"
                )
            assignment[item] = domain
    return DomainMap(assignment, store)


def split(
    store: RatingStore, test_fraction: float, seed: int
) -> tuple[RatingStore, RatingStore]:
    """Uniform random rating-level holdout, deterministic given seed.

    The test size is ``floor(count * test_fraction)`` (rounding toward
    train). Both halves keep the parent's full user/item universe, so
    indices stay comparable across the split.
    """
    if not (0.0 < test_fraction < 1.0):
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if store.rating_count == 0:
        raise ValueError("cannot split an empty store")
    rng = np.random.default_rng(seed)
    order = rng.permutation(store.rating_count)
    n_test = math.floor(store.rating_count * test_fraction)
    test_idx = set(order[:n_test].tolist())
    train_triples = [t for k, t in enumerate(store.triples) if k not in test_idx]
    test_triples = [t for k, t in enumerate(store.triples) if k in test_idx]
    train = RatingStore(store.users, store.items, train_triples, store.scale)
    test = RatingStore(store.users, store.items, test_triples, store.scale)
    return train, test


def stats(store: RatingStore, graph: TrustGraph) -> DatasetStats:
    """Counts and sparsity fractions of the dataset pair.

    Sparsity of an empty matrix (m or n zero) is reported as 1.0.
    """
    cells = store.m * store.n
    rating_sparsity = 1.0 - (store.rating_count / cells if cells else 0.0)
    user_pairs = store.m * store.m
    trust_sparsity = 1.0 - (graph.edge_count / user_pairs if user_pairs else 0.0)
    return DatasetStats(
        m=store.m,
        n=store.n,
        rating_count=store.rating_count,
        trust_edge_count=graph.edge_count,
        rating_sparsity=rating_sparsity,
        trust_sparsity=trust_sparsity,
    )
