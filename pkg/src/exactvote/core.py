"""Election data model for approval-based multi-winner elections.

Voters are stored as weighted groups of identical ballots: two voters who
submitted the same approval set are indistinguishable to every rule in this
package, so profiles are deduplicated at parse time.  All vote arithmetic
downstream is done in exact rationals (`fractions.Fraction`); nothing in this
package ever touches floating point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

#: An elected committee, in order of election.
Committee = tuple[int, ...]


class ElectionFormatError(ValueError):
    """Raised for malformed or inconsistent election documents."""


@dataclass(frozen=True)
class BallotGroup:
    """A maximal block of voters who all submitted the same approval ballot.

    ``approves`` holds internal candidate indices.  It may be empty: such
    voters still count toward the election size (and hence the quota) but
    never gain or lose vote fractions.
    """

    approves: frozenset[int]
    weight: int


@dataclass(frozen=True)
class Election:
    """An approval-based multi-winner election.

    Candidates are identified by their position in ``candidates``; that input
    order is also the order used whenever a rule breaks ties "by index".
    """

    candidates: tuple[str, ...]
    k: int
    groups: tuple[BallotGroup, ...]

    def __post_init__(self) -> None:
        m = len(self.candidates)
        if m == 0:
            raise ElectionFormatError("election has no candidates")
        if len(set(self.candidates)) != m:
            raise ElectionFormatError("duplicate candidate names")
        if not 1 <= self.k <= m:
            raise ElectionFormatError(
                f"committee size k={self.k} outside [1, {m}]")
        seen: set[frozenset[int]] = set()
        for g in self.groups:
            if g.weight < 1:
                raise ElectionFormatError(f"non-positive ballot weight {g.weight}")
            if not all(0 <= c < m for c in g.approves):
                raise ElectionFormatError("ballot approves an unknown candidate index")
            if g.approves in seen:
                raise ElectionFormatError("duplicate ballot groups must be merged")
            seen.add(g.approves)
        if self.n < 1:
            raise ElectionFormatError("election has no voters")

    @cached_property
    def n(self) -> int:
        """Total number of voters."""
        return sum(g.weight for g in self.groups)

    @cached_property
    def m(self) -> int:
        """Number of candidates."""
        return len(self.candidates)

    @cached_property
    def candidate_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.candidates)}

    @cached_property
    def approver_groups(self) -> tuple[tuple[int, ...], ...]:
        """For each candidate, the indices of the ballot groups approving it."""
        per: list[list[int]] = [[] for _ in self.candidates]
        for gi, g in enumerate(self.groups):
            for c in g.approves:
                per[c].append(gi)
        return tuple(tuple(v) for v in per)

    @cached_property
    def approve_masks(self) -> tuple[int, ...]:
        """Each group's approval set as a bitmask over candidate indices."""
        return tuple(sum(1 << c for c in g.approves) for g in self.groups)

    def name(self, c: int) -> str:
        return self.candidates[c]

    def names(self, cs: Iterable[int]) -> list[str]:
        return [self.candidates[c] for c in cs]


def exact_quota(e: Election) -> Fraction:
    """The exact quota n/k, in lowest terms."""
    return Fraction(e.n, e.k)


def approver_weight(e: Election, c: int) -> int:
    """Number of voters approving candidate ``c``."""
    return sum(e.groups[g].weight for g in e.approver_groups[c])


def election_from_dict(doc: object) -> Election:
    """Build a validated :class:`Election` from a decoded JSON document.

    Expected shape::

        {"candidates": ["c1", ...], "k": int,
         "ballots": [{"approves": ["c1", ...], "weight": int}, ...]}

    ``weight`` defaults to 1.  Ballots with identical approval sets are merged
    into a single group; candidate order is preserved from the input.
    """
    if not isinstance(doc, dict):
        raise ElectionFormatError("top-level JSON value must be an object")
    try:
        candidates = doc["candidates"]
        k = doc["k"]
        ballots = doc["ballots"]
    except KeyError as exc:
        raise ElectionFormatError(f"missing required key {exc.args[0]!r}") from None
    if (not isinstance(candidates, list)
            or not all(isinstance(c, str) for c in candidates)):
        raise ElectionFormatError('"candidates" must be a list of strings')
    if isinstance(k, bool) or not isinstance(k, int):
        raise ElectionFormatError('"k" must be an integer')
    if not isinstance(ballots, list):
        raise ElectionFormatError('"ballots" must be a list')

    index = {name: i for i, name in enumerate(candidates)}
    if len(index) != len(candidates):
        raise ElectionFormatError("duplicate candidate names")

    merged: dict[frozenset[int], int] = {}
    for entry in ballots:
        if not isinstance(entry, dict):
            raise ElectionFormatError("each ballot must be an object")
        approves = entry.get("approves", [])
        weight = entry.get("weight", 1)
        if not isinstance(approves, list):
            raise ElectionFormatError('"approves" must be a list of candidate names')
        if isinstance(weight, bool) or not isinstance(weight, int) or weight < 1:
            raise ElectionFormatError(f"ballot weight must be a positive integer, got {weight!r}")
        ids = set()
        for name in approves:
            if name not in index:
                raise ElectionFormatError(f"unknown candidate name {name!r} in ballot")
            ids.add(index[name])
        key = frozenset(ids)
        merged[key] = merged.get(key, 0) + weight

    groups = tuple(BallotGroup(approves, w) for approves, w in merged.items())
    return Election(tuple(candidates), k, groups)


def parse_election(text: str) -> Election:
    """Parse the JSON election format (see :func:`election_from_dict`)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ElectionFormatError(f"invalid JSON: {exc}") from None
    return election_from_dict(doc)


def election_to_dict(e: Election) -> dict:
    """Inverse of :func:`election_from_dict`, up to ballot-group order."""
    return {
        "candidates": list(e.candidates),
        "k": e.k,
        "ballots": [
            {"approves": sorted(e.names(g.approves), key=e.candidate_index.get),
             "weight": g.weight}
            for g in e.groups
        ],
    }


def check_committee(e: Election, members: Sequence[int]) -> Committee:
    """Validate a full committee: k distinct in-range candidates."""
    w = tuple(members)
    if len(w) != e.k:
        raise ElectionFormatError(f"committee has {len(w)} members, expected k={e.k}")
    if len(set(w)) != len(w):
        raise ElectionFormatError("committee contains duplicate candidates")
    if not all(0 <= c < e.m for c in w):
        raise ElectionFormatError("committee references an unknown candidate")
    return w
