"""Exact-quota iteration machinery.

This module houses the state shared by the quota-transfer rules: per-group
vote fractions, per-candidate dissatisfaction levels, the four-way candidate
classification, and a generic two-stage driver parameterized by three hooks
(candidate selection, vote removal, completion).

The dissatisfaction level of an unelected candidate c against a committee W
is the largest integer fixed point

    level = floor((k/n) * |{voters i : c in A_i and |A_i ∩ W| < level}|)

It bounds how demanding a still-unserved cohesive voter group behind c can
be.  A voter's level for a prospective winner c is the highest level among
their other unelected approved candidates; from it derives the minimum vote
fraction the voter must retain so that each future expected winner can still
receive an even share of their ballot.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from types import MappingProxyType
from typing import Callable, Collection, Mapping, Optional, Sequence

from .core import BallotGroup, Committee, Election, exact_quota

ZERO = Fraction(0)
ONE = Fraction(1)

NORMAL = "normal"
STARVING = "starving"
EAGER = "eager"
INSUFFICIENT = "insufficiently-supported"

KIND_NORMAL = "normal"
KIND_UNSUPPORTED = "insufficiently-supported"
KIND_NOT_NORMAL = "not-normal"


class EngineError(Exception):
    """Base class for runtime failures inside a rule execution."""


class HookContractError(EngineError):
    """A selection, removal, or completion hook broke its contract."""


class InvariantViolation(EngineError):
    """A verified-mode runtime invariant failed.

    The message starts with the name of the violated check: quota-removal,
    retention, retention-floor, no-starving, level-support,
    eager-implies-normal, mass-conservation, or level-fixed-point.
    """


class OpCounter:
    """Accumulates group-scan steps for the complexity smoke tests."""

    __slots__ = ("ops",)

    def __init__(self) -> None:
        self.ops = 0

    def add(self, amount: int = 1) -> None:
        self.ops += amount


@dataclass(frozen=True)
class CandidateState:
    """Classification of an unelected candidate plus the exact quantities
    that justify it: remaining support (sum of weighted fractions over
    approvers) and removable mass (support minus the retention floors)."""

    tag: str
    support: Fraction
    removable: Fraction


@dataclass(frozen=True)
class IterationRecord:
    """One seat of a rule execution.

    ``levels`` is the dissatisfaction table at selection time (before the
    post-election refresh).  Rules that keep no fractional tally leave the
    fraction snapshots and states as ``None``.
    """

    kind: str
    chosen: int
    levels: dict[int, int]
    fractions_before: Optional[tuple[Fraction, ...]] = None
    fractions_after: Optional[tuple[Fraction, ...]] = None
    states: Optional[dict[int, CandidateState]] = None


IterationLog = list[IterationRecord]


def initial_levels(e: Election, counter: Optional[OpCounter] = None) -> dict[int, int]:
    """floor(k * n_c / n) for every candidate, in integer arithmetic."""
    levels: dict[int, int] = {}
    for c in range(e.m):
        nc = sum(e.groups[g].weight for g in e.approver_groups[c])
        if counter is not None:
            counter.add(len(e.approver_groups[c]) + 1)
        levels[c] = (e.k * nc) // e.n
    return levels


def level_fixed_point(e: Election, c: int, committee: Collection[int]) -> int:
    """Recompute a candidate's dissatisfaction level from scratch.

    Returns the largest value with value <= floor((k/n) * count(value)); by
    monotonicity of the count this is exactly the largest fixed point.
    """
    wset = frozenset(committee)
    best = 0
    for ell in range(1, e.k + 1):
        cnt = sum(e.groups[g].weight for g in e.approver_groups[c]
                  if len(e.groups[g].approves & wset) < ell)
        if ell <= (e.k * cnt) // e.n:
            best = ell
    return best


def _refresh_with_wins(levels: Mapping[int, int], e: Election, wins: Sequence[int],
                       counter: Optional[OpCounter] = None) -> dict[int, int]:
    out: dict[int, int] = {}
    for c, ell in levels.items():
        groups = e.approver_groups[c]
        while ell > 0:
            cnt = 0
            for g in groups:
                if wins[g] < ell:
                    cnt += e.groups[g].weight
            if counter is not None:
                counter.add(len(groups) + 1)
            if ell <= (e.k * cnt) // e.n:
                break
            ell -= 1
        out[c] = ell
    return out


def refresh_levels(levels: Mapping[int, int], e: Election,
                   committee: Collection[int],
                   counter: Optional[OpCounter] = None) -> dict[int, int]:
    """Lower each unelected candidate's stored level to the fixed point for
    the enlarged committee.

    Levels never increase as the committee grows, so decrementing from the
    previous table lands exactly on the new fixed point.  Candidates already
    in ``committee`` are dropped from the result.
    """
    wset = frozenset(committee)
    wins = [len(g.approves & wset) for g in e.groups]
    pending = {c: ell for c, ell in levels.items() if c not in wset}
    return _refresh_with_wins(pending, e, wins, counter)


def voter_level(levels: Mapping[int, int], group: BallotGroup, c: int,
                committee: Collection[int]) -> int:
    """Highest level among the group's approved candidates, excluding the
    committee and ``c`` itself; 0 when that set is empty."""
    best = 0
    for c2 in group.approves:
        if c2 == c or c2 in committee:
            continue
        lv = levels.get(c2, 0)
        if lv > best:
            best = lv
    return best


def retention_floor(levels: Mapping[int, int], group: BallotGroup, c: int,
                    committee: Collection[int]) -> Fraction:
    """Minimum fraction the group must keep for other expected winners if
    ``c`` is elected next.

    Zero once the group already holds its level target; otherwise the group
    still expects (level - won) further winners after c, each entitled to an
    even 1/level share, so (level - won - 1)/level must stay behind.
    """
    lv = voter_level(levels, group, c, committee)
    won = len(group.approves & frozenset(committee))
    if lv <= won:
        return ZERO
    return Fraction(lv - won - 1, lv)


def classify(e: Election, levels: Mapping[int, int],
             fractions: Sequence[Fraction], c: int,
             committee: Collection[int]) -> CandidateState:
    """Classify an unelected candidate.

    Starving: some approving group has already fallen below the fraction it
    needs for its expected number of winners.  Otherwise the tag follows
    from comparing support and removable mass against the quota: normal when
    at least the quota is removable, eager when supported but over-committed,
    insufficiently supported when support itself is below the quota.
    """
    wset = frozenset(committee)
    q = exact_quota(e)
    support = ZERO
    removable = ZERO
    starving = False
    for gi in e.approver_groups[c]:
        grp = e.groups[gi]
        f = fractions[gi]
        won = len(grp.approves & wset)
        lv = voter_level(levels, grp, c, wset)
        if lv > won and f < Fraction(lv - won, lv):
            starving = True
        keep = ZERO if lv <= won else Fraction(lv - won - 1, lv)
        support += grp.weight * f
        removable += grp.weight * (f - keep)
    if starving:
        tag = STARVING
    elif removable >= q:
        tag = NORMAL
    elif support >= q:
        tag = EAGER
    else:
        tag = INSUFFICIENT
    return CandidateState(tag, support, removable)


class EjrExactRun:
    """Execution state handed to the three hooks of :func:`run_ejr_exact`.

    Hooks read the public accessors; stage-2 completion hooks additionally
    mutate the run through :meth:`elect`.
    """

    def __init__(self, e: Election, verified: bool) -> None:
        self.election = e
        self.q = exact_quota(e)
        self.verified = verified
        self._fractions: list[Fraction] = [ONE] * len(e.groups)
        self._levels = initial_levels(e)
        self._wins = [0] * len(e.groups)
        self._winners: list[int] = []
        self._wset: set[int] = set()
        self._stage2 = False
        #: states of all unelected candidates at the current selection point
        self.states: dict[int, CandidateState] = {}
        #: candidates currently safe to elect (removable mass >= quota)
        self.normal_set: frozenset[int] = frozenset()
        self.log: IterationLog = []

    @property
    def winners(self) -> Committee:
        return tuple(self._winners)

    @property
    def fractions(self) -> tuple[Fraction, ...]:
        return tuple(self._fractions)

    @property
    def levels(self) -> Mapping[int, int]:
        return MappingProxyType(self._levels)

    @property
    def unelected(self) -> tuple[int, ...]:
        return tuple(c for c in range(self.election.m) if c not in self._wset)

    @property
    def seats_remaining(self) -> int:
        return self.election.k - len(self._winners)

    def winners_in(self, gi: int) -> int:
        """How many committee members ballot group ``gi`` approves."""
        return self._wins[gi]

    def voter_level(self, gi: int, c: int) -> int:
        return voter_level(self._levels, self.election.groups[gi], c, self._wset)

    def retention(self, gi: int, c: int) -> Fraction:
        return retention_floor(self._levels, self.election.groups[gi], c, self._wset)

    def support(self, c: int) -> Fraction:
        """Remaining weighted vote fractions approving ``c``."""
        e = self.election
        return sum((e.groups[gi].weight * self._fractions[gi]
                    for gi in e.approver_groups[c]), ZERO)

    # ------------------------------------------------------------------
    # driver internals

    def _classify_all(self) -> dict[int, CandidateState]:
        e = self.election
        return {c: classify(e, self._levels, self._fractions, c, self._wset)
                for c in range(e.m) if c not in self._wset}

    def _begin_iteration(self) -> None:
        self.states = self._classify_all()
        self.normal_set = frozenset(
            c for c, st in self.states.items() if st.removable >= self.q)
        if not self.verified:
            return
        tags = [st.tag for st in self.states.values()]
        if EAGER in tags and NORMAL not in tags:
            eager = next(c for c, st in self.states.items() if st.tag == EAGER)
            raise InvariantViolation(
                "eager-implies-normal: candidate "
                f"{self.election.name(eager)} is eager but no unelected "
                "candidate is in a normal state")
        for c in self.normal_set:
            if self.states[c].tag == STARVING:
                raise InvariantViolation(
                    f"no-starving: candidate {self.election.name(c)} has "
                    "removable mass above the quota but an approver is below "
                    "its retention fraction")

    def _commit(self, w: int, new: list[Fraction], kind: str,
                states: dict[int, CandidateState]) -> None:
        e = self.election
        old = tuple(self._fractions)
        snapshot = dict(self._levels)
        self._fractions = new
        self._winners.append(w)
        self._wset.add(w)
        for gi in e.approver_groups[w]:
            self._wins[gi] += 1
        del self._levels[w]
        self._levels = _refresh_with_wins(self._levels, e, self._wins)
        self.log.append(IterationRecord(kind, w, snapshot, old, tuple(new), states))

    def _apply_normal(self, w: int, updates: Mapping[int, Fraction]) -> None:
        e, q = self.election, self.q
        approvers = e.approver_groups[w]
        approver_set = set(approvers)
        old = self._fractions
        new = list(old)
        for gi, f_new in updates.items():
            if gi not in approver_set:
                raise HookContractError(
                    f"removal hook changed ballot group {gi}, which does not "
                    f"approve {e.name(w)}")
            f_new = Fraction(f_new)
            if f_new < 0 or f_new > old[gi]:
                raise HookContractError(
                    f"fraction-bounds: group {gi} set to {f_new}, outside "
                    f"[0, {old[gi]}]")
            new[gi] = f_new
        removed = sum((old[gi] - new[gi]) * e.groups[gi].weight
                      for gi in approvers)
        if removed != q:
            raise HookContractError(
                f"quota-removal: hook removed {removed} votes from "
                f"{e.name(w)}'s approvers, quota is {q}")
        for gi in approvers:
            grp = e.groups[gi]
            won = self._wins[gi]
            lv = voter_level(self._levels, grp, w, self._wset)
            if lv > won and new[gi] < Fraction(lv - won - 1, lv):
                raise HookContractError(
                    f"retention: group {gi} left with {new[gi]}, below its "
                    f"floor {Fraction(lv - won - 1, lv)} for level {lv} with "
                    f"{won} approved winners")
        self._commit(w, new, KIND_NORMAL, self.states)
        if self.verified:
            self._verify_after_normal()

    def _verify_after_normal(self) -> None:
        e, q = self.election, self.q
        j = len(self._winners)
        total = sum((self._fractions[gi] * g.weight
                     for gi, g in enumerate(e.groups)), ZERO)
        if total != e.n - j * q:
            raise InvariantViolation(
                f"mass-conservation: remaining mass {total} after {j} normal "
                f"iterations, expected {e.n - j * q}")
        for c, ell in self._levels.items():
            want = level_fixed_point(e, c, self._wset)
            if ell != want:
                raise InvariantViolation(
                    f"level-fixed-point: stored level {ell} for "
                    f"{e.name(c)}, recomputed {want}")
        for gi, grp in enumerate(e.groups):
            if not grp.approves:
                continue
            li = max((self._levels.get(c2, 0) for c2 in grp.approves
                      if c2 not in self._wset), default=0)
            won = self._wins[gi]
            if won < li and self._fractions[gi] < Fraction(li - won, li):
                raise InvariantViolation(
                    f"retention-floor: group {gi} holds {self._fractions[gi]} "
                    f"with {won} approved winners at voter level {li}")
        for c, ell in self._levels.items():
            st = classify(e, self._levels, self._fractions, c, self._wset)
            if st.tag == STARVING:
                raise InvariantViolation(
                    f"no-starving: candidate {e.name(c)} is starving after "
                    f"{j} normal iterations")
            if ell >= 1:
                s = ZERO
                for gi in e.approver_groups[c]:
                    won = self._wins[gi]
                    if won < ell:
                        s += e.groups[gi].weight * (
                            self._fractions[gi] - Fraction(ell - won - 1, ell))
                if s < q:
                    raise InvariantViolation(
                        f"level-support: candidate {e.name(c)} at level {ell} "
                        f"retains only {s} removable among its "
                        f"under-represented approvers, quota is {q}")

    def elect(self, c: int,
              new_fractions: Optional[Mapping[int, Fraction]] = None) -> None:
        """Stage-2 election of one candidate by the completion hook.

        ``new_fractions`` optionally lowers approving groups' fractions
        (bounded by their current values); omitted groups are unchanged.
        """
        e = self.election
        if not self._stage2:
            raise HookContractError("elect() is reserved for the completion hook")
        if self.seats_remaining <= 0:
            raise HookContractError("completion hook elected too many candidates")
        if not 0 <= c < e.m or c in self._wset:
            raise HookContractError(
                f"completion hook elected {c}: not an unelected candidate")
        states = self._classify_all()
        new = list(self._fractions)
        if new_fractions:
            approver_set = set(e.approver_groups[c])
            for gi, f_new in new_fractions.items():
                if gi not in approver_set:
                    raise HookContractError(
                        f"completion hook changed ballot group {gi}, which "
                        f"does not approve {e.name(c)}")
                f_new = Fraction(f_new)
                if f_new < 0 or f_new > new[gi]:
                    raise HookContractError(
                        f"fraction-bounds: group {gi} set to {f_new}, outside "
                        f"[0, {new[gi]}]")
                new[gi] = f_new
        self._commit(c, new, KIND_UNSUPPORTED, states)


Alg1 = Callable[[EjrExactRun], int]
Alg2 = Callable[[EjrExactRun, int], Mapping[int, Fraction]]
Alg3 = Callable[[EjrExactRun], None]


def run_ejr_exact(e: Election, alg1: Alg1, alg2: Alg2, alg3: Alg3,
                  verified: bool = True) -> tuple[Committee, IterationLog]:
    """Two-stage exact-quota driver.

    Stage 1 repeats while some candidate has at least the quota in removable
    mass: ``alg1`` picks one such candidate, ``alg2`` removes exactly the
    quota from its approvers without pushing any group below its retention
    floor (the driver always verifies both, plus the fraction bounds).
    When no such candidate remains, ``alg3`` fills the remaining seats
    through :meth:`EjrExactRun.elect`.

    With ``verified`` the driver additionally asserts, after every stage-1
    iteration: exact mass conservation, the level fixed point, the per-voter
    retention-floor guarantee, the absence of starving candidates, and the
    per-candidate level-support bound; and at every selection point that an
    eager candidate implies a normal one.
    """
    run = EjrExactRun(e, verified)
    for _ in range(e.k):
        run._begin_iteration()
        if not run.normal_set:
            break
        w = alg1(run)
        if w not in run.normal_set:
            name = e.name(w) if 0 <= w < e.m else str(w)
            raise HookContractError(
                f"selection hook picked {name}, which is not in the normal set")
        updates = alg2(run, w)
        run._apply_normal(w, updates)
    if len(run._winners) < e.k:
        run._stage2 = True
        missing = e.k - len(run._winners)
        alg3(run)
        if len(run._winners) != e.k:
            raise HookContractError(
                f"completion hook added {missing - run.seats_remaining} "
                f"candidates, expected {missing}")
    return tuple(run._winners), run.log
