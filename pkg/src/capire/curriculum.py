"""Curriculum prerequisite DAG and per-course friction metrics.

The programme is modeled as a directed acyclic graph of courses. Each course
accumulates attempt tallies (pass / fail / withdraw / libre) from which the
instructional friction coefficient (IFC) is computed: the share of attempts
that generate delay instead of progress.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field

from .errors import CycleDetected, DuplicateCode, InputFormatError, NoAttempts, UnknownCourse

NON_PASS_OUTCOMES = ("fail", "withdraw", "libre")
OUTCOMES = ("pass",) + NON_PASS_OUTCOMES


@dataclass(frozen=True)
class Course:
    code: int
    name: str
    nominal_semester: int

    def __post_init__(self):
        if self.nominal_semester < 1:
            raise ValueError(f"course {self.code}: nominal_semester must be >= 1")


@dataclass(frozen=True)
class CurriculumDag:
    """Validated prerequisite graph; immutable after construction."""

    courses: dict  # code -> Course
    edges: frozenset  # (prereq_code, dependent_code)
    plan: tuple  # plan[s] = tuple of codes scheduled in semester s+1
    topo_order: tuple  # course codes, deterministic (Kahn, ties by code)

    def prerequisites(self, code: int) -> set:
        self._require(code)
        return {p for p, d in self.edges if d == code}

    def dependents(self, code: int) -> set:
        self._require(code)
        return {d for p, d in self.edges if p == code}

    def _require(self, code: int):
        if code not in self.courses:
            raise UnknownCourse(f"course {code} not in curriculum")


def build_dag(courses, edges, plan) -> CurriculumDag:
    """Validate courses, edges and the nominal plan into a CurriculumDag.

    Raises DuplicateCode, UnknownCourse or CycleDetected (naming one cycle).
    Topological order is Kahn's algorithm with a min-heap on course code, so
    the order is deterministic across runs.
    """
    if not courses:
        raise ValueError("course set must be non-empty")
    by_code = {}
    for c in courses:
        if c.code in by_code:
            raise DuplicateCode(f"course code {c.code} appears twice")
        by_code[c.code] = c

    edges = frozenset((int(p), int(d)) for p, d in edges)
    for p, d in edges:
        for endpoint in (p, d):
            if endpoint not in by_code:
                raise UnknownCourse(f"edge ({p}, {d}) references unknown course {endpoint}")

    plan = tuple(tuple(int(c) for c in sem) for sem in plan)
    seen = set()
    for sem in plan:
        for code in sem:
            if code not in by_code:
                raise UnknownCourse(f"plan references unknown course {code}")
            if code in seen:
                raise DuplicateCode(f"course {code} scheduled in more than one plan semester")
            seen.add(code)
    missing = set(by_code) - seen
    if missing:
        raise ValueError(f"courses missing from plan: {sorted(missing)}")

    topo = _kahn_order(by_code, edges)
    return CurriculumDag(courses=by_code, edges=edges, plan=plan, topo_order=topo)


def _kahn_order(by_code, edges):
    indegree = {code: 0 for code in by_code}
    out = {code: [] for code in by_code}
    for p, d in edges:
        indegree[d] += 1
        out[p].append(d)
    ready = [code for code, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        code = heapq.heappop(ready)
        order.append(code)
        for d in out[code]:
            indegree[d] -= 1
            if indegree[d] == 0:
                heapq.heappush(ready, d)
    if len(order) < len(by_code):
        raise CycleDetected(_find_cycle(by_code, edges))
    return tuple(order)


def _find_cycle(by_code, edges):
    """Return one directed cycle as a list of codes (DFS back-edge walk)."""
    out = {code: [] for code in by_code}
    for p, d in edges:
        out[p].append(d)
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {code: WHITE for code in by_code}
    parent = {}

    for start in sorted(by_code):
        if color[start] != WHITE:
            continue
        stack = [(start, iter(out[start]))]
        color[start] = GRAY
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == GRAY:
                    # back edge: unwind the cycle
                    cycle = [nxt, node]
                    cur = node
                    while cur != nxt:
                        cur = parent[cur]
                        if cur == nxt:
                            break
                        cycle.append(cur)
                    cycle.reverse()
                    return cycle
                if color[nxt] == WHITE:
                    color[nxt] = GRAY
                    parent[nxt] = node
                    stack.append((nxt, iter(out[nxt])))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
    raise AssertionError("no cycle found although Kahn order was incomplete")


def expected_courses(dag: CurriculumDag, semester_index: int) -> int:
    """Cumulative count of plan courses scheduled in semesters 1..semester_index."""
    if semester_index < 0:
        raise ValueError("semester_index must be >= 0")
    return sum(len(sem) for sem in dag.plan[:semester_index])


def downstream_blocked(dag: CurriculumDag, course_code: int) -> set:
    """Transitive closure of dependents: everything this course can block."""
    dag._require(course_code)
    out = {}
    for p, d in dag.edges:
        out.setdefault(p, []).append(d)
    blocked = set()
    stack = list(out.get(course_code, ()))
    while stack:
        node = stack.pop()
        if node in blocked:
            continue
        blocked.add(node)
        stack.extend(out.get(node, ()))
    return blocked


DEFAULT_IFC_WEIGHTS = {"fail": 1.0, "withdraw": 1.0, "libre": 1.0}


@dataclass
class FrictionTable:
    """Per-course friction entries, sorted descending by IFC (ties by code)."""

    entries: list = field(default_factory=list)  # (code, ifc)
    counts: dict = field(default_factory=dict)  # code -> {outcome: count}

    def sort(self):
        self.entries.sort(key=lambda e: (-e[1], e[0]))
        return self


def compute_ifc(attempts, course_code, weights=None) -> float:
    """Share of delay-generating attempts (fail + withdraw + libre) at a course.

    `attempts` is any iterable of objects with .course_code and .outcome.
    Weights per non-pass outcome are configurable for sensitivity checks;
    defaults give the unweighted share.
    """
    weights = DEFAULT_IFC_WEIGHTS if weights is None else weights
    total = 0
    friction = 0.0
    for a in attempts:
        if a.course_code != course_code:
            continue
        total += 1
        if a.outcome != "pass":
            friction += weights.get(a.outcome, 1.0)
    if total == 0:
        raise NoAttempts(f"no attempts recorded for course {course_code}")
    return friction / total


def friction_table(attempts, dag=None, weights=None, min_attempts=1) -> FrictionTable:
    """Tabulate IFC for every course with at least `min_attempts` attempts.

    `min_attempts` > 1 drops thinly-attempted courses whose shares are too
    noisy to rank (a course attempted once scores 0 or 1 exactly).
    """
    counts = {}
    for a in attempts:
        tally = counts.setdefault(a.course_code, {o: 0 for o in OUTCOMES})
        tally[a.outcome] += 1
    weights = DEFAULT_IFC_WEIGHTS if weights is None else weights
    entries = []
    for code, tally in counts.items():
        total = sum(tally.values())
        if total < min_attempts:
            continue
        friction = sum(tally[o] * weights.get(o, 1.0) for o in NON_PASS_OUTCOMES)
        entries.append((code, friction / total))
    return FrictionTable(entries=entries, counts=counts).sort()


def rank_friction(table: FrictionTable, top_n=None) -> FrictionTable:
    """Sorted copy of the table, truncated to the top_n highest-friction courses."""
    ranked = FrictionTable(entries=list(table.entries), counts=dict(table.counts)).sort()
    if top_n is not None:
        ranked.entries = ranked.entries[:top_n]
    return ranked


def load_curriculum_csv(curriculum_path, prereqs_path) -> CurriculumDag:
    """Read `curriculum.csv` (code,name,semester) and `prereqs.csv` (prereq_code,course_code)."""
    courses = []
    with open(curriculum_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader, curriculum_path, ("code", "name", "semester"))
        for i, row in enumerate(reader, start=2):
            try:
                courses.append(Course(int(row["code"]), row["name"], int(row["semester"])))
            except (ValueError, TypeError) as exc:
                raise InputFormatError(curriculum_path, i, str(exc)) from exc
    edges = []
    with open(prereqs_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader, prereqs_path, ("prereq_code", "course_code"))
        for i, row in enumerate(reader, start=2):
            try:
                edges.append((int(row["prereq_code"]), int(row["course_code"])))
            except (ValueError, TypeError) as exc:
                raise InputFormatError(prereqs_path, i, str(exc)) from exc
    max_sem = max((c.nominal_semester for c in courses), default=0)
    plan = [sorted(c.code for c in courses if c.nominal_semester == s + 1) for s in range(max_sem)]
    return build_dag(courses, edges, plan)


def _require_columns(reader, path, columns):
    fields = reader.fieldnames or []
    missing = [c for c in columns if c not in fields]
    if missing:
        raise InputFormatError(path, 1, f"missing required columns: {missing}")
