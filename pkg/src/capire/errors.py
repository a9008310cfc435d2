"""Exception hierarchy shared across the pipeline."""


class CapireError(Exception):
    """Base class for all pipeline errors."""


# curriculum
class CycleDetected(CapireError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("prerequisite cycle: " + " -> ".join(str(c) for c in self.cycle))


class UnknownCourse(CapireError):
    pass


class DuplicateCode(CapireError):
    pass


class NoAttempts(CapireError):
    pass


# datalayer
class ZeroExpected(CapireError):
    pass


class LeakageViolation(CapireError):
    def __init__(self, violations):
        # violations: list of (column_name, observation_semester)
        self.violations = list(violations)
        detail = ", ".join(f"{name} (observed at semester {sem})" for name, sem in self.violations)
        super().__init__(f"leakage guard tripped: {detail}")


class EmptyCohort(CapireError):
    pass


# dml
class BadK(CapireError):
    pass


class SingularSystem(CapireError):
    pass


class DegenerateTreatment(CapireError):
    pass


class KnotOutOfRange(CapireError):
    pass


class CollinearBasis(CapireError):
    pass


# macro
class SeriesGap(CapireError):
    pass


# archetype
class BadDimension(CapireError):
    pass


class TooFewClusters(CapireError):
    pass


class AllColumnsDegenerate(CapireError):
    pass


class SingleClass(CapireError):
    pass


# synth / cli
class ConfigInvalid(CapireError):
    pass


class InputFormatError(CapireError):
    """Raised on malformed input files; carries the offending line number."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")
