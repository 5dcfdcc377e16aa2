"""Exception hierarchy for the game harness.

Every domain failure raises a subclass of ``DfgameError`` so callers (CLI,
service) can map library errors to exit codes / HTTP statuses in one place.
"""


class DfgameError(Exception):
    """Base class for all domain errors raised by this package."""


class ShapeError(DfgameError):
    """Inputs have mismatched or invalid dimensions."""


class DegenerateInputError(DfgameError):
    """Input too small or otherwise degenerate for the requested operation."""


class ParameterError(DfgameError):
    """A configuration value or argument is out of its allowed range."""


class NamingError(DfgameError):
    """A filename does not follow the submission naming grammar."""


class ValidationError(DfgameError):
    """A submission directory failed validation."""


class CoverageError(ValidationError):
    """Submission is missing required task images."""

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(
            "submission missing %d task image(s): %s"
            % (len(self.missing), ", ".join(str(m) for m in self.missing[:5]))
        )


class ExtraneousFileError(ValidationError):
    """Submission contains files not in the task list."""

    def __init__(self, extras):
        self.extras = list(extras)
        super().__init__(
            "submission contains %d extraneous file(s): %s"
            % (len(self.extras), ", ".join(str(e) for e in self.extras[:5]))
        )


class ClassMissingError(DfgameError):
    """AUROC requested but one of the two classes has no samples."""


class DetectorFaultError(DfgameError):
    """A detector produced invalid output (non-finite score, protocol breach)."""


class CapabilityError(DfgameError):
    """Operation requires a capability the detector does not expose."""


class ScoringError(DfgameError):
    """Scoring aborted mid-run; carries the failing item."""


class DivergenceError(DfgameError):
    """An optimization loop diverged beyond its guard threshold."""


class TamperError(DfgameError):
    """Archived submission content no longer matches its recorded checksum."""


class PhaseError(DfgameError):
    """Submission kind does not match the current game phase."""


class QuotaError(DfgameError):
    """Per-team daily submission cap exceeded."""


class FrozenPhaseError(DfgameError):
    """Attempted to mutate a frozen leaderboard."""


class NoCounterpartyError(DfgameError):
    """The counterparty leaderboard is empty; the score is undefined."""


class StateError(DfgameError):
    """Game state machine misuse (e.g. advancing past the final phase)."""


class ConvergenceWarning(UserWarning):
    """Training hit a degenerate case; results returned anyway."""
