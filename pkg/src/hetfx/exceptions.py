"""Exception hierarchy shared across the library.

Every error carries a short machine-readable ``code`` so the CLI can surface
failures in reports without string matching.
"""


class HetfxError(ValueError):
    """Base class for all library errors."""

    code = "error"


class InsufficientDataError(HetfxError):
    """Too few units (overall or within an arm) for the requested operation."""

    code = "insufficient_data"


class RankDeficiencyError(HetfxError):
    """A moment matrix is singular at the pivot tolerance."""

    code = "rank_deficient"


class WeakInstrumentError(HetfxError):
    """Compliance-based moment differences are singular or the complier share
    is nonpositive."""

    code = "weak_instrument"


class DegenerateSampleError(HetfxError):
    """A sample has zero dispersion where positive dispersion is required."""

    code = "degenerate_sample"


class MissingColumnError(HetfxError):
    """A required input column (receipt or adjustment covariates) is absent."""

    code = "missing_column"


class NothingToTestError(HetfxError):
    """The hypothesis is empty, e.g. an intercept-only effect model."""

    code = "nothing_to_test"


class WeakInstrumentWarning(UserWarning):
    """Estimated complier share is positive but below the 5% diagnostic."""

