"""Exception hierarchy.

Errors fall in two families so the command line can map them onto exit
codes: :class:`DataError` (bad or inconsistent input, exit 3) and
:class:`NumericalError` (a computation could not proceed, exit 4).
"""


class HomogError(Exception):
    """Base class for every error raised by this package."""


class DataError(HomogError, ValueError):
    pass


class NumericalError(HomogError, ArithmeticError):
    pass


class IncompleteGrid(DataError):
    def __init__(self, individual, time):
        self.individual = individual
        self.time = time
        super().__init__(f"missing cell for individual {individual!r} at time {time!r}")


class ParseError(DataError):
    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


class SizeMismatch(DataError):
    pass


class InvalidBasis(DataError):
    pass


class SpecMismatch(DataError):
    pass


class TruthRequired(DataError):
    pass


class TooManyGroups(DataError):
    pass


class NotSorted(DataError):
    pass


class NonFiniteResidual(NumericalError):
    pass


class DegenerateAnchor(NumericalError):
    pass


class SingularDesign(NumericalError):
    pass


class SelectionFailed(NumericalError):
    pass


class DegenerateDomain(NumericalError):
    pass

