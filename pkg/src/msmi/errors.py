"""Exception types shared across the package."""


class MsmiError(Exception):
    """Base class for all estimation and validation failures."""


class RankDeficient(MsmiError):
    pass


class NotPositiveDefinite(MsmiError):
    pass


class TooFewSamples(MsmiError):
    pass


class DegenerateCloud(MsmiError):
    """A sample has a zero nearest-neighbour distance even after jitter."""


class NonFinite(MsmiError):
    pass


class WrongArchitecture(MsmiError):
    pass


class DimensionMismatch(MsmiError, ValueError):
    pass
