"""Error categories shared by all stages.

``ValidationError`` means the inputs are inconsistent and nothing was solved;
``NumericalQualityError`` means a computation ran but its result failed a
quality check (singular system, symmetry or decay diagnostics out of range).
"""


class ValidationError(ValueError):
    pass


class NumericalQualityError(RuntimeError):
    pass
