"""Exception types shared across the package."""


class StawGANError(Exception):
    pass


class InvalidAnnotationError(StawGANError, ValueError):
    pass


class ShapeError(StawGANError, ValueError):
    pass


class ConfigurationError(StawGANError, ValueError):
    pass


class CompositionError(StawGANError, KeyError):
    pass


class NonFiniteLossError(StawGANError, RuntimeError):
    def __init__(self, term: str, value: float, step: int | None = None):
        self.term = term
        self.value = value
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite loss term '{term}' = {value}{where}")
