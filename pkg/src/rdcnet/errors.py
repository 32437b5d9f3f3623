"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class InvalidShapeError(ContractError):
    """A tensor shape with zero, negative, or missing dimensions."""


class ConfigError(ContractError):
    """One or more invalid fields in a run configuration.

    ``problems`` lists one human-readable diagnostic per offending field.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class FormatError(RuntimeError):
    """Malformed on-disk data (dataset archive or checkpoint container)."""

    def __init__(self, message, *, offset=None, path=None):
        self.offset = offset
        self.path = path
        detail = message
        if path is not None:
            detail = f"{path}: {detail}"
        if offset is not None:
            detail = f"{detail} (byte offset {offset})"
        super().__init__(detail)


class DivergedError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, step):
        self.epoch = epoch
        self.step = step
        super().__init__(f"loss diverged to NaN at epoch {epoch}, step {step}")
