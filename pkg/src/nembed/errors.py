"""Exception types shared across the package."""


class EdgeListParseError(ValueError):
    """A text edge list line could not be parsed."""

    def __init__(self, path, lineno, line):
        self.path = path
        self.lineno = lineno
        self.line = line
        super().__init__(f"{path}:{lineno}: cannot parse edge {line!r}")


class EdgeListFormatError(ValueError):
    """Binary header is wrong, or an id does not fit the configured width."""


class ScheduleViolation(RuntimeError):
    """A sample touched rows outside the block the schedule assigned."""

    def __init__(self, message, worker=None, step=None, row_range=None):
        self.worker = worker
        self.step = step
        self.row_range = row_range
        super().__init__(message)


class OwnershipError(RuntimeError):
    """A sub-part was sent by a worker that does not own it, or rows were written concurrently."""


class ManifestError(RuntimeError):
    """Sample store manifest is missing, incomplete, or does not match the plan."""


class DensityError(RuntimeError):
    """Graph too dense to draw negative pairs by rejection."""


class ChannelClosed(RuntimeError):
    """A communication channel was closed while a transfer was pending."""
