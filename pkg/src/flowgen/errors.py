"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto process exit codes; see ``flowgen.cli``.
"""


class FlowgenError(Exception):
    """Base class for every error raised deliberately by flowgen."""


class ContractViolation(FlowgenError, ValueError):
    """An operation was called with arguments outside its stated domain."""


class ConfigError(FlowgenError, ValueError):
    """An experiment config failed validation.

    ``problems`` lists every offending field, not just the first one.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config: " + "; ".join(self.problems))


class NumericError(FlowgenError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message)


class FormatError(FlowgenError):
    """A binary file (dataset or checkpoint) could not be parsed."""


class MagicMismatchError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class ShapeMismatchError(FormatError):
    pass


class PlotInputError(FormatError, ValueError):
    """Sweep CSV handed to the plot renderer is malformed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
