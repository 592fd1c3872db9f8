"""Exception types shared across the toolkit."""


class AvatarForgeError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(AvatarForgeError, ValueError):
    """Tensor or array shapes are inconsistent with an operation's contract."""


class ParameterError(AvatarForgeError, ValueError):
    """A numeric parameter is outside its allowed range."""


class FormatError(AvatarForgeError, ValueError):
    """A file does not conform to its container format."""


class DegeneracyError(AvatarForgeError, ValueError):
    """An input is too close to a degenerate configuration to proceed."""


class SingularBlendError(DegeneracyError):
    """A blended skinning matrix is numerically singular."""

    def __init__(self, vertex_index: int, det: float):
        self.vertex_index = vertex_index
        self.det = det
        super().__init__(
            f"blended skinning matrix for vertex {vertex_index} is singular "
            f"(|det| = {abs(det):.3e})"
        )


class EmptySurfaceError(AvatarForgeError, ValueError):
    """A scalar field has no zero crossing inside the sampled volume."""


class DegeneratePromptError(AvatarForgeError, ValueError):
    """The query prompt is indistinguishable from the neutral prompt."""


class OracleError(AvatarForgeError):
    """Base class for guidance-oracle failures."""


class OracleUnavailableError(OracleError):
    """The guidance service could not be reached."""


class OracleProtocolError(OracleError):
    """The guidance service returned a malformed or invalid payload."""


class NumericalAbortError(AvatarForgeError, ArithmeticError):
    """An optimization loop hit a non-finite value and stopped."""

    def __init__(self, message: str, checkpoint_path=None):
        self.checkpoint_path = checkpoint_path
        super().__init__(message)


class ConfigError(AvatarForgeError, ValueError):
    """A pipeline configuration file is invalid."""
