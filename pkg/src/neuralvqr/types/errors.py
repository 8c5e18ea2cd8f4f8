"""
Error types raised across neuralvqr

Every error carries a short snake_case ``code`` that the CLI and the HTTP
server surface to callers. Input problems derive from ValueError, numerical
failures from RuntimeError.
"""

from typing import List, Optional


class NeuralVqrError(Exception):
    """Base class for all neuralvqr errors"""
    code = "error"

    def __init__(self, message: str, code: Optional[str] = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ShapeMismatchError(NeuralVqrError, ValueError):
    """An operation received arrays whose shapes do not conform"""
    code = "shape_mismatch"


class NonScalarRootError(NeuralVqrError, ValueError):
    """Reverse sweep requested from a non-scalar node"""
    code = "non_scalar_root"


class ActNormError(NeuralVqrError, ValueError):
    """ActNorm layers used before initialization or initialized on a bad batch"""
    code = "actnorm_uninitialized"


class DegenerateInputError(NeuralVqrError, ValueError):
    """Input data cannot support the requested estimate (zero spread, empty box, ...)"""
    code = "degenerate_input"


class MissingReferencePotentialError(NeuralVqrError, ValueError):
    """A convex dataset variant was requested without a reference potential"""
    code = "missing_reference_potential"


class CsvParseError(NeuralVqrError, ValueError):
    """A CSV file could not be turned into a sample table"""
    code = "csv_parse_error"

    def __init__(self, message: str, line_numbers: Optional[List[int]] = None, code: Optional[str] = None):
        super().__init__(message, code)
        self.line_numbers = line_numbers or []


class ConfigInvalidError(NeuralVqrError, ValueError):
    """An experiment configuration failed validation; ``problems`` lists every issue"""
    code = "config_invalid"

    def __init__(self, problems: List[str]):
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(problems))
        self.problems = problems


class RunDirectoryError(NeuralVqrError, ValueError):
    """A run directory is complete (immutable) or otherwise unusable"""
    code = "run_directory_complete"


class NanObjectiveError(NeuralVqrError, RuntimeError):
    """A NaN appeared in an objective evaluation"""
    code = "nan_objective"


class TrainingDivergedError(NeuralVqrError, RuntimeError):
    """Training produced a NaN objective; the partial epoch log is kept"""
    code = "training_diverged"

    def __init__(self, message: str, batch_index: int, epoch: int, partial_log=None):
        super().__init__(message)
        self.batch_index = batch_index
        self.epoch = epoch
        self.partial_log = partial_log or []


class SolveNotConvergedError(NeuralVqrError, RuntimeError):
    """A conjugate solve that had to converge did not"""
    code = "solve_not_converged"
