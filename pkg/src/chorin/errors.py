"""Exception hierarchy shared by all modules."""


class ChorinError(Exception):
    pass


class ConfigError(ChorinError, ValueError):
    pass


class EmptyGrid(ChorinError):
    pass


class DisconnectedSublattice(ChorinError):
    def __init__(self, sublattice, sizes):
        self.sublattice = sublattice
        self.sizes = list(sizes)
        super().__init__(
            f"core sublattice {sublattice} splits into {len(self.sizes)} pieces "
            f"under 2h steps (sizes {self.sizes}); refine h"
        )


class InvalidN(ChorinError, ValueError):
    pass


class GridMismatch(ChorinError, ValueError):
    pass


class OutsideCoverage(ChorinError, ValueError):
    pass


class NumericalFailure(ChorinError):
    """Base for solver-side failures (CLI exit code 1)."""


class NotConverged(NumericalFailure):
    def __init__(self, message, residual=None, iterations=None, best=None, history=None):
        self.residual = residual
        self.iterations = iterations
        self.best = best
        self.history = history
        super().__init__(message)


class SolverDivergence(NumericalFailure):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class SmallnessViolated(NumericalFailure):
    def __init__(self, max_abs, beta0, step=None):
        self.max_abs = max_abs
        self.beta0 = beta0
        self.step = step
        super().__init__(
            f"trajectory leaves the small regime: max |u~| = {max_abs:.6g} "
            f">= beta0 = {beta0:.6g}" + (f" at step {step}" if step is not None else "")
        )
