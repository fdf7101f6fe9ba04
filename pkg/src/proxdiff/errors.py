"""Exception types shared across the package."""


class ProxdiffError(ValueError):
    """Base class for argument and configuration errors raised by proxdiff."""


class InvalidWeight(ProxdiffError):
    """A weight that must be nonnegative (or positive) is not."""


class InvalidStepsize(ProxdiffError):
    """A proximal or adaptation step size is out of range."""


class InvalidInput(ProxdiffError):
    """Malformed numeric input (non-finite values, bad shapes, bad grids)."""


class InvalidDimension(ProxdiffError):
    """Vector dimension too small for the requested statistic."""


class InvalidGeometry(ProxdiffError):
    """Degenerate geometry (e.g. a transmitter placed on a receiver)."""


class InvalidScenario(ProxdiffError):
    """Scenario configuration failed validation."""


class NoData(ProxdiffError):
    """No usable data remains (e.g. every Monte-Carlo run diverged)."""


class DivergenceDetected(RuntimeError):
    """A network state entry became non-finite during simulation."""

    def __init__(self, iteration: int, node: int):
        super().__init__(f"non-finite state at iteration {iteration}, node {node}")
        self.iteration = iteration
        self.node = node
