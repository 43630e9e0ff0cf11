"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A physical parameter violates its validity constraints."""


class SimulationDiverged(RuntimeError):
    """Simulation state or applied wrench became non-finite."""


class TrainingDiverged(RuntimeError):
    """Training produced non-finite losses or parameters.

    Carries the last finite network and the reward curve collected so far.
    """

    def __init__(self, message, last_net=None, curve=None):
        super().__init__(message)
        self.last_net = last_net
        self.curve = curve if curve is not None else []


class ConfigError(ValueError):
    """Run configuration failed validation; message lists every problem."""
