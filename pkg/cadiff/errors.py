class ShapeError(RuntimeError):
    pass


class GradientError(RuntimeError):
    pass


class TransportError(RuntimeError):
    pass


class ScheduleError(RuntimeError):
    pass


class DenoiseError(RuntimeError):
    pass


class BisimError(RuntimeError):
    pass


class HypothesisError(RuntimeError):
    """
    Raised when a bound is requested for inputs outside the hypotheses the bound was proved under.
    """


class EnvError(RuntimeError):
    pass


class AgentError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


class ConfigError(RuntimeError):
    pass


class VerificationError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, step: int, component: str, message: str):
        super().__init__(f"step {step}: {component}: {message}")
        self.step = step
        self.component = component
