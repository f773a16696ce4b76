class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class NumericalError(RuntimeError):
    """A loss component became non-finite during training."""

    def __init__(self, component, message="non-finite value"):
        super().__init__(f"{component}: {message}")
        self.component = component


class MiningStateError(RuntimeError):
    pass
