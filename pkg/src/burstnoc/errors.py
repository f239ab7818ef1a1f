class ConfigError(ValueError):
    """Raised when a component, netlist or topology file is malformed.

    ``path`` points at the offending key (``components.xbar0.masters``) when
    the error comes from a config document.
    """

    def __init__(self, message, path=None):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class WatchdogTimeout(RuntimeError):
    """The scoreboard failed to drain within the watchdog horizon."""

    def __init__(self, message, dump=None):
        self.dump = dump or {}
        super().__init__(message)
