from chronopref.exceptions import ConfigError, DataError, TransportError


class GatewayConfigError(ConfigError):
    """Bad model handle, bad sampling parameters, missing credentials or an HTTP 4xx."""


class CapabilityError(ConfigError):
    """The backend cannot provide what was asked for, usually logprobs."""


class ReplayMissError(DataError):
    def __init__(self, model, key):
        super().__init__(f"replay cache has no entry {key} for model {model}")
        self.model = model
        self.key = key


class GatewayTransportError(TransportError):
    def __init__(self, message, attempts=1):
        super().__init__(message)
        self.attempts = attempts
