"""Exception hierarchy shared across the toolkit."""


class RosintError(Exception):
    """Base class for every error raised by this package."""


class EmptyTargetSpace(RosintError):
    pass


class PrimeSearchFailure(RosintError):
    pass


class LocalSocketError(RosintError):
    """The local host ran out of sockets/buffers; not a property of the target."""


class MalformedHttp(RosintError):
    pass


class ProbeTimeout(RosintError):
    pass


class TransportError(RosintError):
    pass


class ForbiddenMethod(RosintError):
    """A non read-only XML-RPC method was requested. Raised before any I/O."""


class XmlRpcFault(RosintError):
    def __init__(self, code, message):
        super().__init__(f"fault {code}: {message}")
        self.code = code
        self.message = message


class MalformedResponse(RosintError):
    pass


class SnapshotEmpty(RosintError):
    def __init__(self, message, reason=None, warnings=()):
        super().__init__(message)
        self.reason = reason
        self.warnings = list(warnings)


class ServiceUnavailable(RosintError):
    def __init__(self, message, reason="unavailable"):
        super().__init__(message)
        self.reason = reason


class RulebookError(RosintError):
    pass


class Finalized(RosintError):
    """Append attempted on a scan record that has already been closed."""


class SerializationError(RosintError):
    pass


class StorageFull(RosintError):
    pass


class PortInUse(RosintError):
    pass


class ConfigError(RosintError):
    pass
