"""Exception hierarchy.

Every error carries the originating module name plus a free-form context
mapping (node indices, residuals, offending component) so the CLI can
report where a pipeline broke.
"""


class PresemiError(Exception):
    module = "presemi"

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context

    def describe(self):
        return {"module": self.module, "error": type(self).__name__,
                "message": str(self), "context": self.context}


class ExprError(PresemiError):
    module = "expr"


class ExprSyntaxError(ExprError):
    def __init__(self, message, offset, **context):
        super().__init__(f"{message} at offset {offset}", offset=offset, **context)
        self.offset = offset


class ExprDomainError(ExprError):
    pass


class SpecError(PresemiError):
    module = "connection"


class ConditioningError(PresemiError):
    module = "connection"


class IntegrationError(PresemiError):
    module = "ode"


class ConstructionError(PresemiError):
    module = "geodesic"


class SeedError(ConstructionError):
    pass


class ConvergenceError(PresemiError):
    module = "rectify"

    def __init__(self, message, history=(), **context):
        super().__init__(message, **context)
        self.history = list(history)


class InversionError(PresemiError):
    module = "rectify"


class VerificationError(PresemiError):
    module = "verify"
