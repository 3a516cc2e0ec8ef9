"""Error taxonomy shared across the package.

``SchemaError`` marks malformed serialized input (wrong JSON shape, missing
fields, bad types).  ``ValidationError`` marks structurally well-formed input
that violates a semantic invariant (negative probabilities, cyclic graphs,
scope violations).  ``BudgetError`` marks work that would exceed the
configured enumeration budgets.  The command-line front end maps these to
distinct exit codes.
"""


class SchemaError(ValueError):
    """Serialized input does not match the expected schema."""


class ValidationError(ValueError):
    """Input is structurally invalid for the requested operation."""


class BudgetError(RuntimeError):
    """Operation would exceed the configured enumeration budget."""
