"""Decorators marking functions as numerical invariant checks."""

from typing import Any, Callable, Optional, TypeVar

from .types import InvariantMetadata

F = TypeVar("F", bound=Callable[..., Any])


def invariant(
    name: str,
    *,
    reference: str,
    description: Optional[str] = None,
    slow: bool = False,
) -> Callable[[F], F]:
    """Decorator to mark a function as an invariant check.

    The function receives a ``VerifyConfig`` and returns a detail string; it
    signals failure by raising ``InvariantViolation``.

    Args:
        name: Unique check name reported by ``metarep verify``
        reference: Result the check covers, e.g. "replication probability at x = θ"
        description: Optional one-line description
        slow: Check runs a large Monte Carlo simulation

    Example:
        @invariant("rp_identity", reference="replication probability at x = θ")
        def check_identity(config: VerifyConfig) -> str:
            ...
    """

    def decorator(func: F) -> F:
        func._invariant_meta = InvariantMetadata(  # type: ignore
            name=name, reference=reference, description=description, slow=slow
        )
        return func

    return decorator


def is_invariant(func: Callable[..., Any]) -> bool:
    """Check if a function is marked as an invariant check."""
    return hasattr(func, "_invariant_meta")


def get_invariant_metadata(func: Callable[..., Any]) -> Optional[InvariantMetadata]:
    """Get invariant metadata from a function if it exists."""
    return getattr(func, "_invariant_meta", None)
