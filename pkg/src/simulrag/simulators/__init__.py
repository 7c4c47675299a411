"""Built-in mechanistic simulators, one per question domain.

Each simulator module exposes ``handbook()`` returning its interface
description and ``run(settings, ...)`` executing one parameter assignment.
Everything downstream (retrieval, boundary assessment, benchmark
generation) reads the handbook rather than hard-coding parameter names, so
swapping in a heavier emulator is a matter of registering it here.
"""

from __future__ import annotations

from ..domain import Handbook
from ..errors import SchemaViolation
from . import climate, epidemic

_SIMULATORS = {
    "climate": climate,
    "epidemiology": epidemic,
}


def get_simulator(domain: str):
    try:
        return _SIMULATORS[domain]
    except KeyError:
        raise SchemaViolation(f"no simulator registered for domain {domain!r}") from None


def get_handbook(domain: str) -> Handbook:
    return get_simulator(domain).handbook()


def handbook_versions() -> dict[str, str]:
    return {
        domain: get_handbook(domain).version for domain in sorted(_SIMULATORS)
    }
