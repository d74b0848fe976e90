"""Robust weekly appointment templates for a single-provider clinic.

Modules, bottom up: ``domain`` (types, calendar, templates), ``scenario``
(demand, call streams, show-up models), ``assignment`` (recourse cost),
``optimizer`` (template search and statistical gap), ``clinicflow``
(in-clinic simulation), ``callcenter`` (booking simulation), ``metrics``,
``config`` and ``pipeline``.
"""

__version__ = "0.1.0"
