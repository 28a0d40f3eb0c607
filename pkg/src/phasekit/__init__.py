"""Learning compliant insertion from demonstrations with ensemble phase inference.

Modules: ``basis`` (trajectory encoding), ``model`` (demonstration prior),
``enbip`` (ensemble filter), ``baselines`` (ProMP, behavioral cloning),
``admittance`` (compliant controller), ``sim`` (planar insertion world) and
``harness`` (trials, suites, export).  ``phasekit`` on the command line is
``phasekit.cli``.
"""

__version__ = "0.1.0"
