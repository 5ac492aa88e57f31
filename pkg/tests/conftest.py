import os
import sys
import time

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.filter_too_much])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


_START = time.perf_counter()
_BUDGET = 300.0


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for name, mod in list(sys.modules.items()):
        if name.split(".")[-1] == "test_acceptance":
            lines = list(getattr(mod, "RESULTS", []))
    if not lines:
        return
    took = time.perf_counter() - _START
    whole = not config.option.keyword and all(os.path.isdir(a.split("::")[0]) for a in config.args)
    if whole:
        lines.append("%s criterion 12: full suite ran in %.1fs (< %.0fs)"
                     % ("PASS" if took < _BUDGET else "FAIL", took, _BUDGET))
    terminalreporter.section("acceptance")
    for line in lines:
        terminalreporter.write_line(line)
