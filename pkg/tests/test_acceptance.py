"""One test per acceptance criterion; each prints a PASS/FAIL line.

The lines are also collected into the terminal summary of the run.
"""

import pytest

from nlslab.verify import ALL_CHECKS, _GroundStates, run_one

from conftest import ACCEPTANCE_LINES

_GS = _GroundStates()


@pytest.mark.slow
@pytest.mark.parametrize("criterion", sorted(ALL_CHECKS))
def test_acceptance_criterion(criterion):
    result = run_one(criterion, _GS, seed=0)
    line = result.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert result.passed, line
