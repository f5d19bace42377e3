import numpy as np
import pytest

from slufuse.nn import check_gradients

GRAD_SEEDS = list(range(20))
GRAD_TOL = 1e-3


def projected_loss_check(forward, backward, inputs, seed):
    """Check ``backward`` against finite differences of ``sum(R * forward(**inputs))``.

    ``forward(**inputs)`` returns ``(out, cache)``; ``backward(dout, cache)``
    returns a dict of gradients keyed like ``inputs``. R is a fixed random
    projection so every output element contributes.
    """
    rng = np.random.default_rng(10_000 + seed)
    out, cache = forward(**inputs)
    proj = rng.standard_normal(out.shape)
    analytic = backward(proj, cache)

    def loss():
        return float(np.sum(proj * forward(**inputs)[0]))

    return check_gradients(loss, inputs, analytic)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_manifest():
    from slufuse.corpus import SynthTaskSpec, generate_synth

    return generate_synth(SynthTaskSpec())


@pytest.fixture(scope="session")
def word_corpus(synth_manifest):
    """Golden sentences totalling at least 10^4 words, plus the task vocabulary."""
    from slufuse.corpus import SynthTaskSpec, task_vocabulary

    sents, n = [], 0
    for u in synth_manifest.utterances:
        sents.append(u.golden)
        n += len(u.golden)
        if n >= 10_000:
            break
    return sents, task_vocabulary(SynthTaskSpec())


# ---------------------------------------------------------------------------
# acceptance summary: one pass/fail line per criterion
# ---------------------------------------------------------------------------

_CRITERIA = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if not name.startswith("test_criterion_"):
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        detail = dict(report.user_properties).get("detail", "")
        _CRITERIA[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda n: int(n.split("_")[2])):
        status, detail = _CRITERIA[name]
        number, label = name.split("_")[2], " ".join(name.split("_")[3:])
        line = f"criterion {number:>2} {label}: {status}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
