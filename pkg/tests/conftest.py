import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def band_limited_field(rng, n=64, pitch=0.37, wavelength=0.55, keep=0.5):
    """Random complex field whose spectrum lies well inside the propagating disc."""
    from virtualstain.wavefield import ComplexField, frequency_grid

    spec = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    fx, fy = frequency_grid((n, n), pitch)
    spec[np.hypot(fx, fy) > keep / wavelength] = 0
    return ComplexField(np.fft.ifft2(spec), pitch, wavelength)


# -- acceptance bookkeeping ------------------------------------------------------

ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Context-manager factory: ``with acceptance(3, "autofocus", limit_s=120) as info: ...``.

    The block passes if it finishes without raising and within ``limit_s``;
    ``info`` collects measured values for the summary line.
    """
    import time
    from contextlib import contextmanager

    results = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    @contextmanager
    def criterion(number, title, limit_s=None):
        info = {}
        t0 = time.perf_counter()
        try:
            yield info
            elapsed = time.perf_counter() - t0
            info.setdefault("runtime_s", round(elapsed, 1))
            if limit_s is not None:
                assert elapsed < limit_s, f"runtime {elapsed:.1f} s exceeds {limit_s} s"
        except BaseException as exc:
            info.setdefault("runtime_s", round(time.perf_counter() - t0, 1))
            results[number] = ("FAIL", title, info, f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
            raise
        results[number] = ("PASS", title, info, "")

    return criterion


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        status, title, info, error = results[number]
        details = ", ".join(f"{k}={v}" for k, v in info.items())
        line = f"criterion {number:2d} {status}: {title} [{details}]"
        if error:
            line += f" {error}"
        terminalreporter.write_line(line)
