from pathlib import Path

import pytest

from gasforecast.dataset import CONSUMPTION_HEADER, WEATHER_HEADER, load_dataset
from gasforecast.synth import SynthScenario, write_csvs


def write_csv(path: Path, header, rows) -> Path:
    lines = [",".join(header)] + [",".join(str(c) for c in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def weather_row(day, city, **over):
    vals = dict(
        mean_rh=60, max_rh=80, min_rh=40,
        mean_temp=2, max_temp=8, min_temp=-4, max_abs_temp=12, min_abs_temp=-9,
        rain_mm=20, freezing_days=10,
    )
    vals.update(over)
    return [day, city] + [vals[k] for k in WEATHER_HEADER[2:]]


@pytest.fixture
def csv_pair(tmp_path):
    """Factory writing consumption/weather CSVs from row lists."""

    def make(cons_rows, wx_rows):
        c = write_csv(tmp_path / "consumption.csv", CONSUMPTION_HEADER, cons_rows)
        w = write_csv(tmp_path / "weather.csv", WEATHER_HEADER, wx_rows)
        return c, w

    return make


@pytest.fixture(scope="session")
def synth_small(tmp_path_factory):
    """Two cities, 48 months."""
    out = tmp_path_factory.mktemp("synth_small")
    c, w = write_csvs(out, SynthScenario(cities=2, months=48), seed=3)
    return c, w, load_dataset(c, w)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    from test_acceptance import ACCEPTANCE_KEY

    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
