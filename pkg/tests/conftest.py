from __future__ import annotations

import pytest

from pathforge import kg_store
from pathforge.config import packaged_data


@pytest.fixture(scope="session")
def fixture_path():
    return packaged_data("fixture_kg.csv")


@pytest.fixture(scope="session")
def fixture_graph(fixture_path):
    return kg_store.load_graph(fixture_path)


@pytest.fixture
def config_file(tmp_path, fixture_path):
    """Write a minimal INI config pointing at the bundled fixture graph."""

    def make(**overrides) -> str:
        lines = ["[graph]", f"path = {fixture_path}", "", "[qa]"]
        lines.append(f"count_per_category = {overrides.pop('count_per_category', 20)}")
        lines.append(f"seed = {overrides.pop('seed', 7)}")
        if "shortfall_tolerance" in overrides:
            lines.append(f"shortfall_tolerance = {overrides.pop('shortfall_tolerance')}")
        if "ratios" in overrides:
            lines.append(f"ratios = {overrides.pop('ratios')}")
        cot = overrides.pop("cot", {})
        if cot:
            lines.append("")
            lines.append("[cot]")
            for key, value in cot.items():
                lines.append(f"{key} = {value}")
        mining = overrides.pop("mining", {})
        if mining:
            lines.append("")
            lines.append("[mining]")
            for key, value in mining.items():
                lines.append(f"{key} = {value}")
        assert not overrides, f"unused overrides: {overrides}"
        path = tmp_path / "pathforge.ini"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return str(path)

    return make
