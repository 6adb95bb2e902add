"""Tests for engine independence: engines never reach into the CLI layer."""

import ast
from pathlib import Path

import pytest

ENGINE_DIR = Path(__file__).resolve().parent.parent / "app" / "engines"
ENGINES = sorted(p for p in ENGINE_DIR.glob("*.py") if p.name != "__init__.py")


def _imported_modules(path: Path) -> set:
    tree = ast.parse(path.read_text())
    names = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            names.update(alias.name for alias in node.names)
        elif isinstance(node, ast.ImportFrom) and node.module:
            names.add(node.module)
    return names


@pytest.mark.parametrize("path", ENGINES, ids=lambda p: p.stem)
def test_engine_does_not_import_commands(path):
    imported = _imported_modules(path)
    assert not any(name == "main" or name.startswith("app.commands") for name in imported)


@pytest.mark.parametrize("path", ENGINES, ids=lambda p: p.stem)
def test_engine_does_not_print(path):
    calls = [node for node in ast.walk(ast.parse(path.read_text()))
             if isinstance(node, ast.Call) and getattr(node.func, "id", None) == "print"]
    assert calls == []


def test_model_core_stands_alone():
    imported = _imported_modules(ENGINE_DIR / "model_core.py")
    assert not {name for name in imported if name.startswith("app.engines")}
