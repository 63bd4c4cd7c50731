"""Template/module library: surface-language source files resolved at parse time."""

from __future__ import annotations

import importlib.resources
from pathlib import Path

from ..errors import UnresolvedImport
from . import astnodes as A
from .parser import parse_source


class Library:
    """Maps module name -> {template name -> TemplateDef}.

    The shipped library exposes two modules: ``Template`` (KVS, MLAgg, DQAcc)
    and ``Funclib`` (built-in functions only; importing it is a no-op beyond
    scope bookkeeping). Extra directories of ``.inc`` files can be stacked on
    top, keyed by file stem.
    """

    def __init__(self):
        self.modules = {"Funclib": {}, "Template": {}}

    def add_template_source(self, module: str, text: str) -> None:
        prog = parse_source(text)
        mod = self.modules.setdefault(module, {})
        for stmt in prog.body:
            if not isinstance(stmt, A.TemplateDef):
                raise UnresolvedImport(
                    f"library module {module!r} may only contain template definitions")
            mod[stmt.name] = stmt

    def add_directory(self, path) -> None:
        for fn in sorted(Path(path).glob("*.inc")):
            self.add_template_source("Template", fn.read_text())

    def resolve(self, module: str, name: str) -> A.TemplateDef:
        if module not in self.modules:
            raise UnresolvedImport(f"unknown module {module!r}")
        mod = self.modules[module]
        if name not in mod:
            raise UnresolvedImport(f"module {module!r} has no template {name!r}")
        return mod[name]

    def has_module(self, module: str) -> bool:
        return module in self.modules


def shipped_library() -> Library:
    lib = Library()
    root = importlib.resources.files("incforge") / "templates"
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".inc"):
            lib.add_template_source("Template", entry.read_text())
    return lib
