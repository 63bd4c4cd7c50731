"""Surface-language frontend: parsing, inlining, unrolling, predication, SSA."""

from .astnodes import Program, unparse, unparse_expr
from .library import Library, shipped_library
from .lower import (PredicatedStmt, SourceProgram, compile_source,
                    parse_and_inline, predicate_branches, to_ssa, unroll_loops)
from .parser import parse_source
from .profile import Profile, load_profile

__all__ = [
    "Program", "unparse", "unparse_expr", "Library", "shipped_library",
    "PredicatedStmt", "SourceProgram", "compile_source", "parse_and_inline",
    "predicate_branches", "to_ssa", "unroll_loops", "parse_source",
    "Profile", "load_profile",
]
