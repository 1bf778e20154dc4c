"""Static deadlock analysis for JVML_d bytecode through lams."""

from .frontend import AssemblyError, ClassTable, flow_facts, parse_program, print_program
from .lam import LamProgram, parse_lam, print_lam
from .solver import Verdict, analyze, saturate
from .typesystem import TypingError, infer_bct

__all__ = [
    "AssemblyError",
    "ClassTable",
    "LamProgram",
    "TypingError",
    "Verdict",
    "analyze",
    "flow_facts",
    "infer_bct",
    "parse_lam",
    "parse_program",
    "print_lam",
    "print_program",
    "saturate",
]
