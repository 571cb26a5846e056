from .cost import CostReport, static_cost, triple_plan
from .lower import LowerConfig, LoweringError, lower, lower_pair
from .program import Instr, PartyProgram
from .typecheck import typecheck_lowered

__all__ = ["CostReport", "Instr", "LowerConfig", "LoweringError", "PartyProgram", "lower", "lower_pair",
           "static_cost", "triple_plan", "typecheck_lowered"]
