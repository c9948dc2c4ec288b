"""Multi-objective random assignment and planning for independent agents."""
from .errors import MorapError
from .logic import Dfa, parse_cosafe, task_dfa
from .model import Mdp, ProductMdp, build_product
from .solver import (MorapInstance, ParetoResult, SynthesisResult, pareto_point,
                     supporting_point, synthesize, verify_only)

__all__ = ["Dfa", "Mdp", "MorapError", "MorapInstance", "ParetoResult", "ProductMdp",
           "SynthesisResult", "build_product", "parse_cosafe", "pareto_point",
           "supporting_point", "synthesize", "task_dfa", "verify_only"]
