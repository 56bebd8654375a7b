"""Synthetic inductive-reasoning tasks over vector-transformation rules.

Generate rule/fact tasks, render them as prompts in four surface forms,
grade free-text replies, and compute the analysis metrics.
"""
from .errors import *  # noqa: F401,F403
from .facts import (CHEBYSHEV, EUCLIDEAN, MANHATTAN, MINKOWSKI3, DistanceMetric, Fact, FactClass, FactSet,
                    GenerationConstraint, classify_fact, distance, generate_fact_set, perturb_fact_set,
                    sample_input, sample_test_inputs)
from .grade import (Judgment, ParsedRule, grade_response, judge_ei, judge_ri, parse_answer_response,
                    parse_expression, parse_rule_response)
from .metrics import (TaskResult, ThresholdRecord, accuracy, change_rate, compute_thresholds,
                      deductive_density, report, task_accuracy)
from .render import RenderedQuestion, Scenario, render_arithmetic_probe, render_cross_scenario, render_question
from .rules import (EquivalencePolicy, MetaRule, apply_rule, apply_rule_string, enumerate_rules,
                    rules_semantically_equivalent, rules_structurally_equal, sample_rule)
from .solvers import (enumerative_induce, hypothesis_refine, neighbor_predict, score_rule_on_facts,
                      self_consistency, self_refine)

__version__ = "0.1.0"
