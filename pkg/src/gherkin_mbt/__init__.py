"""Build state models from Gherkin scenarios and test systems against them."""
from .executor_protocol import check_conformance, spawn_executor
from .export_report import model_from_json, model_to_dot, model_to_json, report_summary, report_to_json
from .gherkin_parser import (
    ConventionConfig,
    Diagnostic,
    Feature,
    ParseError,
    Scenario,
    SourceLocation,
    Step,
    StepKind,
    lint_conventions,
    parse_feature,
    parse_file,
)
from .model_builder import BuildReport, Model, StateName, Transition, build_model
from .test_engine import GenConfig, Outcome, RunReport, TestCase, Verdict, enumerate_paths, generate_and_run, replay, shrink

__version__ = "0.1.0"
