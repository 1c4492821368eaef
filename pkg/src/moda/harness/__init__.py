"""Pipeline orchestration: config, stages, experiment runners, CLI."""
from moda.harness.config import (
    build_env_from_config,
    build_grid,
    build_tasks,
    config_hash,
    load_config,
    sac_config_from,
    set_key,
    sharing_config_from,
    validate_config,
)
from moda.harness.experiments import (
    run_pipeline,
    run_shared_count_sweep,
    run_sharing_comparison,
    run_sweep,
    run_variant_comparison,
    scarce_task,
)
from moda.harness.results import CSV_HEADER, ResultRow, emit_results, read_results

__all__ = [
    "CSV_HEADER",
    "ResultRow",
    "build_env_from_config",
    "build_grid",
    "build_tasks",
    "config_hash",
    "emit_results",
    "load_config",
    "read_results",
    "run_pipeline",
    "run_shared_count_sweep",
    "run_sharing_comparison",
    "run_sweep",
    "run_variant_comparison",
    "sac_config_from",
    "scarce_task",
    "set_key",
    "sharing_config_from",
    "validate_config",
]
