"""
Celery Tasks for multi-seed experiments

- run_seed_pipeline: generate -> train -> probe -> evaluate for one seed
- aggregate_seed_reports: mean and standard error over finished seeds

Arguments are plain JSON values so the tasks run unchanged on a real
broker; with CELERY_TASK_ALWAYS_EAGER (the default) they run in-process.
"""

import logging

from celery import shared_task

from bench import pipeline

logger = logging.getLogger(__name__)


@shared_task
def run_seed_pipeline(payload, seed, output_dir, objective=None):
    """
    Run every stage of one seed into its own experiment directory.
    Returns the directory and the headline numbers of the evaluation.
    """
    config = pipeline.load_config(payload=payload, seed=seed, output_dir=output_dir, objective=objective)
    logger.info("Seed %d: %s into %s", config.seed, config.ssl.objective, config.output_dir)

    pipeline.cmd_generate(config)
    pipeline.cmd_train(config)
    pipeline.cmd_probe(config)
    summary = pipeline.cmd_evaluate(config)
    return {'seed': config.seed, **summary}


@shared_task
def aggregate_seed_reports(directories, output_dir, expected_sweep=None):
    return pipeline.cmd_aggregate(directories, output_dir, expected_sweep)
