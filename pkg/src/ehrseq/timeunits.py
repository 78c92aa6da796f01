"""Millisecond time constants shared across the pipeline."""

HOUR_MS = 3_600_000
DAY_MS = 24 * HOUR_MS
