"""cyclebench: battery test-data ingestion, statistics, and analysis."""

__version__ = "0.1.0"
