# Performance Test Utilities
import time


class catch_time:
    """Wall time of a block in seconds; prints a readout on exit"""

    def __init__(self, label: str = ""):
        self.label = label

    def __enter__(self):
        self.time = time.perf_counter_ns()
        return self

    def __exit__(self, ex_type, ex_value, traceback):
        self.time = time.perf_counter_ns() - self.time
        self.seconds = self.time / 1e9
        self.readout = f"{self.label} time: {self.seconds:.2f} s".strip()
        print(self.readout)
