import os

from dotenv import load_dotenv

load_dotenv()


class Config:
    # Output
    OUTPUT_ROOT = os.getenv("TWOSCALE_OUTPUT_ROOT")

    # Runtime
    N_JOBS = int(os.getenv("TWOSCALE_N_JOBS", "1"))
    LOG_LEVEL = os.getenv("TWOSCALE_LOG_LEVEL", "INFO")

    @classmethod
    def output_root(cls, default):
        # re-read so a value exported after import still wins
        return os.getenv("TWOSCALE_OUTPUT_ROOT", cls.OUTPUT_ROOT) or default
