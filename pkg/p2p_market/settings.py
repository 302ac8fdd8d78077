"""
Runtime settings read from the environment
"""
import os

from dotenv import load_dotenv
from pydantic import BaseModel, Field

# Load environment variables from .env file
load_dotenv()


class Settings(BaseModel):
    """Process-wide defaults, overridable through P2P_MARKET_* variables"""
    log_level: str = Field("INFO", description="Root log level for the CLI")
    max_iter: int = Field(20000, ge=1, description="Default ADMM iteration cap")
    output_dir: str = Field("out", description="Default output directory")
    inner_tol: float = Field(1e-10, gt=0, description="Jacobi stopping tolerance on max |dq|")
    inner_max: int = Field(5000, ge=1, description="Jacobi round cap")


def load_settings() -> Settings:
    """Build Settings from the current environment"""
    return Settings(
        log_level=os.getenv("P2P_MARKET_LOG_LEVEL", "INFO").upper(),
        max_iter=int(os.getenv("P2P_MARKET_MAX_ITER", "20000")),
        output_dir=os.getenv("P2P_MARKET_OUTPUT_DIR", "out"),
        inner_tol=float(os.getenv("P2P_MARKET_INNER_TOL", "1e-10")),
        inner_max=int(os.getenv("P2P_MARKET_INNER_MAX", "5000")),
    )


settings = load_settings()
