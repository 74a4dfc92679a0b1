import logging
import os
from typing import Annotated, List, Optional

from pydantic import field_validator
from pydantic_settings import BaseSettings, NoDecode, SettingsConfigDict

from .errors import ConfigurationError


def _parse_float_list(v, name: str):
    """Accept comma-separated strings from env files as well as real lists."""
    if v is None:
        raise ValueError(f"{name} must not be empty")
    if isinstance(v, str):
        cleaned = [item.strip() for item in v.strip().strip("[]").split(",") if item.strip()]
        if not cleaned:
            raise ValueError(f"{name} must contain at least one value")
        return [float(item) for item in cleaned]
    if isinstance(v, (list, tuple)):
        return [float(item) for item in v]
    logging.error(f"Unexpected {name} type: {type(v)}")
    raise ValueError(f"{name} must be a list or a comma-separated string")


class Settings(BaseSettings):
    """
    Simulator configuration.
    Every field can be overridden by an environment variable or a key-value env file.
    """

    # Application Info
    APP_NAME: str = "qanomaly"
    APP_VERSION: str = "1.0.0"

    # Environment Configuration
    ENVIRONMENT: str = "development"  # development, production

    # Units
    HBAR: float = 1.0
    RHO: float = 1.0  # density of states; level spacing 1/RHO
    LAMBDA: float = 1.0

    # Random-matrix model
    MATRIX_DIM: int = 1024
    BAND_MIN: int = 1
    BAND_MAX: int = 50
    DIAG_JITTER: bool = False
    DEGENERACY_GAP: float = 1e-10
    FROZEN_GAP_FLOOR: float = 1.0  # in mean level spacings; 0 keeps the bare 1/(E_n - E_m)

    # Sweeps
    S0_LIST: Annotated[List[float], NoDecode] = [0.5, 1.0, 1.5]
    FIG1_FDOT_LIST: Annotated[List[float], NoDecode] = [5.0, 12.0]
    FIG2_FDOT_LIST: Annotated[List[float], NoDecode] = [1.2, 2.4, 4.9, 9.8, 19.8, 40.0]
    QUENCH_EPS_LIST: Annotated[List[float], NoDecode] = [0.5, 0.7, 1.0, 1.4]
    KUBO_EPS_LIST: Annotated[List[float], NoDecode] = [1.0, 5.0, 12.0]

    # Ensemble execution
    REALIZATIONS: int = 16
    MASTER_SEED: int = 20100301
    WORKERS: int = 1
    RETRY_ATTEMPTS: int = 2
    OUTPUT_DIR: str = "results"

    # Time grid and integrator
    T_MAX_FACTOR: float = 10.0
    SAMPLE_POINTS: int = 40
    STEP_FRACTION: float = 0.05
    STEP_CAP: float = 0.02
    NORM_TOLERANCE: float = 1e-8
    EDGE_TOLERANCE: float = 1e-6
    MEASUREMENT_BASIS: str = "adiabatic"  # adiabatic, unperturbed
    INITIAL_STATE: str = "adiabatic"  # adiabatic, site

    # Analysis
    FIT_WINDOW_LO: float = 2.0
    FIT_WINDOW_HI: float = 8.0
    SPECTRAL_BIN_WIDTH: float = 1.0
    SPECTRAL_REALIZATIONS: int = 200
    SPECTRAL_DIM: int = 256
    SPECTRAL_LAMBDA: float = 0.01

    # Logging Configuration
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    LOG_FILE: str = "qanomaly.log"
    LOG_MAX_BYTES: int = 1000000  # 1MB
    LOG_BACKUP_COUNT: int = 5
    ENABLE_FILE_LOGGING: bool = True
    ENABLE_CONSOLE_LOGGING: bool = True
    LOG_JSON: bool = False

    # Run registry
    ENABLE_RUN_REGISTRY: bool = True
    DATABASE_URL: str = "sqlite:///./qanomaly_runs.db"

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    @field_validator("ENVIRONMENT")
    @classmethod
    def validate_environment(cls, v):
        if v not in ["development", "production"]:
            raise ValueError("ENVIRONMENT must be development or production")
        return v

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v):
        if v not in ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]:
            raise ValueError("LOG_LEVEL must be a valid logging level")
        return v

    @field_validator("MEASUREMENT_BASIS")
    @classmethod
    def validate_measurement_basis(cls, v):
        if v not in ["adiabatic", "unperturbed"]:
            raise ValueError("MEASUREMENT_BASIS must be adiabatic or unperturbed")
        return v

    @field_validator("INITIAL_STATE")
    @classmethod
    def validate_initial_state(cls, v):
        if v not in ["adiabatic", "site"]:
            raise ValueError("INITIAL_STATE must be adiabatic or site")
        return v

    @field_validator("S0_LIST", "FIG1_FDOT_LIST", "FIG2_FDOT_LIST", "QUENCH_EPS_LIST", "KUBO_EPS_LIST", mode="before")
    @classmethod
    def parse_float_lists(cls, v, info):
        return _parse_float_list(v, info.field_name)

    @field_validator("BAND_MAX")
    @classmethod
    def band_positive(cls, v):
        if v < 1:
            raise ValueError("BAND_MAX must be at least 1")
        return v

    @property
    def log_level_int(self) -> int:
        return getattr(logging, self.LOG_LEVEL.upper())

    def to_env_lines(self) -> List[str]:
        """Render the resolved settings back into key-value lines."""
        lines = []
        for key, value in self.model_dump().items():
            if isinstance(value, list):
                value = ",".join(repr(float(item)) for item in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key}={value}")
        return lines


class DevelopmentSettings(Settings):
    ENVIRONMENT: str = "development"
    LOG_LEVEL: str = "DEBUG"


class ProductionSettings(Settings):
    ENVIRONMENT: str = "production"
    LOG_LEVEL: str = "INFO"
    LOG_JSON: bool = True


def get_settings(env_file: Optional[str] = None) -> Settings:
    env = os.getenv("ENVIRONMENT", "development").lower()
    cls = ProductionSettings if env == "production" else DevelopmentSettings

    if env_file is not None:
        if not os.path.exists(env_file):
            raise ConfigurationError(f"config file {env_file} not found")
        return cls(_env_file=env_file)
    return cls()


# Export the settings instance
settings = get_settings()


class LoggingConfig:
    def __init__(self, source: Settings):
        self.LEVEL = source.log_level_int
        self.FORMAT = source.LOG_FORMAT
        self.FILE = source.LOG_FILE
        self.MAX_BYTES = source.LOG_MAX_BYTES
        self.BACKUP_COUNT = source.LOG_BACKUP_COUNT
        self.ENABLE_FILE = source.ENABLE_FILE_LOGGING
        self.ENABLE_CONSOLE = source.ENABLE_CONSOLE_LOGGING
        self.JSON = source.LOG_JSON


class DatabaseConfig:
    def __init__(self, source: Settings):
        self.URL = source.DATABASE_URL
        self.ECHO = False


# Export individual configs for easy importing
log_config = LoggingConfig(settings)
db_config = DatabaseConfig(settings)
