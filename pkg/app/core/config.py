from pydantic_settings import BaseSettings
from functools import lru_cache
from typing import Optional

class Settings(BaseSettings):
    app_name: str = "Network Feature Detection API"
    app_version: str = "1.0.0"
    debug: bool = False
    host: str = "0.0.0.0"
    port: int = 8000
    log_level: str = "INFO"

    # Red lineal
    merge_tol_factor: float = 1e-6  # fraccion de la diagonal del bounding box
    snap_tol: float = 10.0
    allow_empty: bool = False

    # Vecinos y volumenes
    k_max: int = 35
    default_k: int = 10
    min_volume: float = 1e-9
    threads: int = 1
    time_budget_s: Optional[float] = None

    # EM
    em_tol: float = 1e-8
    em_max_iter: int = 1000
    allow_degenerate: bool = False

    # Seleccion de K
    segmented_grid_step: float = 0.1

    # Simulacion
    seed: int = 2024
    max_expected_points: float = 1e8

    output_dir: str = "./data/output"
    allow_partial: bool = False

    class Config:
        env_file = ".env"
        env_prefix = "NETFEAT_"

@lru_cache()
def get_settings():
    return Settings()
