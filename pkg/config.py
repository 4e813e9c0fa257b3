import os
from dataclasses import dataclass
from pathlib import Path

BASE_DIR = Path(__file__).resolve().parent


@dataclass
class Config:
    """Конфигурация процесса unity"""

    # Каталоги с золотыми файлами
    descriptor_dir: str = str(BASE_DIR / "descriptors")
    scenario_dir: str = str(BASE_DIR / "scenarios")

    # Результаты
    out_dir: str = "./results"
    log_file: str = "unity.log"
    log_level: str = "INFO"

    # Прогоны
    default_seed: int = 1
    jobs: int = 1

    def __post_init__(self):
        """Переопределение из окружения и создание каталога результатов"""
        self.out_dir = os.environ.get("UNITY_OUT_DIR", self.out_dir)
        self.log_level = os.environ.get("UNITY_LOG_LEVEL", self.log_level).upper()
        self.jobs = max(1, int(os.environ.get("UNITY_JOBS", self.jobs)))

        os.makedirs(self.out_dir, exist_ok=True)
