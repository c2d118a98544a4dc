from .evaluation_service import ABLATION_VARIANTS, EvaluationService
from .generation_service import GenerationService
from .inversion_service import InversionService
from .training_service import TrainingResult, TrainingService

__all__ = [
    "ABLATION_VARIANTS",
    "EvaluationService",
    "GenerationService",
    "InversionService",
    "TrainingResult",
    "TrainingService",
]
