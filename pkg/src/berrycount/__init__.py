"""Berry detection and counting from berry/edge/background segmentation masks.

Typical library use::

    from berrycount import (PipelineConfig, OracleBackend, detect_image,
                            evaluate_detection, generate_labels)

See ``berrycount.cli`` for the command line front end.
"""
from importlib import resources

from .annotation import DotAnnotations, instances_from_color_annotation, load_dots
from .classify import MaskFileBackend, NoisyOracleBackend, OracleBackend, make_backend
from .components import BerryComponent, label_components
from .config import PipelineConfig, load_config
from .errors import (AnnotationError, BerryCountError, ConfigError, GenerationError,
                     UndefinedFitError, ValidationError)
from .labelgen import LabelGenConfig, generate_labels
from .masks import ClassMask, InstanceMask, Label
from .metrics import count_regression, detection_eval, iou
from .pipeline import detect_image, evaluate_detection
from .postfilter import FilterConfig, apply_filters
from .synth import SceneConfig, generate_scene
from .tiling import extract, plan_grid, stitch_majority

__version__ = "0.1.0"


def eval_report_schema() -> dict:
    """The JSON schema shipped for ``eval_report.json``."""
    import json
    return json.loads(resources.files(__name__).joinpath("schemas/eval_report.schema.json").read_text())
