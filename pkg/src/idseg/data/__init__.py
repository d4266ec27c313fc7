"""Dataset model, VIA ingestion, splitting and synthetic scenes."""

from .io import read_dataset, write_dataset, write_sample
from .raster import EmptyMaskWarning, rasterize_all, rasterize_polygon
from .split import DEFAULT_RATIOS, split_dataset, split_sizes
from .synth import (
    CardTemplate,
    GeneratorConfig,
    default_generator_config,
    generate_synthetic_sample,
    render_background,
    render_card_template,
)
from .types import (
    CaptureSource,
    CountryCard,
    PolygonAnnotation,
    PolygonValidationError,
    Sample,
    SampleMeta,
    Split,
    SplitAssignment,
    validate_mask,
)
from .via import ViaParseError, ViaProject, load_via_project, parse_via_project, to_via_project
