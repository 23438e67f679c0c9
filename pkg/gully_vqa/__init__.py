# ///////////////////////////////////////////////////////////////
#
# gully-vqa: ephemeral gully detection from temporal aerial image
# stacks with vision-language models.
#
# ///////////////////////////////////////////////////////////////

# SETTINGS
from .settings import Settings

# ERRORS
from .errors import GullyError

# DATASET / IMAGES
from .dataset import Dataset, Label, Location, Split, ingest
from .collage import Collage, build_collage, compose

# QUESTIONS / PROMPTS
from .questions import BANK, PRESETS, QuestionSet, parse_question_set, preset, top_k

# BACKEND
from .backend import ChatClient, MockScript, ResponseCache, SendPolicy, make_client

# PIPELINES
from .pipeline import (
    AnswerVector,
    ModelHandle,
    PipelineKind,
    PipelineRunner,
    Prediction,
    Verdict,
    parse_verdict,
)

# EVALUATION
from .evaluation import ConfusionMatrix, MetricsReport, confusion, metrics, yes_histogram

__version__ = "1.0.0"
