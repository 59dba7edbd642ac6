"""Error-type focused LLM assessment of meeting summaries.

Core pieces: an eight-type error taxonomy with importance weights, a
three-step per-type evaluation pipeline with optional multi-agent debate,
confidence-weighted impact/quality aggregation, a self-training feedback
loop against human annotations, and the statistics needed to compare the
evaluator with human judgments.
"""

from .aggregate import DegenerateWeightsError, WeightedRating, impact_score, quality_score, scale_confidence
from .assessor import (
    AssessmentConfig,
    AssessmentFailedError,
    ErrorTypeAssessment,
    SummaryEvaluation,
    assess_error_type,
    assess_sample,
    load_predictions,
    multi_aspect_assess,
    predicted_existence,
    save_predictions,
    single_step_assess,
)
from .calibrate import (
    DiscrepancyLabel,
    FeedbackItem,
    FeedbackReport,
    consolidate_feedback,
    discrepancy_label,
    judge_reasoning,
    load_feedback,
    run_self_training_iteration,
    save_feedback,
)
from .dataset import DatasetStats, HumanAnnotation, MeetingSample, dataset_stats, load_dataset, save_dataset
from .debate import AgentSpec, DebateFailedError, DiscussionTranscript, default_rosters, run_debate
from .errors import SchemaError, SumassessError
from .gateway import (
    CacheMissError,
    CompletionRequest,
    CompletionResponse,
    Fixture,
    FixtureMissError,
    Gateway,
    LiveBackend,
    Message,
    ProviderError,
    ReplayBackend,
    cache_key,
    scripted_backend,
)
from .metrics import (
    ConfusionCounts,
    CorrelationResult,
    ReliabilityMatrix,
    UndefinedCorrelationError,
    balanced_accuracy,
    kendall_tau,
    krippendorff_alpha,
    likert_gap,
    point_biserial,
    run_variance,
    spearman,
)
from .prompt_kit import (
    CandidateInstance,
    InstanceVerdict,
    ParseError,
    PromptTemplate,
    StepThreeVerdict,
    ValidationError,
    parse_structured,
    render_step1,
    render_step2,
    render_step3,
)
from .rouge import RougeScore, rouge_l, rouge_n, tokenize
from .taxonomy import (
    ErrorGuideline,
    ErrorType,
    GuidelineSet,
    default_guidelines,
    load_guidelines,
    parse_error_code,
)

__version__ = "0.1.0"
