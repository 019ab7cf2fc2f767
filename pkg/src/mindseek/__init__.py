"""Query-free interactive retrieval from one-click feedback.

The engine keeps two coupled posteriors per session: which catalog item
the user is after, and which feature channel drives their judgments.  Each
click refines both; the next display is chosen to make the following click
maximally informative.
"""

from .bayes import (
    AuxiliaryState,
    ConvergenceError,
    Feedback,
    JointLikelihood,
    Posteriors,
    answer_likelihood,
    solve_posteriors,
    update_auxiliary,
    update_joint_oracle,
)
from .catalog import (
    AggregateSimilarityProvider,
    Catalog,
    CatalogError,
    FeatureChannel,
    Item,
    SimilarityProvider,
    filter_items,
    generate_catalog,
    load_catalog,
    save_catalog,
)
from .display import DisplaySet, expected_similarity, partition_entropy, select_display
from .session import Session, SessionConfig, SessionError, Status, start_session
from .simulate import (
    GameRecord,
    GameRunner,
    MetricsReport,
    UserModel,
    consistency_experiment,
    ideal_click,
    noisy_click,
    run_game,
    scaling_experiment,
    summarize,
    weight_experiment,
)

__version__ = "0.1.0"

__all__ = [
    "AggregateSimilarityProvider",
    "AuxiliaryState",
    "Catalog",
    "CatalogError",
    "ConvergenceError",
    "DisplaySet",
    "FeatureChannel",
    "Feedback",
    "GameRecord",
    "GameRunner",
    "Item",
    "JointLikelihood",
    "MetricsReport",
    "Posteriors",
    "Session",
    "SessionConfig",
    "SessionError",
    "SimilarityProvider",
    "Status",
    "UserModel",
    "answer_likelihood",
    "consistency_experiment",
    "expected_similarity",
    "filter_items",
    "generate_catalog",
    "ideal_click",
    "load_catalog",
    "noisy_click",
    "partition_entropy",
    "run_game",
    "save_catalog",
    "scaling_experiment",
    "select_display",
    "solve_posteriors",
    "start_session",
    "summarize",
    "update_auxiliary",
    "update_joint_oracle",
    "weight_experiment",
]
