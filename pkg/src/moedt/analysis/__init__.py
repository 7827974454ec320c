from .gradients import (AgreementVector, GradientReport, SimilarityResult,
                        agreement_vectors, gradient_similarity,
                        per_task_gradients)
from .grouping import (GroupAssignment, adjusted_rand_index, kmeans_grouping,
                       lloyd_kmeans, random_grouping)
from .subsets import family_quotas, task_subset_sampler

__all__ = [
    "AgreementVector", "GradientReport", "GroupAssignment", "SimilarityResult",
    "adjusted_rand_index", "agreement_vectors", "family_quotas",
    "gradient_similarity", "kmeans_grouping", "lloyd_kmeans",
    "per_task_gradients", "random_grouping", "task_subset_sampler",
]
