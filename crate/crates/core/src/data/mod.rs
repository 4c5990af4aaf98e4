//! Data sources: a Gaussian mixture with a closed-form Bayes posterior,
//! Dirichlet label-shift generation, relaxed-shift perturbation and IDX
//! (MNIST) ingestion.

mod idx;
mod mixture;
mod shift;

pub use idx::{
    encode_idx_images, encode_idx_labels, idx_dataset, load_idx, load_idx_with_classes, parse_idx_images,
    parse_idx_labels, IMAGE_MAGIC, LABEL_MAGIC, MNIST_CLASSES,
};
pub use mixture::{
    gen_gaussian_mixture, gen_gaussian_mixture_counts, posterior_matrix, true_posterior, GaussianMixtureSpec,
};
pub use shift::{
    draw_shifted_mixture, draw_shifted_pool, perturb_relaxed, resample_by_marginal, sample_dirichlet_marginal,
    RelaxedShiftSpec, ShiftSpec, ShiftedSample,
};
