mod fisher;
mod gershgorin;
mod landscape;
mod pca;

pub use fisher::{fim_histogram, fisher_mae, histogram, kf_fisher_diag, true_fisher_diag_mc, Histogram};
pub use gershgorin::{eigen_shift, gershgorin_report, perturb_offdiag, snr_offdiag, EigenShift, GershgorinReport};
pub use landscape::{landscape_export, Grid, LandscapeExport, DEGENERATE_PAD, GRID_POINTS};
pub use pca::{pca2, Pca2};
