//! Reconstruction-error scoring, ROC/AUC, thresholds and summary tables.

pub mod compare;
pub mod report;
pub mod roc;
pub mod score;
pub mod summary;

pub use compare::{auc_table, channel_auc, compare_methods, AucCell, AucStat};
pub use roc::{flagged_fraction, pick_threshold, roc_auc, RocCurve};
pub use score::{score, AnomalyScore, Identity, ModuleEnsemble, Reconstructor, ScoreMode, ScoreSet, TrainedModel};
pub use summary::{box_stats, density, quantile, summarize, BoxStats, Summary};
