//! Ranking metrics, significance tests, score fusion and reports.

mod combiner;
mod metrics;
mod report;
mod ttest;

pub use combiner::{
    evaluate_features, feature_groups, train_combiner, Combiner, CombinerConfig, FeatureGroup, FeatureRow,
};
pub use metrics::{compute_metrics, evaluate, rank_group, MetricsReport};
pub use report::{read_per_query, render_table, write_metrics_csv, write_per_query};
pub use ttest::{align, paired_t_test};
