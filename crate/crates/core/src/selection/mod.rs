//! Greedy feature-block selection and importance analytics.

pub mod greedy;
pub mod importance;

pub use greedy::{
    greedy_select, initial_configuration, order_blocks, Action, GreedyConfig, ProtocolLoss, SelectionLoss,
    SelectionTrace, StartPolicy, Toggle, TraceEntry,
};
pub use importance::{
    gini, importance_report, jaccard, overlap_table, parse_importance_csv, rank_by_rie, rbo, render_summary,
    write_heatmap_csv, write_overlap_csv, BlockImportance, ImportanceReport, OverlapRow, Rie, SelectionSummary,
    TaskSelection, RBO_PERSISTENCE,
};
