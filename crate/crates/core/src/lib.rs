//! Channel-pruning planner under a FLOPs budget.
//!
//! Given an architecture description, a target FLOPs budget and per-channel
//! importance statistics, the planner builds an over-pruned uniform backbone
//! and redistributes the withheld budget across groups of layers in
//! proportion to their importance.
//!
//! ```
//! use chanplan::{archgraph, costmodel};
//!
//! let graph = archgraph::parse_model(r#"{
//!     "input_shape": [3, 32, 32],
//!     "layers": [
//!         {"name": "data", "kind": "input"},
//!         {"name": "conv1", "kind": "conv", "out_channels": 16, "kernel": [3, 3], "predecessors": ["data"]},
//!         {"name": "gap", "kind": "global_pool", "predecessors": ["conv1"]},
//!         {"name": "fc", "kind": "linear", "out_channels": 10, "predecessors": ["gap"]}
//!     ]
//! }"#).unwrap();
//! assert_eq!(costmodel::total_cost(&graph).flops, 442_368 + 160);
//! ```

pub mod archgraph;
pub mod cli;
pub mod costmodel;
pub mod error;
pub mod grouping;
pub mod importance;
pub mod reallocate;

pub use archgraph::{
    apply_channel_config, parse_model, scale_uniform, ChannelConfig, LayerKind, LayerSpec, ModelGraph,
};
pub use costmodel::{layer_cost, total_cost, ResourceCount};
pub use error::{Error, ErrorCode, Result};
pub use grouping::{couple_channels, partition_groups, CouplingClasses, GroupPartition};
pub use importance::{group_importance, load_stats, Criterion, GroupImportance, ImportanceReport};
pub use reallocate::{
    apply_policy, build_backbone, expand_groups, plan, AllocationPlan, ImportanceProvider, PlanRequest, Policy,
    ResourcePool, StaticReport,
};
