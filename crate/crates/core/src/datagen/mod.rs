//! Reference-act datasets: record types, the Object-Only and Object+Attribute
//! generators, JSONL serialization and frequency statistics.

mod act;
mod generate;
mod jsonl;
mod stats;

pub use act::{validate_act, AnomalyKind, Gold, Item, Query, ReferenceAct};
pub use generate::{
    generate_range, generate_split, object_attr_act, object_only_act, stream, ActStream,
    DatasetSpec, Split, Task,
};
pub use jsonl::{read_jsonl, read_jsonl_from, write_jsonl, write_jsonl_to};
pub use stats::{dataset_stats, summarize, ComboRow, DatasetStats, SplitSummary};
