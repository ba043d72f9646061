//! Input vector spaces: embedding tables, the synthetic world that stands in
//! for pretrained visual and word vectors, and act encoding.

mod encode;
mod table;
mod world;

pub use encode::{
    encode_act, one_hot, shuffle_images, EncodeMode, EncodeOptions, EncodedAct, Encoder,
    ImagePermutation, Vocab,
};
pub use table::{
    load_compat, load_table, parse_compat, parse_table, write_compat, CompatMap, EmbeddingTable,
};
pub use world::{World, WorldConfig};
