//! Pure algorithmic core of `picsearch`, a local text-to-image search engine.
//!
//! A query is answered in three steps. A zero-shot detector is run on
//! randomly drawn catalog images until it finds the prompted object above a
//! confidence threshold; the winning box is cropped out and embedded with a
//! feature extractor; the crop's embedding is then compared against a
//! precomputed index of catalog embeddings by cosine similarity.
//!
//! This crate holds everything in that chain that does not touch the
//! filesystem or a model runtime: image buffers, preprocessing, catalog
//! diffing, the feature index and its on-disk codec, ranking, detection
//! selection, the query loop, evaluation metrics and a deterministic stub
//! backend. It is `no_std` and only needs `alloc`.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod backend;
pub mod catalog;
pub mod codec;
pub mod detect;
pub mod eval;
pub mod image;
pub mod index;
pub mod preprocess;
pub mod query;
pub mod stub;
pub mod vector;

pub use backend::{BackendError, Detector, FeatureExtractor};
pub use catalog::{diff_catalog, CatalogEntry, CatalogSnapshot, ChangeSet, ContentHash};
pub use detect::{best_detection, BBox, Detection};
pub use image::{crop, RgbImage};
pub use index::{FeatureIndex, QueryProvenance, RankedItem, RankedResults};
pub use preprocess::{preprocess, ChannelOrder, ImageTensor, PreprocessSpec, ResizeMode};
pub use query::{select_query_image, QueryCrop, QueryError, QuerySpec};
pub use vector::{cosine_similarity, FeatureVector, VectorError};
