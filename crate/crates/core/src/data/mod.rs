//! Image and movie-table ingestion, preprocessing, and synthetic fixtures.

mod images;
mod movies;
pub mod synth;
mod text;

pub use images::{
    load_image_splits, load_images, ArchiveLayout, ChannelStats, ImageBatch, ImageDatasetHandle, ImageSet, Split,
    IMAGE_CHANNELS, IMAGE_SIDE,
};
pub use movies::{
    encode_group, load_movies, split_by_year, FeatureGroup, FeatureMatrix, GroupEncoder, LoadReport, Manifest,
    MovieTable, SplitCounts, MAX_TEXT_FEATURES, TRAIN_YEARS,
};
pub use text::{tokenize, Tfidf};
