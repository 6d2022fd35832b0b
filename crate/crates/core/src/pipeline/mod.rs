//! End-to-end tracker: backbone, similarity fusion, voting, proposals and
//! the tracking loop.

pub mod backbone;
pub mod inspect;
pub mod model;
pub mod proposals;
pub mod similarity;
pub mod tracker;
pub mod voting;

pub use backbone::{Backbone, BackboneConfig, LevelConfig};
pub use inspect::{dump_attention, AttentionDump, AttentionStage};
pub use model::{FrameInput, FrameRegressor, ModelConfig, NetOutput, OffsetStub, OracleStub, PttNet, PttPlacement};
pub use proposals::{select_box, BoxOffset, Proposal, ProposalConfig, ProposalHead};
pub use similarity::{cosine_similarity, Similarity};
pub use tracker::{
    build_search_area, build_template, track_all, track_sequence, FrameTiming, SearchArea, SearchPolicy, Template,
    TemplatePolicy, TraceRecord, TrackResult, TrackerConfig,
};
pub use voting::{Vote, VoteHead, VoteOutput};
