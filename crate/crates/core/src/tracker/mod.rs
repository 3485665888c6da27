//! Joint detection and tracking: query decoder, set-prediction loss,
//! Hungarian matching, IoU association with track rebirth, inference session
//! and trainer.

mod assoc;
mod boxes;
mod decoder;
mod hungarian;
mod loss;
mod model;
mod session;
mod train;

pub use assoc::{Association, DetBox, Track, TrackSet, REBIRTH_WINDOW};
pub use boxes::{giou, iou, nms, Box};
pub use decoder::{logit, Decoder, DecoderLayer, DecoderOutput, BACKGROUND, DECODER_FFN_EXPANSION, OBJECT};
pub use hungarian::{hungarian, Assignment};
pub use loss::{giou_graph, match_cost, set_loss, training_loss, ClassLoss, LossConfig, LossWeights};
pub use model::{JdtModel, ModelConfig};
pub use session::{to_mot_records, track_sequence, Session, TrackedBox, TrackerConfig};
pub use train::{pair_loss, Augment, Clip, TrainConfig, Trainer};
