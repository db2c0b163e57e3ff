//! Small-footprint keyword spotting: log-mel frontend, convolutional and
//! fully connected acoustic models, compute/parameter budgeting, training,
//! posterior handling and a single-file model format.

pub mod arch;
pub mod budget;
pub mod error;
pub mod frontend;
pub mod model_io;
pub mod posterior;
pub mod tensor;
pub mod train;

pub use arch::{builtin, forward, ArchSpec, ArchTemplate, ConvPath, LayerSpec, WeightSet};
pub use budget::{compare, fit_to_budget, report, BudgetReport, LayerCost};
pub use error::{ErrorClass, KwsError, Result};
pub use frontend::{ContextConfig, FeatureWindow, FrameConfig, Frontend, Waveform};
pub use model_io::Model;
pub use posterior::{detect, DetectionEvent, DetectorConfig, PosteriorFrame, StreamingDetector};
pub use tensor::{Dims3, Scalar, Tensor3};
pub use train::{train, LabeledExample, TrainConfig};
