//! Learned-image-compression style codec built around a Gaussian mixture
//! entropy model with a masked-convolution context, plus MS-SSIM metrics and a
//! per-image rate allocator.

pub mod allocator;
pub mod codec;
pub mod context;
pub mod error;
pub mod gmm;
pub mod metrics;
pub mod model;
pub mod model_file;
pub mod range_coder;
pub mod tensor;
pub mod transform;

pub use allocator::{Allocation, AllocationProblem, ImageOptions, RdPoint, Summary};
pub use codec::{BitstreamContainer, Decoded, EncodeOptions, Encoded, PayloadRate, RateReport};
pub use context::{EntropyParamWeights, HyperFeatureTensor, MaskedConvWeights};
pub use error::{Error, Result};
pub use gmm::{GmmParamTensor, GmmParams, SymbolAlphabet};
pub use metrics::{MsSsimConfig, RdReport};
pub use model::{CodecModel, HyperModel};
pub use range_coder::{Bitstream, QuantizedCdf};
pub use tensor::{LatentTensor, Shape, Tensor3};
pub use transform::{BlockTransform, ImagePlane};
