//! Center/partner message exchange for distributed Cox regression.

pub mod center;
pub mod codec;
pub mod error;
pub mod message;
pub mod partner;
pub mod transport;

pub use center::{orchestrate_center, CenterOptions, CenterRun, TrafficRecord};
pub use error::{ExchangeError, Result};
pub use message::{Kind, Message, Payload};
pub use partner::{orchestrate_partner, PartnerConfig, PartnerExit};
pub use transport::{Direction, Mode, Transport, TransportConfig};
