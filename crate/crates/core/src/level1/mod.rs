//! Fine-grained discrete-event simulator run inside each Level-1 instance.

mod instance;
mod queue;
mod routing;

pub use instance::{guidance_step, Guidance, L1Entity, L1Error, L1Instance, L1Params, StepStatus};
pub use queue::{EventQueue, QueueError, Tick};
pub use routing::{discover_route, GridScenario, NodeId, RouteEntry, RouteError, RouteTable, DEFAULT_RANGE_FACTOR};
