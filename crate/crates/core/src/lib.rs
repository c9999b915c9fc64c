//! Behavioral simulation of HfOx RRAM cells programmed with weak-RESET pulses,
//! 2T2R differential synapse arrays built from them, and a binarized neural
//! network trainer whose weight updates are integer pulse counts.

pub mod array;
pub mod device;
pub mod rng;
pub mod stats;
pub mod trainer;
pub mod trajectory;
pub mod variability;

pub use array::{PulseCommand, Side, SynapseArray, SynapsePair};
pub use device::{
    CycleNoiseParams, Device, DeviceParams, DeviceState, MeanModelParams, ModelOptions, NoiseModel,
};
pub use rng::{SeedPolicy, StreamPurpose};
pub use variability::{D2DConfig, DistributionSpec, ParamSource};
