//! Synthetic guided-wave acquisitions, band-pass filtering and grayscale encoding.

pub mod encode;
pub mod filter;
pub mod synth;
pub mod tone;

pub use encode::{augment, build_domain, encode_grayscale, GrayscaleImage};
pub use filter::{butterworth_bandpass, BandPass};
pub use synth::{acquire, median_stack, synth_acquisition, Network, PlateScenario, Point, SignalSet};
pub use tone::{tone_burst, ToneBurstConfig};
